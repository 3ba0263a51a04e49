#pragma once

// Phase-space fields on a rectangular (x, p) grid: Wigner functions of
// density matrices, weighted particle histograms, and the metrics that
// compare them.

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qtrack/classical.hpp"
#include "qtrack/fock.hpp"
#include "qtrack/sme.hpp"

namespace qtrack {

/// nx x np points from (x_min, p_min) to (x_max, p_max) inclusive.
struct PhaseSpaceGrid {
    double x_min = -6.0;
    double x_max = 6.0;
    double p_min = -6.0;
    double p_max = 6.0;
    int nx = 201;
    int np = 201;

    double dx() const { return (x_max - x_min) / (nx - 1); }
    double dp() const { return (p_max - p_min) / (np - 1); }
    double x(int i) const { return x_min + i * dx(); }
    double p(int j) const { return p_min + j * dp(); }
    double cell_area() const { return dx() * dp(); }

    std::vector<std::string> violations() const;
    void validate() const;

    bool operator==(const PhaseSpaceGrid&) const = default;
};

enum class FieldMode { Wigner, Pdf };

const char* to_string(FieldMode mode);

class PhaseSpaceField {
public:
    /// values(i, j) is the field at (grid.x(i), grid.p(j)).
    PhaseSpaceField(PhaseSpaceGrid grid, FieldMode mode, Eigen::MatrixXd values);

    const PhaseSpaceGrid& grid() const { return grid_; }
    FieldMode mode() const { return mode_; }
    const Eigen::MatrixXd& values() const { return values_; }
    double operator()(int i, int j) const { return values_(i, j); }

    /// sum(values) * dx * dp
    double mass() const;
    double normalization_residual() const { return mass() - 1.0; }

    /// Histogram bookkeeping: weight and count of particles outside the grid.
    double out_of_bounds_mass = 0.0;
    std::size_t out_of_bounds_count = 0;

private:
    PhaseSpaceGrid grid_;
    FieldMode mode_;
    Eigen::MatrixXd values_;
};

/// Wigner tolerance on sum(W) dx dp.
inline constexpr double kWignerNormTol = 1e-2;
/// Pdf tolerance on sum(P) dx dp.
inline constexpr double kPdfNormTol = 1e-9;

/// W(x,p) = (1/pi) sum_mn rho_mn W_nm(x,p) with the Fock kernels written as
/// associated Laguerre functions of 2(x^2 + p^2), evaluated by a normalized
/// three-term recurrence. Convention: W(x,p) = 1/(2 pi) int dz
/// <x - z/2|rho|x + z/2> exp(i p z), so the ground state gives exp(-x^2-p^2)/pi.
PhaseSpaceField wigner(const DensityMatrix& rho, const PhaseSpaceGrid& grid);

/// True when |mass - 1| is within the mode's tolerance.
bool normalization_ok(const PhaseSpaceField& field);

/// Adds each particle weight to the cell containing it, divided by dx dp.
/// Cell i spans [x(i) - dx/2, x(i) + dx/2), lower edge inclusive.
PhaseSpaceField ensemble_field(const ParticleEnsemble& ensemble, const PhaseSpaceGrid& grid);

/// Negative values clipped to zero, then rescaled to unit mass. Throws
/// InvalidArgument if nothing positive remains.
PhaseSpaceField positive_part(const PhaseSpaceField& field);

/// Rescales a non-negative field to unit mass (e.g. an in-bounds histogram).
PhaseSpaceField renormalized(const PhaseSpaceField& field);

struct KlOptions {
    /// P2 is floored at floor_mass / (dx dp) before taking the log.
    double floor_mass = 1e-12;
    /// Both inputs must integrate to 1 within this tolerance.
    double normalization_tol = 1e-6;
};

/// Floor density used for a grid.
double kl_floor(const PhaseSpaceGrid& grid, const KlOptions& options = {});

/// sum_ij P1 ln(max(P1, floor) / max(P2, floor)) dx dp; cells with P1 = 0
/// contribute 0.
double kl_divergence(const PhaseSpaceField& p1, const PhaseSpaceField& p2,
                     const KlOptions& options = {});

struct ErrorStats {
    double sigma_x = 0.0;
    double sigma_p = 0.0;
    std::size_t samples = 0;
};

/// Population standard deviation of (truth - estimate) for x and p over
/// entries [discard, size).
ErrorStats trajectory_error_stats(const TrajectoryLog& truth, const TrajectoryLog& estimate,
                                  std::size_t discard);

void write_field_csv(std::ostream& os, const PhaseSpaceField& field);
/// Reads the CSV written above; the grid is inferred from the coordinates.
PhaseSpaceField read_field_csv(std::istream& is, FieldMode mode);
/// Little-endian binary: "QTPF", version, mode, nx, np, bounds,
/// normalization residual, then nx*np doubles in row (x-major) order.
void write_field_binary(std::ostream& os, const PhaseSpaceField& field);
PhaseSpaceField read_field_binary(std::istream& is);

}  // namespace qtrack
