#pragma once

// Stochastic master equation for the feedback-cooled Duffing oscillator
// under continuous position measurement. One integrator serves both the
// truth simulation (which emits the measurement record) and the
// conditional estimator (which consumes it through the innovation).

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qtrack/banded.hpp"
#include "qtrack/fock.hpp"

namespace qtrack {

struct MeasurementRecord {
    double dt = 0.0;
    std::vector<double> increments;  ///< dy(t_i), one per step
    std::uint64_t seed = 0;
    std::string params_hash;

    std::size_t length() const { return increments.size(); }
};

struct DensitySnapshot {
    std::size_t step;
    DensityMatrix rho;
};

/// Per-step expectations of a trajectory. The initial point is entry 0, so a
/// run of n steps holds n + 1 entries. `purity` is empty for classical
/// estimates.
struct TrajectoryLog {
    std::vector<double> times;
    std::vector<double> mean_x;
    std::vector<double> mean_p;
    std::vector<double> purity;
    std::vector<DensitySnapshot> snapshots;

    std::size_t size() const { return times.size(); }
    void reserve(std::size_t n);
    void append(double t, double x, double p);
    void append(double t, double x, double p, double pur);
};

struct IntegrationOptions {
    /// Observer/retention interval in steps; 0 disables snapshots.
    std::size_t snapshot_every = 100;
    /// Retain snapshots in TrajectoryLog::snapshots. Off by default: a
    /// 120-level state is ~230 kB.
    bool keep_snapshots = false;
    std::function<void(std::size_t step, const DensityMatrix&)> observer;
    /// Cholesky positivity check after every step (throws on failure).
    bool check_positivity = false;
};

/// How rouchon_step interprets its increment.
enum class StepMode {
    Truth,     ///< increment is the Wiener noise dW; dy is formed internally
    Estimate,  ///< increment is the recorded dy
};

/// H = p^2/2 + (1 + alpha sin 2phi)(x^2/2 + gamma x^4/4) + Gamma/4 (xp + px)
OperatorMatrix build_hamiltonian(const ModelParams& params, double phi);

struct ThermalOps {
    OperatorMatrix v1;  ///< sqrt((n+1) omega/Q) a
    OperatorMatrix v2;  ///< sqrt(n omega/Q) a^dagger
};
ThermalOps build_thermal_ops(double n_bar, double omega, double q, int dim);

/// atan2(<p>, <x>) in (-pi, pi]; zero when both expectations vanish.
double feedback_phase(double mean_x, double mean_p);
double feedback_phase(const DensityMatrix& rho);

/// Positivity-preserving step. The Hamiltonian acts through the Cayley
/// transform U = (I + iH dt/2)^{-1}(I - iH dt/2), which is exactly unitary
/// however large the truncated spectrum of H is, and the measurement and
/// environment then act through the Kraus map
///   M = exp(-K dt/2) - 1/2 L^dag L dt + sqrt(eta) L dy + eta/2 L^2 (dy^2 - dt)
///   rho' ~ M rho_u M^dag + (1 - eta) L rho_u L^dag dt
///          + sum W rho_u W^dag dt + dt^2/2 sum_ij V_i V_j rho_u (V_i V_j)^dag
/// on rho_u = U rho U^dag, with K = sum V^dag V (diagonal for the thermal
/// pair), W = exp(-K dt/4) V exp(-K dt/4) and L = sqrt(2k) x so that
/// dy = sqrt(8 k eta) <x> dt + dW. The environment part is second order in
/// dt; to first order the whole map is the single Kraus operator
/// I + (-iH - 1/2 K - 1/2 L^dag L) dt + ... applied to rho.
class RouchonIntegrator {
public:
    explicit RouchonIntegrator(const ModelParams& params);

    const ModelParams& params() const { return params_; }
    int dim() const { return params_.dim; }

    DensityMatrix step(const DensityMatrix& rho, double increment, StepMode mode);

    double mean_x(const DensityMatrix& rho) const;
    double mean_p(const DensityMatrix& rho) const;
    /// sqrt(8 k eta), the gain between <x> dt and the record.
    double record_gain() const { return record_gain_; }

private:
    ModelParams params_;
    double record_gain_;
    BandedOperator x_;
    BandedOperator p_;
    BandedOperator h_static_;     // p^2/2 + Gamma/4 (xp+px)
    BandedOperator trap_;         // x^2/2 + gamma x^4/4
    BandedOperator dissipative_;  // (exp(-K dt/2) - I) - 1/2 L^dag L dt, K = sum V^dag V
    BandedOperator cayley_;       // I + iH dt/2
    BandedLU cayley_lu_;
    BandedOperator meas_;              // L
    BandedOperator meas_sq_;           // L^2
    // exp(-K dt/4) V exp(-K dt/4), and the products V_i V_j for double jumps
    std::vector<BandedOperator> jumps_;
    std::vector<BandedOperator> double_jumps_;
    BandedOperator kraus_;
    ComplexMatrix scratch_;
    ComplexMatrix out_;
    ComplexMatrix work_t_;
    ComplexMatrix adj_t_;
    ComplexMatrix rotated_;
};

/// Single step with a freshly built integrator. Prefer RouchonIntegrator in loops.
DensityMatrix rouchon_step(const DensityMatrix& rho, const ModelParams& params,
                           double increment, StepMode mode);

/// Conditional state driven by a record, one increment at a time.
class ConditionalEstimator {
public:
    ConditionalEstimator(const ModelParams& params, DensityMatrix initial);

    void update(double dy);
    const DensityMatrix& state() const { return rho_; }
    double mean_x() const { return mean_x_; }
    double mean_p() const { return mean_p_; }
    double innovation() const { return innovation_; }

private:
    RouchonIntegrator integrator_;
    DensityMatrix rho_;
    double mean_x_;
    double mean_p_;
    double innovation_ = 0.0;
};

struct TruthRun {
    TrajectoryLog log;
    MeasurementRecord record;
};

/// Draws dW ~ N(0, dt) per step, records dy = sqrt(8 k eta) <x> dt + dW and
/// advances the truth state. Deterministic for a given seed.
TruthRun simulate_truth(const ModelParams& params, const DensityMatrix& initial, std::size_t steps,
                        std::uint64_t seed, const IntegrationOptions& options = {});

/// Runs the conditional SME over `record`. Starts from `initial`, or from the
/// maximally mixed state when none is given.
TrajectoryLog estimate_conditional(const MeasurementRecord& record, const ModelParams& params,
                                   const std::optional<DensityMatrix>& initial = std::nullopt,
                                   const IntegrationOptions& options = {});

std::string params_hash(const ModelParams& params);

void write_record_csv(std::ostream& os, const MeasurementRecord& record);
MeasurementRecord read_record_csv(std::istream& is);
void write_log_csv(std::ostream& os, const TrajectoryLog& log);
TrajectoryLog read_log_csv(std::istream& is);

}  // namespace qtrack
