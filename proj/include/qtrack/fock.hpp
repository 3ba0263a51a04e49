#pragma once

// Truncated harmonic-oscillator (Fock) basis: operators, density matrices
// and the model parameters shared by every other module.

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qtrack {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

/// Scaled model parameters (m = omega = hbar = 1 unless omega is overridden).
struct ModelParams {
    double k = 0.05;         ///< measurement strength
    double eta = 1.0;        ///< measurement efficiency, (0, 1]
    double gamma = 0.1;      ///< quartic nonlinearity
    double damping = 0.125;  ///< Gamma = 1/Q
    double kbt = 2.0;        ///< environment temperature in units of hbar*omega
    double alpha = 0.05;     ///< feedback amplitude
    double omega = 1.0;
    double dt = 0.001;
    int dim = 120;           ///< Fock truncation

    double quality_factor() const { return 1.0 / damping; }

    /// Human-readable list of broken invariants; empty when valid.
    std::vector<std::string> violations() const;
    /// Throws InvalidArgument listing every violation.
    void validate() const;
    /// Stable textual form (17 significant digits) used for hashing.
    std::string canonical_string() const;
};

/// Complex square matrix in the Fock basis (H, x, p, a, a^dagger, L, V_j).
class OperatorMatrix {
public:
    /// Throws InvalidDimension unless entries is square with dim >= 2.
    explicit OperatorMatrix(ComplexMatrix entries);

    int dim() const { return static_cast<int>(entries_.rows()); }
    const ComplexMatrix& entries() const { return entries_; }
    Complex operator()(int row, int col) const { return entries_(row, col); }

    OperatorMatrix adjoint() const { return OperatorMatrix(entries_.adjoint()); }
    /// max |A - A^dagger| entrywise.
    double hermiticity_error() const;
    bool is_hermitian(double tol = 1e-12) const { return hermiticity_error() <= tol; }

    friend OperatorMatrix operator+(const OperatorMatrix& a, const OperatorMatrix& b);
    friend OperatorMatrix operator-(const OperatorMatrix& a, const OperatorMatrix& b);
    friend OperatorMatrix operator*(const OperatorMatrix& a, const OperatorMatrix& b);
    friend OperatorMatrix operator*(Complex s, const OperatorMatrix& a);

    static OperatorMatrix identity(int dim);
    static OperatorMatrix zero(int dim);

private:
    ComplexMatrix entries_;
};

/// Quantum state. Construction enforces the cheap invariants (square, dim >= 2,
/// Hermitian to 1e-10, unit trace to 1e-10); positivity is checked separately
/// by check_invariants because it needs a factorization.
class DensityMatrix {
public:
    static constexpr double kHermitianTol = 1e-10;
    static constexpr double kTraceTol = 1e-10;
    static constexpr double kPsdTol = 1e-8;

    explicit DensityMatrix(ComplexMatrix entries);

    static DensityMatrix fock(int n, int dim);
    static DensityMatrix maximally_mixed(int dim);
    /// |psi><psi| after normalizing psi.
    static DensityMatrix pure(const Eigen::VectorXcd& psi);
    /// For matrices whose lower triangle was written as the conjugate of the
    /// upper one, so Hermiticity holds exactly; only the trace is checked.
    static DensityMatrix from_mirrored(ComplexMatrix entries);

    int dim() const { return static_cast<int>(entries_.rows()); }
    const ComplexMatrix& entries() const { return entries_; }
    Complex operator()(int row, int col) const { return entries_(row, col); }

private:
    struct Trusted {};
    DensityMatrix(ComplexMatrix entries, Trusted);
    static void check_trace(const ComplexMatrix& m);

    ComplexMatrix entries_;
};

struct InvariantReport {
    double hermiticity_error = 0.0;
    double trace_error = 0.0;
    double purity = 0.0;
    bool positive = true;  ///< smallest eigenvalue >= -kPsdTol

    bool ok() const {
        return hermiticity_error <= DensityMatrix::kHermitianTol &&
               trace_error <= DensityMatrix::kTraceTol && positive && purity > 0.0 &&
               purity <= 1.0 + 1e-10;
    }
};

/// Full invariant check. Positivity uses a Cholesky factorization of
/// rho + tol*I, which succeeds iff every eigenvalue exceeds -tol.
InvariantReport check_invariants(const DensityMatrix& rho);
bool is_positive_semidefinite(const ComplexMatrix& m, double tol = DensityMatrix::kPsdTol);
/// Smallest eigenvalue via a dense Hermitian eigensolver.
double min_eigenvalue(const DensityMatrix& rho);

struct LadderOps {
    OperatorMatrix lowering;
    OperatorMatrix raising;
};

struct Quadratures {
    OperatorMatrix x;
    OperatorMatrix p;
};

/// <n-1|a|n> = sqrt(n) on the superdiagonal.
LadderOps build_ladder_ops(int dim);
/// x = (a + a^dagger)/sqrt(2), p = i(a^dagger - a)/sqrt(2).
Quadratures build_quadratures(int dim);

/// Tr[op * rho].
Complex expectation(const OperatorMatrix& op, const DensityMatrix& rho);
/// Tr[rho^2].
double purity(const DensityMatrix& rho);

/// Diagonal state with rho_nn proportional to (n_bar/(n_bar+1))^n, normalized
/// over the truncated basis.
DensityMatrix thermal_state(double n_bar, int dim);
/// Bose-Einstein occupancy 1/(exp(omega/kbt) - 1); zero at kbt = 0.
double thermal_occupancy(double kbt, double omega = 1.0);

/// Population held by the top `fraction` of Fock levels.
double tail_population(const DensityMatrix& rho, double fraction = 0.1);

}  // namespace qtrack
