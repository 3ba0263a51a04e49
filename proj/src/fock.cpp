#include "qtrack/fock.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "qtrack/error.hpp"

namespace qtrack {

namespace {

void require_square(const ComplexMatrix& m, const char* what) {
    if (m.rows() != m.cols()) {
        throw InvalidDimension(std::string(what) + ": matrix is not square");
    }
    if (m.rows() < 2) {
        throw InvalidDimension(std::string(what) + ": dim must be >= 2, got " +
                               std::to_string(m.rows()));
    }
}

void require_dim(int dim) {
    if (dim < 2) {
        throw InvalidDimension("dim must be >= 2, got " + std::to_string(dim));
    }
}

// max |m_ij - conj(m_ji)| over the upper triangle; NaN propagates.
double hermitian_defect(const ComplexMatrix& m) {
    const Eigen::Index n = m.rows();
    double worst2 = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i <= j; ++i) {
            const double d2 = std::norm(m(i, j) - std::conj(m(j, i)));
            if (!(d2 <= worst2)) worst2 = d2;
        }
    }
    return std::sqrt(worst2);
}

std::string fmt17(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

}  // namespace

std::vector<std::string> ModelParams::violations() const {
    std::vector<std::string> out;
    if (!(eta > 0.0 && eta <= 1.0)) out.push_back("eta must lie in (0,1], got " + fmt17(eta));
    if (!(k >= 0.0)) out.push_back("k must be >= 0, got " + fmt17(k));
    if (!(damping > 0.0)) out.push_back("damping must be > 0, got " + fmt17(damping));
    if (!(kbt >= 0.0)) out.push_back("kbt must be >= 0, got " + fmt17(kbt));
    if (!(dt > 0.0)) out.push_back("dt must be > 0, got " + fmt17(dt));
    if (!(omega > 0.0)) out.push_back("omega must be > 0, got " + fmt17(omega));
    if (dim < 2) out.push_back("dim must be >= 2, got " + std::to_string(dim));
    if (!std::isfinite(gamma)) out.push_back("gamma must be finite");
    if (!std::isfinite(alpha)) out.push_back("alpha must be finite");
    return out;
}

void ModelParams::validate() const {
    auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid model parameters:";
    for (const auto& s : v) msg += " " + s + ";";
    throw InvalidArgument(msg);
}

std::string ModelParams::canonical_string() const {
    std::ostringstream os;
    os << "k=" << fmt17(k) << ";eta=" << fmt17(eta) << ";gamma=" << fmt17(gamma)
       << ";damping=" << fmt17(damping) << ";kbt=" << fmt17(kbt) << ";alpha=" << fmt17(alpha)
       << ";omega=" << fmt17(omega) << ";dt=" << fmt17(dt) << ";dim=" << dim;
    return os.str();
}

// ---------------------------------------------------------------------------

OperatorMatrix::OperatorMatrix(ComplexMatrix entries) : entries_(std::move(entries)) {
    require_square(entries_, "OperatorMatrix");
}

double OperatorMatrix::hermiticity_error() const {
    return (entries_ - entries_.adjoint()).cwiseAbs().maxCoeff();
}

OperatorMatrix operator+(const OperatorMatrix& a, const OperatorMatrix& b) {
    if (a.dim() != b.dim()) throw DimensionMismatch("operator dims differ");
    return OperatorMatrix(a.entries_ + b.entries_);
}

OperatorMatrix operator-(const OperatorMatrix& a, const OperatorMatrix& b) {
    if (a.dim() != b.dim()) throw DimensionMismatch("operator dims differ");
    return OperatorMatrix(a.entries_ - b.entries_);
}

OperatorMatrix operator*(const OperatorMatrix& a, const OperatorMatrix& b) {
    if (a.dim() != b.dim()) throw DimensionMismatch("operator dims differ");
    return OperatorMatrix(a.entries_ * b.entries_);
}

OperatorMatrix operator*(Complex s, const OperatorMatrix& a) {
    return OperatorMatrix(s * a.entries_);
}

OperatorMatrix OperatorMatrix::identity(int dim) {
    require_dim(dim);
    return OperatorMatrix(ComplexMatrix::Identity(dim, dim));
}

OperatorMatrix OperatorMatrix::zero(int dim) {
    require_dim(dim);
    return OperatorMatrix(ComplexMatrix::Zero(dim, dim));
}

// ---------------------------------------------------------------------------

DensityMatrix::DensityMatrix(ComplexMatrix entries) : entries_(std::move(entries)) {
    require_square(entries_, "DensityMatrix");
    const double herm = hermitian_defect(entries_);
    if (!(herm <= kHermitianTol)) {
        throw NumericalInvariantError("density matrix is not Hermitian (error " +
                                      std::to_string(herm) + ")");
    }
    check_trace(entries_);
}

DensityMatrix::DensityMatrix(ComplexMatrix entries, Trusted) : entries_(std::move(entries)) {
    require_square(entries_, "DensityMatrix");
    check_trace(entries_);
}

void DensityMatrix::check_trace(const ComplexMatrix& m) {
    const double tr_err = std::abs(m.trace() - Complex(1.0, 0.0));
    if (!(tr_err <= kTraceTol)) {
        throw NumericalInvariantError("density matrix trace differs from 1 by " +
                                      std::to_string(tr_err));
    }
}

DensityMatrix DensityMatrix::from_mirrored(ComplexMatrix entries) {
    return DensityMatrix(std::move(entries), Trusted{});
}

DensityMatrix DensityMatrix::fock(int n, int dim) {
    require_dim(dim);
    if (n < 0 || n >= dim) throw InvalidArgument("Fock level out of range");
    ComplexMatrix m = ComplexMatrix::Zero(dim, dim);
    m(n, n) = 1.0;
    return DensityMatrix(std::move(m));
}

DensityMatrix DensityMatrix::maximally_mixed(int dim) {
    require_dim(dim);
    return DensityMatrix(ComplexMatrix::Identity(dim, dim) / static_cast<double>(dim));
}

DensityMatrix DensityMatrix::pure(const Eigen::VectorXcd& psi) {
    const double norm = psi.norm();
    if (!(norm > 0.0)) throw InvalidArgument("cannot build a pure state from a zero vector");
    const Eigen::VectorXcd v = psi / norm;
    ComplexMatrix m = v * v.adjoint();
    m /= m.trace().real();
    return DensityMatrix(0.5 * (m + m.adjoint()));
}

bool is_positive_semidefinite(const ComplexMatrix& m, double tol) {
    ComplexMatrix shifted = m;
    shifted.diagonal().array() += tol;
    Eigen::LLT<ComplexMatrix> llt(shifted);
    return llt.info() == Eigen::Success;
}

double min_eigenvalue(const DensityMatrix& rho) {
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(rho.entries(), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

InvariantReport check_invariants(const DensityMatrix& rho) {
    const auto& m = rho.entries();
    InvariantReport r;
    r.hermiticity_error = hermitian_defect(m);
    r.trace_error = std::abs(m.trace() - Complex(1.0, 0.0));
    r.purity = purity(rho);
    r.positive = is_positive_semidefinite(m);
    return r;
}

// ---------------------------------------------------------------------------

LadderOps build_ladder_ops(int dim) {
    require_dim(dim);
    ComplexMatrix a = ComplexMatrix::Zero(dim, dim);
    for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
    ComplexMatrix adag = a.adjoint();
    return {OperatorMatrix(std::move(a)), OperatorMatrix(std::move(adag))};
}

Quadratures build_quadratures(int dim) {
    const auto ladder = build_ladder_ops(dim);
    const auto& a = ladder.lowering.entries();
    const auto& ad = ladder.raising.entries();
    const double s = 1.0 / std::sqrt(2.0);
    ComplexMatrix x = s * (a + ad);
    ComplexMatrix p = Complex(0.0, s) * (ad - a);
    return {OperatorMatrix(std::move(x)), OperatorMatrix(std::move(p))};
}

Complex expectation(const OperatorMatrix& op, const DensityMatrix& rho) {
    if (op.dim() != rho.dim()) {
        throw DimensionMismatch("expectation: operator dim " + std::to_string(op.dim()) +
                                " vs state dim " + std::to_string(rho.dim()));
    }
    // Tr[A rho] = sum_ij A_ij rho_ji
    return op.entries().cwiseProduct(rho.entries().transpose()).sum();
}

double purity(const DensityMatrix& rho) {
    // Hermitian rho: Tr[rho^2] = sum |rho_ij|^2
    return rho.entries().squaredNorm();
}

DensityMatrix thermal_state(double n_bar, int dim) {
    require_dim(dim);
    if (!(n_bar >= 0.0) || !std::isfinite(n_bar)) {
        throw InvalidArgument("thermal_state: n_bar must be a finite value >= 0");
    }
    Eigen::VectorXd pops(dim);
    const double ratio = n_bar / (n_bar + 1.0);
    double w = 1.0;
    for (int n = 0; n < dim; ++n) {
        pops(n) = w;
        w *= ratio;
    }
    pops /= pops.sum();
    ComplexMatrix m = ComplexMatrix::Zero(dim, dim);
    m.diagonal() = pops.cast<Complex>();
    return DensityMatrix(std::move(m));
}

double thermal_occupancy(double kbt, double omega) {
    if (kbt <= 0.0) return 0.0;
    return 1.0 / std::expm1(omega / kbt);
}

double tail_population(const DensityMatrix& rho, double fraction) {
    const int dim = rho.dim();
    int count = static_cast<int>(std::ceil(fraction * dim));
    if (count < 1) count = 1;
    double tail = 0.0;
    for (int n = dim - count; n < dim; ++n) tail += rho(n, n).real();
    return tail;
}

}  // namespace qtrack
