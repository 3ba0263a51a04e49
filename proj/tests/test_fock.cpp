#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <numbers>

#include "qtrack/error.hpp"
#include "qtrack/fock.hpp"

using namespace qtrack;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ComplexMatrix commutator(const OperatorMatrix& a, const OperatorMatrix& b) {
    return (a * b - b * a).entries();
}

}  // namespace

TEST_CASE("lowering operator at dim 2") {
    const auto ops = build_ladder_ops(2);
    CHECK(ops.lowering(0, 0) == Complex(0, 0));
    CHECK(ops.lowering(0, 1) == Complex(1, 0));
    CHECK(ops.lowering(1, 0) == Complex(0, 0));
    CHECK(ops.lowering(1, 1) == Complex(0, 0));
}

TEST_CASE("lowering operator matrix element <1|a|2>") {
    const auto ops = build_ladder_ops(3);
    CHECK_THAT(ops.lowering(1, 2).real(), WithinAbs(1.41421356, 1e-8));
    CHECK(ops.raising.entries() == ops.lowering.entries().adjoint());
}

TEST_CASE("number operator diagonal is 0..dim-1") {
    const int dim = 100;
    const auto ops = build_ladder_ops(dim);
    const ComplexMatrix n = (ops.raising * ops.lowering).entries();
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) {
            // sqrt(n)^2 rounds to within an ulp of n
            const Complex want = i == j ? Complex(i, 0) : Complex(0, 0);
            CHECK(std::abs(n(i, j) - want) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(i, 1));
        }
    }
}

TEST_CASE("position quadrature at dim 2") {
    const auto q = build_quadratures(2);
    const double h = 1.0 / std::sqrt(2.0);
    CHECK_THAT(q.x(0, 1).real(), WithinAbs(h, 1e-15));
    CHECK_THAT(q.x(1, 0).real(), WithinAbs(h, 1e-15));
    CHECK(q.x(0, 0) == Complex(0, 0));
    CHECK(q.x.is_hermitian());
    CHECK(q.p.is_hermitian());
}

TEST_CASE("canonical commutator on the interior block") {
    for (int dim : {60, 120}) {
        const auto q = build_quadratures(dim);
        const ComplexMatrix c = commutator(q.x, q.p);
        double err = 0.0;
        for (int m = 0; m < dim - 1; ++m) {
            for (int n = 0; n < dim - 1; ++n) {
                const Complex want = m == n ? Complex(0, 1) : Complex(0, 0);
                err = std::max(err, std::abs(c(m, n) - want));
            }
        }
        CHECK(err <= 1e-12);
        // the truncation pushes the missing weight into the last level
        CHECK_THAT((c(dim - 1, dim - 1) / Complex(0, 1)).real(), WithinAbs(1.0 - dim, 1e-10));
    }
}

TEST_CASE("operator matrix rejects bad shapes") {
    CHECK_THROWS_AS(OperatorMatrix(ComplexMatrix::Zero(2, 3)), InvalidDimension);
    CHECK_THROWS_AS(OperatorMatrix(ComplexMatrix::Zero(1, 1)), InvalidDimension);
    CHECK_THROWS_AS(build_ladder_ops(1), InvalidDimension);
    const auto a = OperatorMatrix::identity(3);
    const auto b = OperatorMatrix::identity(4);
    CHECK_THROWS_AS(a * b, DimensionMismatch);
    CHECK_THROWS_AS(a + b, DimensionMismatch);
}

TEST_CASE("density matrix construction enforces trace and hermiticity") {
    ComplexMatrix m = ComplexMatrix::Zero(3, 3);
    m(0, 0) = 0.5;
    m(1, 1) = 0.5;
    CHECK_NOTHROW(DensityMatrix(m));
    m(2, 2) = 0.1;
    CHECK_THROWS_AS(DensityMatrix(m), NumericalInvariantError);
    m(2, 2) = 0.0;
    m(0, 1) = Complex(0.1, 0.2);
    CHECK_THROWS_AS(DensityMatrix(m), NumericalInvariantError);
    m(1, 0) = Complex(0.1, -0.2);
    CHECK_NOTHROW(DensityMatrix(m));
    CHECK_THROWS_AS(DensityMatrix(ComplexMatrix::Identity(1, 1)), InvalidDimension);
    CHECK_THROWS_AS(DensityMatrix::fock(5, 5), InvalidArgument);
}

TEST_CASE("negative eigenvalue is caught by the invariant check") {
    ComplexMatrix m = ComplexMatrix::Zero(2, 2);
    m(0, 0) = 1.2;
    m(1, 1) = -0.2;
    const DensityMatrix rho(m);
    const auto rep = check_invariants(rho);
    CHECK_FALSE(rep.positive);
    CHECK_FALSE(rep.ok());
    CHECK_THAT(min_eigenvalue(rho), WithinAbs(-0.2, 1e-12));
    CHECK(check_invariants(DensityMatrix::fock(0, 4)).ok());
}

TEST_CASE("expectation values") {
    const int dim = 100;
    const auto ops = build_ladder_ops(dim);
    const auto q = build_quadratures(dim);
    const auto thermal = thermal_state(1.5, dim);
    CHECK_THAT(expectation(OperatorMatrix::identity(dim), thermal).real(), WithinAbs(1.0, 1e-12));
    CHECK_THAT(expectation(ops.raising * ops.lowering, thermal).real(), WithinAbs(1.5, 1e-6));
    CHECK_THAT(std::abs(expectation(q.x, DensityMatrix::fock(0, dim))), WithinAbs(0.0, 1e-15));
    CHECK_THROWS_AS(expectation(q.x, DensityMatrix::fock(0, 10)), DimensionMismatch);
}

TEST_CASE("purity") {
    CHECK_THAT(purity(DensityMatrix::fock(0, 10)), WithinAbs(1.0, 1e-15));
    for (int d : {2, 7, 100}) {
        CHECK_THAT(purity(DensityMatrix::maximally_mixed(d)), WithinAbs(1.0 / d, 1e-14));
    }
    CHECK_THAT(purity(thermal_state(1.5, 100)), WithinAbs(0.25, 1e-6));
}

TEST_CASE("pure state from an unnormalized vector") {
    Eigen::VectorXcd psi(3);
    psi << Complex(1, 0), Complex(0, 2), Complex(-1, 1);
    const auto rho = DensityMatrix::pure(psi);
    CHECK_THAT(purity(rho), WithinAbs(1.0, 1e-14));
    CHECK_THAT(rho(1, 1).real(), WithinAbs(4.0 / 7.0, 1e-14));
    CHECK_THROWS_AS(DensityMatrix::pure(Eigen::VectorXcd::Zero(3)), InvalidArgument);
}

TEST_CASE("thermal state populations follow a geometric series") {
    const auto ground = thermal_state(0.0, 8);
    CHECK(ground.entries() == DensityMatrix::fock(0, 8).entries());

    const int dim = 100;
    const double n_bar = 1.5;
    const auto rho = thermal_state(n_bar, dim);
    CHECK_THAT(rho.entries().trace().real(), WithinAbs(1.0, 1e-15));
    const double r = n_bar / (n_bar + 1.0);
    for (int n = 0; n < 20; ++n) {
        CHECK_THAT(rho(n, n).real(), WithinRel(std::pow(r, n) / (n_bar + 1.0), 1e-12));
    }
    CHECK_THROWS_AS(thermal_state(-0.1, 10), InvalidArgument);
}

TEST_CASE("thermal occupancy") {
    CHECK(thermal_occupancy(0.0) == 0.0);
    CHECK_THAT(thermal_occupancy(2.0), WithinAbs(1.0 / (std::exp(0.5) - 1.0), 1e-15));
    CHECK_THAT(thermal_occupancy(2.0), WithinAbs(1.5415, 1e-4));
    CHECK_THAT(thermal_occupancy(0.25), WithinAbs(0.01866, 1e-5));
    CHECK_THAT(thermal_occupancy(1.0, 2.0), WithinAbs(thermal_occupancy(0.5), 1e-15));
}

TEST_CASE("tail population") {
    CHECK(tail_population(DensityMatrix::fock(0, 60)) == 0.0);
    CHECK_THAT(tail_population(DensityMatrix::maximally_mixed(100)), WithinAbs(0.1, 1e-14));
    CHECK(tail_population(thermal_state(thermal_occupancy(2.0), 120)) < 1e-6);
}

TEST_CASE("model parameter violations are all reported") {
    ModelParams p;
    CHECK(p.violations().empty());
    p.eta = 1.5;
    p.dt = 0.0;
    p.dim = 1;
    const auto v = p.violations();
    CHECK(v.size() == 3);
    CHECK_THROWS_AS(p.validate(), InvalidArgument);
    CHECK(ModelParams{}.canonical_string() == ModelParams{}.canonical_string());
    ModelParams q;
    q.gamma = 0.01;
    CHECK(q.canonical_string() != ModelParams{}.canonical_string());
}

TEST_CASE("random density matrices keep their invariants") {
    std::srand(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 2 + trial % 9;
        const ComplexMatrix g = ComplexMatrix::Random(d, d);
        ComplexMatrix m = g * g.adjoint();
        m /= m.trace();
        const DensityMatrix rho(m);
        const auto rep = check_invariants(rho);
        CHECK(rep.ok());
        CHECK(rep.purity >= 1.0 / d - 1e-12);
        CHECK(min_eigenvalue(rho) >= -1e-12);
    }
}
