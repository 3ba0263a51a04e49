#include <catch_amalgamated.hpp>

#include "qtrack/banded.hpp"
#include "qtrack/error.hpp"
#include "qtrack/fock.hpp"

using namespace qtrack;

namespace {

ComplexMatrix random_banded(int dim, int lower, int upper) {
    ComplexMatrix m = ComplexMatrix::Random(dim, dim);
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) {
            if (j - i > upper || i - j > lower) m(i, j) = 0.0;
        }
    }
    return m;
}

ComplexMatrix random_hermitian(int dim) {
    const ComplexMatrix g = ComplexMatrix::Random(dim, dim);
    return g + g.adjoint();
}

double max_abs(const ComplexMatrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("banded round trip through dense") {
    std::srand(1);
    const ComplexMatrix m = random_banded(9, 2, 3);
    const auto b = BandedOperator::from_dense(m);
    CHECK(b.lower() == 2);
    CHECK(b.upper() == 3);
    CHECK(b.to_dense() == m);
    CHECK(b.at(0, 3) == m(0, 3));
    CHECK(b.at(0, 5) == Complex(0, 0));

    CHECK_THROWS_AS(BandedOperator::from_dense(m, 1, 3), InvalidArgument);
    const auto wide = BandedOperator::from_dense(m, 4, 4);
    CHECK(wide.to_dense() == m);
}

TEST_CASE("quadratures are tridiagonal") {
    const auto q = build_quadratures(12);
    const auto x = BandedOperator::from_dense(q.x.entries());
    CHECK(x.lower() == 1);
    CHECK(x.upper() == 1);
    const auto x4 = BandedOperator::from_dense((q.x * q.x * q.x * q.x).entries(), 1e-14);
    CHECK(x4.lower() == 4);
    CHECK(x4.upper() == 4);
}

TEST_CASE("banded products match dense products") {
    std::srand(2);
    const int dim = 17;
    const ComplexMatrix bm = random_banded(dim, 2, 1);
    const ComplexMatrix rho = random_hermitian(dim);
    const auto b = BandedOperator::from_dense(bm, 2, 1);

    ComplexMatrix out;
    b.multiply_left(rho, out);
    CHECK(max_abs(out - bm * rho) < 1e-13);

    b.multiply_right_adjoint(rho, out);
    CHECK(max_abs(out - rho * bm.adjoint()) < 1e-13);

    ComplexMatrix acc = ComplexMatrix::Zero(dim, dim);
    ComplexMatrix scratch;
    b.accumulate_sandwich(rho, 0.5, acc, scratch);
    const ComplexMatrix want = 0.5 * bm * rho * bm.adjoint();
    CHECK(max_abs(acc - want) < 1e-12);

    ComplexMatrix upper = ComplexMatrix::Zero(dim, dim);
    b.accumulate_sandwich_upper(rho, 0.5, upper, scratch);
    for (int i = 0; i < dim; ++i) {
        for (int j = i; j < dim; ++j) CHECK(std::abs(upper(i, j) - want(i, j)) < 1e-12);
    }

    CHECK(std::abs(b.trace_product(rho) - (bm * rho).trace()) < 1e-12);
}

TEST_CASE("upper-triangle product of a Hermitian result") {
    std::srand(3);
    const int dim = 11;
    const ComplexMatrix rho = random_hermitian(dim);
    const ComplexMatrix h = random_hermitian(dim);
    const auto b = BandedOperator::from_dense(h, 3, 3, 1e300);
    ComplexMatrix out;
    // H rho H is Hermitian; build it as (H rho) H^dag
    ComplexMatrix hr;
    b.multiply_left(rho, hr);
    b.multiply_right_adjoint_upper(hr, out);
    const ComplexMatrix bd = b.to_dense();
    const ComplexMatrix want = bd * rho * bd.adjoint();
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) {
            if (j >= i) {
                CHECK(std::abs(out(i, j) - want(i, j)) < 1e-12);
            } else {
                CHECK(out(i, j) == Complex(0, 0));
            }
        }
    }
}

TEST_CASE("add_scaled and single_diagonal") {
    const auto ops = build_ladder_ops(6);
    auto a = BandedOperator::from_dense(ops.lowering.entries());
    REQUIRE(a.single_diagonal().has_value());
    CHECK(*a.single_diagonal() == 1);

    BandedOperator sum(6, 1, 1);
    sum.add_scaled(a, Complex(2, 0));
    sum.add_scaled(BandedOperator::from_dense(ops.raising.entries()), Complex(0, 1));
    const ComplexMatrix want = 2.0 * ops.lowering.entries() + Complex(0, 1) * ops.raising.entries();
    CHECK(max_abs(sum.to_dense() - want) < 1e-15);
    CHECK_FALSE(sum.single_diagonal().has_value());

    BandedOperator narrow(6, 0, 0);
    CHECK_THROWS_AS(narrow.add_scaled(a, Complex(1, 0)), InvalidArgument);
}

TEST_CASE("banded LU solves I + iH dt/2") {
    std::srand(4);
    for (int dim : {5, 40}) {
        const auto q = build_quadratures(dim);
        const ComplexMatrix x2 = (q.x * q.x).entries();
        const ComplexMatrix h = 0.5 * (q.p * q.p).entries() + 0.5 * x2 + 0.025 * x2 * x2;
        const ComplexMatrix a = ComplexMatrix::Identity(dim, dim) + Complex(0, 0.3) * h;
        const auto band = BandedOperator::from_dense(a, 4, 4, 1e-12);
        const BandedLU lu(band);
        CHECK(lu.dim() == dim);

        const ComplexMatrix b = ComplexMatrix::Random(dim, dim);
        const ComplexMatrix x = lu.solve(b);
        CHECK(max_abs(a * x - b) < 1e-10);

        ComplexMatrix xt = b.transpose();
        lu.solve_transposed(xt);
        CHECK(max_abs(xt.transpose() - x) < 1e-12);

        // the Cayley transform built from it is unitary
        const ComplexMatrix u =
            2.0 * lu.solve(ComplexMatrix::Identity(dim, dim)) - ComplexMatrix::Identity(dim, dim);
        CHECK(max_abs(u * u.adjoint() - ComplexMatrix::Identity(dim, dim)) < 1e-12);
    }
}

TEST_CASE("banded LU rejects a zero pivot") {
    BandedOperator z(3, 1, 1);
    z.diagonal(1).setOnes();
    z.diagonal(-1).setOnes();
    BandedLU lu;
    CHECK_THROWS_AS(lu.factor(z), NumericalInvariantError);
}
