#include "qtrack/banded.hpp"

#include <algorithm>
#include <cstdlib>
#include <optional>

#include "qtrack/error.hpp"

namespace qtrack {

namespace {

// First row index and length of diagonal `o` inside a dim x dim matrix.
inline int diag_begin(int o) { return o < 0 ? -o : 0; }
inline int diag_length(int dim, int o) { return dim - std::abs(o); }

}  // namespace

BandedOperator::BandedOperator(int dim, int lower, int upper)
    : dim_(dim), lower_(lower), upper_(upper) {
    if (dim < 2) throw InvalidDimension("BandedOperator: dim must be >= 2");
    if (lower < 0 || upper < 0 || lower >= dim || upper >= dim) {
        throw InvalidArgument("BandedOperator: band out of range");
    }
    diags_.assign(static_cast<std::size_t>(lower + upper + 1), Eigen::VectorXcd::Zero(dim));
}

BandedOperator BandedOperator::from_dense(const ComplexMatrix& m, double tol) {
    if (m.rows() != m.cols()) throw InvalidDimension("BandedOperator: matrix is not square");
    const int dim = static_cast<int>(m.rows());
    int lower = 0;
    int upper = 0;
    for (int j = 0; j < dim; ++j) {
        for (int i = 0; i < dim; ++i) {
            if (std::abs(m(i, j)) > tol) {
                lower = std::max(lower, i - j);
                upper = std::max(upper, j - i);
            }
        }
    }
    return from_dense(m, lower, upper, tol);
}

BandedOperator BandedOperator::from_dense(const ComplexMatrix& m, int lower, int upper,
                                          double tol) {
    if (m.rows() != m.cols()) throw InvalidDimension("BandedOperator: matrix is not square");
    const int dim = static_cast<int>(m.rows());
    BandedOperator b(dim, lower, upper);
    for (int j = 0; j < dim; ++j) {
        for (int i = 0; i < dim; ++i) {
            const int o = j - i;
            if (o >= -lower && o <= upper) {
                b.diagonal(o)(i) = m(i, j);
            } else if (std::abs(m(i, j)) > tol) {
                throw InvalidArgument("BandedOperator: entry outside the requested band");
            }
        }
    }
    return b;
}

Complex BandedOperator::at(int row, int col) const {
    const int o = col - row;
    if (o < -lower_ || o > upper_) return Complex(0.0, 0.0);
    return diagonal(o)(row);
}

void BandedOperator::add_scaled(const BandedOperator& other, Complex s) {
    if (other.dim_ != dim_) throw DimensionMismatch("BandedOperator::add_scaled: dims differ");
    if (other.lower_ > lower_ || other.upper_ > upper_) {
        throw InvalidArgument("BandedOperator::add_scaled: band does not fit");
    }
    for (int o = -other.lower_; o <= other.upper_; ++o) diagonal(o) += s * other.diagonal(o);
}

ComplexMatrix BandedOperator::to_dense() const {
    ComplexMatrix m = ComplexMatrix::Zero(dim_, dim_);
    for (int o = -lower_; o <= upper_; ++o) {
        const int i0 = diag_begin(o);
        const int len = diag_length(dim_, o);
        for (int i = i0; i < i0 + len; ++i) m(i, i + o) = diagonal(o)(i);
    }
    return m;
}

void BandedOperator::multiply_left(const ComplexMatrix& in, ComplexMatrix& out) const {
    if (in.rows() != dim_) throw DimensionMismatch("BandedOperator::multiply_left");
    out.setZero(dim_, in.cols());
    for (Eigen::Index j = 0; j < in.cols(); ++j) {
        for (int o = -lower_; o <= upper_; ++o) {
            const int i0 = diag_begin(o);
            const int len = diag_length(dim_, o);
            out.col(j).segment(i0, len).array() +=
                diagonal(o).segment(i0, len).array() * in.col(j).segment(i0 + o, len).array();
        }
    }
}

void BandedOperator::multiply_right_adjoint(const ComplexMatrix& in, ComplexMatrix& out) const {
    if (in.cols() != dim_) throw DimensionMismatch("BandedOperator::multiply_right_adjoint");
    out.setZero(in.rows(), dim_);
    // (in B^dagger)(:, j) = sum_o conj(B(j, j+o)) in(:, j+o)
    for (int j = 0; j < dim_; ++j) {
        const int o_lo = std::max(-lower_, -j);
        const int o_hi = std::min(upper_, dim_ - 1 - j);
        for (int o = o_lo; o <= o_hi; ++o) {
            const Complex c = std::conj(diagonal(o)(j));
            if (c != Complex(0.0, 0.0)) out.col(j) += c * in.col(j + o);
        }
    }
}

void BandedOperator::multiply_right_adjoint_upper(const ComplexMatrix& in,
                                                  ComplexMatrix& out) const {
    if (in.cols() != dim_) throw DimensionMismatch("BandedOperator::multiply_right_adjoint_upper");
    out.setZero(in.rows(), dim_);
    for (int j = 0; j < dim_; ++j) {
        const int o_lo = std::max(-lower_, -j);
        const int o_hi = std::min(upper_, dim_ - 1 - j);
        for (int o = o_lo; o <= o_hi; ++o) {
            const Complex c = std::conj(diagonal(o)(j));
            if (c != Complex(0.0, 0.0)) out.col(j).head(j + 1) += c * in.col(j + o).head(j + 1);
        }
    }
}

void BandedOperator::accumulate_sandwich(const ComplexMatrix& rho, double s, ComplexMatrix& out,
                                         ComplexMatrix& scratch) const {
    multiply_left(rho, scratch);
    for (int j = 0; j < dim_; ++j) {
        const int o_lo = std::max(-lower_, -j);
        const int o_hi = std::min(upper_, dim_ - 1 - j);
        for (int o = o_lo; o <= o_hi; ++o) {
            const Complex c = s * std::conj(diagonal(o)(j));
            if (c != Complex(0.0, 0.0)) out.col(j) += c * scratch.col(j + o);
        }
    }
}

void BandedOperator::accumulate_sandwich_upper(const ComplexMatrix& rho, double s,
                                               ComplexMatrix& out, ComplexMatrix& scratch) const {
    if (const auto single = single_diagonal()) {
        // out(i,j) += s b_i conj(b_j) rho(i+o, j+o)
        const int o = *single;
        const Eigen::VectorXcd& b = diagonal(o);
        const int i0 = diag_begin(o);
        const int len = diag_length(dim_, o);
        for (int j = i0; j < i0 + len; ++j) {
            const Complex cj = s * std::conj(b(j));
            const int rows = j - i0 + 1;
            out.col(j).segment(i0, rows).array() +=
                cj * b.segment(i0, rows).array() * rho.col(j + o).segment(i0 + o, rows).array();
        }
        return;
    }
    multiply_left(rho, scratch);
    for (int j = 0; j < dim_; ++j) {
        const int o_lo = std::max(-lower_, -j);
        const int o_hi = std::min(upper_, dim_ - 1 - j);
        for (int o = o_lo; o <= o_hi; ++o) {
            const Complex c = s * std::conj(diagonal(o)(j));
            if (c != Complex(0.0, 0.0)) out.col(j).head(j + 1) += c * scratch.col(j + o).head(j + 1);
        }
    }
}

std::optional<int> BandedOperator::single_diagonal() const {
    std::optional<int> found;
    for (int o = -lower_; o <= upper_; ++o) {
        if (diagonal(o).isZero(0.0)) continue;
        if (found) return std::nullopt;
        found = o;
    }
    return found;
}

Complex BandedOperator::trace_product(const ComplexMatrix& rho) const {
    if (rho.rows() != dim_) throw DimensionMismatch("BandedOperator::trace_product");
    Complex acc(0.0, 0.0);
    for (int o = -lower_; o <= upper_; ++o) {
        const int i0 = diag_begin(o);
        const int len = diag_length(dim_, o);
        for (int i = i0; i < i0 + len; ++i) acc += diagonal(o)(i) * rho(i + o, i);
    }
    return acc;
}

}  // namespace qtrack

namespace qtrack {

void BandedLU::factor(const BandedOperator& a) {
    lu_ = a;
    const int d = lu_.dim();
    const int kl = lu_.lower();
    const int ku = lu_.upper();
    for (int k = 0; k < d; ++k) {
        const Complex pivot = lu_.diagonal(0)(k);
        if (pivot == Complex(0.0, 0.0)) throw NumericalInvariantError("BandedLU: zero pivot");
        for (int i = k + 1; i <= std::min(d - 1, k + kl); ++i) {
            Complex& lik = lu_.diagonal(k - i)(i);
            lik /= pivot;
            for (int j = k + 1; j <= std::min(d - 1, k + ku); ++j) {
                lu_.diagonal(j - i)(i) -= lik * lu_.diagonal(j - k)(k);
            }
        }
    }
}

void BandedLU::solve_transposed(ComplexMatrix& xt) const {
    const int d = lu_.dim();
    if (xt.cols() != d) throw DimensionMismatch("BandedLU: right-hand side has wrong size");
    const int kl = lu_.lower();
    const int ku = lu_.upper();
    for (int i = 1; i < d; ++i) {
        for (int o = 1; o <= std::min(kl, i); ++o) {
            xt.col(i) -= lu_.diagonal(-o)(i) * xt.col(i - o);
        }
    }
    for (int i = d - 1; i >= 0; --i) {
        for (int o = 1; o <= std::min(ku, d - 1 - i); ++o) {
            xt.col(i) -= lu_.diagonal(o)(i) * xt.col(i + o);
        }
        xt.col(i) *= Complex(1.0, 0.0) / lu_.diagonal(0)(i);
    }
}

ComplexMatrix BandedLU::solve(const ComplexMatrix& b) const {
    if (b.rows() != dim()) throw DimensionMismatch("BandedLU: right-hand side has wrong size");
    ComplexMatrix xt = b.transpose();
    solve_transposed(xt);
    return xt.transpose();
}

}  // namespace qtrack
