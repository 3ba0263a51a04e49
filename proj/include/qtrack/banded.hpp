#pragma once

#include <optional>
#include <vector>

#include "qtrack/fock.hpp"

namespace qtrack {

/// Complex banded matrix stored by diagonals. Entry (i, i+o) lives in
/// diagonal o for o in [-lower, upper]. Every operator in the oscillator
/// model (x, p, a, H with a quartic term) is banded in the Fock basis, so
/// products with a dense density matrix cost O(bandwidth * dim^2) instead
/// of O(dim^3).
class BandedOperator {
public:
    BandedOperator() = default;
    BandedOperator(int dim, int lower, int upper);

    /// Smallest band holding every entry with |a_ij| > tol.
    static BandedOperator from_dense(const ComplexMatrix& m, double tol = 0.0);
    /// Fixed band; throws InvalidArgument if an entry outside it exceeds tol.
    static BandedOperator from_dense(const ComplexMatrix& m, int lower, int upper,
                                     double tol = 0.0);

    int dim() const { return dim_; }
    int lower() const { return lower_; }
    int upper() const { return upper_; }

    Complex at(int row, int col) const;
    /// Mutable access to diagonal `offset`; element i is entry (i, i+offset)
    /// for i in [max(0,-offset), dim - max(0,offset)).
    Eigen::VectorXcd& diagonal(int offset) { return diags_[offset + lower_]; }
    const Eigen::VectorXcd& diagonal(int offset) const { return diags_[offset + lower_]; }

    /// this += s * other; other's band must fit inside this band.
    void add_scaled(const BandedOperator& other, Complex s);

    ComplexMatrix to_dense() const;

    /// out = B * in
    void multiply_left(const ComplexMatrix& in, ComplexMatrix& out) const;
    /// out = in * B^dagger
    void multiply_right_adjoint(const ComplexMatrix& in, ComplexMatrix& out) const;
    /// Upper triangle (diagonal included) of in * B^dagger; the strictly lower
    /// part of `out` is left zero. For products known to be Hermitian.
    void multiply_right_adjoint_upper(const ComplexMatrix& in, ComplexMatrix& out) const;
    /// out += s * B rho B^dagger. `scratch` is reused between calls.
    void accumulate_sandwich(const ComplexMatrix& rho, double s, ComplexMatrix& out,
                             ComplexMatrix& scratch) const;
    /// As accumulate_sandwich, touching only the upper triangle of `out`.
    void accumulate_sandwich_upper(const ComplexMatrix& rho, double s, ComplexMatrix& out,
                                   ComplexMatrix& scratch) const;
    /// Offset of the only nonzero diagonal, if exactly one is nonzero.
    std::optional<int> single_diagonal() const;
    /// Tr[B rho] in O(bandwidth * dim).
    Complex trace_product(const ComplexMatrix& rho) const;

private:
    int dim_ = 0;
    int lower_ = 0;
    int upper_ = 0;
    // diags_[o + lower_] has length dim_; positions outside the matrix stay zero.
    std::vector<Eigen::VectorXcd> diags_;
};

/// LU factorization without pivoting of a banded matrix; L and U keep the
/// band of A. Only for matrices whose Hermitian part is positive definite,
/// such as I + i H dt/2 with H Hermitian, where no pivoting is needed.
class BandedLU {
public:
    BandedLU() = default;
    explicit BandedLU(const BandedOperator& a) { factor(a); }

    /// Throws NumericalInvariantError on a zero pivot.
    void factor(const BandedOperator& a);
    int dim() const { return lu_.dim(); }

    /// In place on the transposed layout: xt <- (A^{-1} xt^T)^T. Rows of the
    /// solution are columns of xt, so every update is a contiguous vector op.
    void solve_transposed(ComplexMatrix& xt) const;
    /// A^{-1} b.
    ComplexMatrix solve(const ComplexMatrix& b) const;

private:
    BandedOperator lu_;  // unit-lower L below the diagonal, U on and above
};

}  // namespace qtrack
