#pragma once

#include <stdexcept>
#include <vector>

#include "emloc/matrix.hpp"

namespace emloc {

/// Thin SVD a = u * diag(sigma) * vt with k = min(rows, cols).
/// Columns of u are orthonormal, rows of vt are orthonormal, sigma is
/// non-negative and non-increasing. Sign convention: in each column of u the
/// entry of largest magnitude is non-negative (ties broken by lowest row
/// index), with vt adjusted to compensate.
struct SvdResult {
    Matrix u;                   // m x k
    std::vector<double> sigma;  // k
    Matrix vt;                  // k x n
};

class SvdConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotPositiveDefiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One-sided Jacobi SVD. Deterministic: identical input gives bit-identical
/// output. Cyclic sweeps stop when every column pair satisfies
/// |b_i . b_j| <= 1e-12 * |b_i| |b_j|; throws SvdConvergenceError after a
/// fixed sweep cap instead of looping forever. A zero matrix yields all-zero
/// sigma with u equal to the leading identity columns.
SvdResult svd(const Matrix& a);

/// Top-n triple of the thin SVD. 1 <= n <= min(rows, cols).
SvdResult truncated_svd(const Matrix& a, std::size_t n);

/// u * diag(sigma) * vt.
Matrix svd_reconstruct(const SvdResult& r);

/// Lower-triangular L with L * L^T = a. Requires a square and symmetric
/// within 1e-10 (relative to the largest entry); throws
/// NotPositiveDefiniteError when a pivot is non-positive.
Matrix cholesky(const Matrix& a);

/// Solves l * x = b by forward substitution. l must be lower-triangular;
/// throws when a diagonal entry is within 1e-12 * max|diag| of zero.
Matrix solve_lower_triangular(const Matrix& l, const Matrix& b);

/// Solves u * x = b by back substitution, same diagonal guard as the
/// lower-triangular solve.
Matrix solve_upper_triangular(const Matrix& u, const Matrix& b);

}  // namespace emloc
