#include "emloc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace emloc {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kJacobiTol = 1e-12;  // relative off-diagonal mass per pair

double column_dot(const Matrix& m, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, a) * m(i, b);
    return s;
}

void rotate_columns(Matrix& m, std::size_t p, std::size_t q, double c, double s) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double vp = m(i, p);
        const double vq = m(i, q);
        m(i, p) = c * vp - s * vq;
        m(i, q) = s * vp + c * vq;
    }
}

// Core one-sided Jacobi for rows >= cols: orthogonalizes the columns of a
// working copy, accumulating the rotations into v.
SvdResult svd_tall(const Matrix& a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Matrix b = a;
    Matrix v = Matrix::identity(n);

    bool converged = (n == 1);
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        double worst = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double app = column_dot(b, p, p);
                const double aqq = column_dot(b, q, q);
                const double apq = column_dot(b, p, q);
                if (app == 0.0 || aqq == 0.0) continue;
                const double rel = std::abs(apq) / std::sqrt(app * aqq);
                worst = std::max(worst, rel);
                if (rel <= kJacobiTol) continue;

                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate_columns(b, p, q, c, s);
                rotate_columns(v, p, q, c, s);
            }
        }
        if (worst <= kJacobiTol) converged = true;
    }
    if (!converged) {
        throw SvdConvergenceError("svd: Jacobi sweeps did not converge within " +
                                  std::to_string(kMaxSweeps) + " sweeps");
    }

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(column_dot(b, j, j));

    // Non-increasing sigma; ties keep the original column order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (norms[x] != norms[y]) return norms[x] > norms[y];
        return x < y;
    });

    SvdResult r;
    r.u = Matrix(m, n);
    r.vt = Matrix(n, n);
    r.sigma.resize(n);
    std::vector<std::size_t> zero_slots;
    for (std::size_t jj = 0; jj < n; ++jj) {
        const std::size_t j = order[jj];
        r.sigma[jj] = norms[j];
        for (std::size_t i = 0; i < n; ++i) r.vt(jj, i) = v(i, j);
        if (norms[j] > 0.0) {
            const double inv = 1.0 / norms[j];
            for (std::size_t i = 0; i < m; ++i) r.u(i, jj) = b(i, j) * inv;
        } else {
            zero_slots.push_back(jj);
        }
    }

    // Deterministic completion for zero singular values: take the first
    // standard basis vector with a sizable residual after orthogonalizing
    // against the columns already placed. A zero input therefore produces
    // u equal to the leading identity columns.
    for (std::size_t slot : zero_slots) {
        bool placed = false;
        for (std::size_t cand = 0; cand < m && !placed; ++cand) {
            std::vector<double> w(m, 0.0);
            w[cand] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t jj = 0; jj < n; ++jj) {
                    if (jj == slot) continue;
                    bool filled = r.sigma[jj] > 0.0 ||
                                  (std::find(zero_slots.begin(), zero_slots.end(), jj) !=
                                       zero_slots.end() &&
                                   jj < slot);
                    if (!filled) continue;
                    double proj = 0.0;
                    for (std::size_t i = 0; i < m; ++i) proj += w[i] * r.u(i, jj);
                    for (std::size_t i = 0; i < m; ++i) w[i] -= proj * r.u(i, jj);
                }
            }
            double nrm = 0.0;
            for (double x : w) nrm += x * x;
            nrm = std::sqrt(nrm);
            if (nrm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) r.u(i, slot) = w[i] / nrm;
                placed = true;
            }
        }
        if (!placed) {
            throw SvdConvergenceError("svd: failed to complete orthonormal basis");
        }
    }
    return r;
}

void apply_sign_convention(SvdResult& r) {
    const std::size_t k = r.sigma.size();
    for (std::size_t j = 0; j < k; ++j) {
        std::size_t best = 0;
        double best_abs = -1.0;
        for (std::size_t i = 0; i < r.u.rows(); ++i) {
            const double a = std::abs(r.u(i, j));
            if (a > best_abs) {
                best_abs = a;
                best = i;
            }
        }
        if (r.u(best, j) < 0.0) {
            for (std::size_t i = 0; i < r.u.rows(); ++i) r.u(i, j) = -r.u(i, j);
            for (std::size_t i = 0; i < r.vt.cols(); ++i) r.vt(j, i) = -r.vt(j, i);
        }
    }
}

}  // namespace

SvdResult svd(const Matrix& a) {
    if (a.empty()) throw std::invalid_argument("svd: empty matrix");
    if (!a.all_finite()) throw std::invalid_argument("svd: input has non-finite entries");

    SvdResult r;
    if (a.rows() >= a.cols()) {
        r = svd_tall(a);
    } else {
        SvdResult rt = svd_tall(transpose(a));
        r.u = transpose(rt.vt);
        r.sigma = std::move(rt.sigma);
        r.vt = transpose(rt.u);
    }
    apply_sign_convention(r);
    return r;
}

SvdResult truncated_svd(const Matrix& a, std::size_t n) {
    const std::size_t k = std::min(a.rows(), a.cols());
    if (n < 1 || n > k) {
        throw std::invalid_argument("truncated_svd: rank " + std::to_string(n) +
                                    " out of range [1, " + std::to_string(k) + "]");
    }
    SvdResult full = svd(a);
    SvdResult r;
    r.u = Matrix(a.rows(), n);
    r.vt = Matrix(n, a.cols());
    r.sigma.assign(full.sigma.begin(), full.sigma.begin() + n);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < n; ++j) r.u(i, j) = full.u(i, j);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) r.vt(i, j) = full.vt(i, j);
    }
    return r;
}

Matrix svd_reconstruct(const SvdResult& r) {
    Matrix us = r.u;
    for (std::size_t j = 0; j < r.sigma.size(); ++j) {
        for (std::size_t i = 0; i < us.rows(); ++i) us(i, j) *= r.sigma[j];
    }
    return matmul(us, r.vt);
}

Matrix cholesky(const Matrix& a) {
    if (a.rows() != a.cols()) {
        throw std::invalid_argument("cholesky: matrix not square");
    }
    const std::size_t n = a.rows();
    const double sym_tol = 1e-10 * std::max(1.0, max_abs(a));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::abs(a(i, j) - a(j, i)) > sym_tol) {
                throw std::invalid_argument("cholesky: matrix not symmetric");
            }
        }
    }

    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0)) {
            throw NotPositiveDefiniteError("cholesky: matrix not positive definite");
        }
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

namespace {

void check_triangular(const Matrix& t, bool lower, const char* op) {
    if (t.rows() != t.cols()) {
        throw std::invalid_argument(std::string(op) + ": matrix not square");
    }
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            const bool off = lower ? (j > i) : (j < i);
            if (off && t(i, j) != 0.0) {
                throw std::invalid_argument(std::string(op) + ": matrix not triangular");
            }
        }
    }
    double max_diag = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        max_diag = std::max(max_diag, std::abs(t(i, i)));
    }
    for (std::size_t i = 0; i < t.rows(); ++i) {
        if (std::abs(t(i, i)) <= 1e-12 * max_diag || t(i, i) == 0.0) {
            throw std::runtime_error(std::string(op) + ": zero or near-zero diagonal at " +
                                     std::to_string(i));
        }
    }
}

}  // namespace

Matrix solve_lower_triangular(const Matrix& l, const Matrix& b) {
    check_triangular(l, /*lower=*/true, "solve_lower_triangular");
    if (l.cols() != b.rows()) {
        throw std::invalid_argument("solve_lower_triangular: dimension mismatch");
    }
    Matrix x(b.rows(), b.cols());
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < l.rows(); ++i) {
            double s = b(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
            x(i, c) = s / l(i, i);
        }
    }
    return x;
}

Matrix solve_upper_triangular(const Matrix& u, const Matrix& b) {
    check_triangular(u, /*lower=*/false, "solve_upper_triangular");
    if (u.cols() != b.rows()) {
        throw std::invalid_argument("solve_upper_triangular: dimension mismatch");
    }
    Matrix x(b.rows(), b.cols());
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t ii = u.rows(); ii-- > 0;) {
            double s = b(ii, c);
            for (std::size_t k = ii + 1; k < u.cols(); ++k) s -= u(ii, k) * x(k, c);
            x(ii, c) = s / u(ii, ii);
        }
    }
    return x;
}

}  // namespace emloc
