#pragma once

// Dense row-major matrices and a one-sided Jacobi SVD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "gencomp/error.hpp"

namespace gencomp {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    Matrix transposed() const {
        Matrix t(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline Matrix multiply(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw ValidationError("matrix shape mismatch in multiply");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

inline double frobenius_sq(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return s;
}

/// Thin SVD, A = U diag(s) V^T with s sorted descending.
/// U is rows x p, V is cols x p, p = min(rows, cols). Columns of U and V are
/// orthonormal; the first nonzero entry of every column of U is positive.
struct SvdResult {
    Matrix u;
    std::vector<double> s;
    Matrix v;
};

struct JacobiOptions {
    double tolerance = 1e-14;
    int max_sweeps = 60;
};

namespace detail {

/// Fills the columns of `u` not marked in `filled` so that all columns form
/// an orthonormal set. Candidates are Gram-Schmidt-reduced basis vectors.
inline void complete_orthonormal(Matrix& u, std::vector<bool>& filled) {
    const std::size_t m = u.rows;
    for (std::size_t k = 0; k < u.cols; ++k) {
        if (filled[k]) continue;
        std::vector<double> best;
        double best_norm = -1.0;
        for (std::size_t e = 0; e < m; ++e) {
            std::vector<double> cand(m, 0.0);
            cand[e] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t c = 0; c < u.cols; ++c) {
                    if (!filled[c]) continue;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < m; ++i) dot += u(i, c) * cand[i];
                    for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * u(i, c);
                }
            }
            double nn = 0.0;
            for (double x : cand) nn += x * x;
            if (nn > best_norm) {
                best_norm = nn;
                best = std::move(cand);
            }
        }
        const double nn = std::sqrt(best_norm);
        for (std::size_t i = 0; i < m; ++i) u(i, k) = best[i] / nn;
        filled[k] = true;
    }
}

/// Hestenes one-sided Jacobi on the columns of a tall matrix (rows >= cols).
inline SvdResult jacobi_tall(const Matrix& a, const JacobiOptions& opt) {
    const std::size_t m = a.rows;
    const std::size_t n = a.cols;
    // column-major working copies
    std::vector<std::vector<double>> u(n, std::vector<double>(m));
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) u[j][i] = a(i, j);
        v[j][j] = 1.0;
    }

    bool converged = n < 2;
    for (int sweep = 0; sweep < opt.max_sweeps && !converged; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += u[p][i] * u[p][i];
                    beta += u[q][i] * u[q][i];
                    gamma += u[p][i] * u[q][i];
                }
                if (gamma == 0.0 || std::abs(gamma) <= opt.tolerance * std::sqrt(alpha * beta)) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::hypot(1.0, t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double up = u[p][i];
                    const double uq = u[q][i];
                    u[p][i] = c * up - s * uq;
                    u[q][i] = s * up + c * uq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v[p][i];
                    const double vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        converged = !rotated;
    }
    if (!converged) throw Error("SVD did not converge within the sweep cap");

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (double x : u[j]) s += x * x;
        norms[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    const double smax = n > 0 ? norms[order[0]] : 0.0;
    const double negligible = smax * 1e-13 * static_cast<double>(std::max(m, n));

    SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
    std::vector<bool> filled(n, false);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        out.s[k] = norms[j];
        for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v[j][i];
        if (norms[j] > negligible && norms[j] > 0.0) {
            for (std::size_t i = 0; i < m; ++i) out.u(i, k) = u[j][i] / norms[j];
            filled[k] = true;
        }
    }

    complete_orthonormal(out.u, filled);

    for (std::size_t k = 0; k < n; ++k) {
        std::size_t first = 0;
        while (first < m && std::abs(out.u(first, k)) < 1e-300) ++first;
        if (first < m && out.u(first, k) < 0.0) {
            for (std::size_t i = 0; i < m; ++i) out.u(i, k) = -out.u(i, k);
            for (std::size_t i = 0; i < n; ++i) out.v(i, k) = -out.v(i, k);
        }
    }
    return out;
}

}  // namespace detail

inline SvdResult svd(const Matrix& a, const JacobiOptions& opt = {}) {
    if (a.rows >= a.cols) return detail::jacobi_tall(a, opt);
    // Rotate the smaller side: A^T = U' S V'^T  =>  A = V' S U'^T.
    SvdResult t = detail::jacobi_tall(a.transposed(), opt);
    SvdResult out{std::move(t.v), std::move(t.s), std::move(t.u)};
    const std::size_t p = out.s.size();
    for (std::size_t k = 0; k < p; ++k) {
        std::size_t first = 0;
        while (first < out.u.rows && std::abs(out.u(first, k)) < 1e-300) ++first;
        if (first < out.u.rows && out.u(first, k) < 0.0) {
            for (std::size_t i = 0; i < out.u.rows; ++i) out.u(i, k) = -out.u(i, k);
            for (std::size_t i = 0; i < out.v.rows; ++i) out.v(i, k) = -out.v(i, k);
        }
    }
    return out;
}

/// Leading `r` left singular vectors as an rows x r matrix, r <= rows. When
/// r exceeds min(rows, cols) the extra columns span the left null space.
inline Matrix leading_left_vectors(const Matrix& a, std::size_t r) {
    if (r > a.rows) throw ValidationError("requested more singular vectors than rows");
    const SvdResult s = svd(a);
    Matrix out(a.rows, r);
    std::vector<bool> filled(r, false);
    for (std::size_t k = 0; k < std::min(r, s.u.cols); ++k) {
        for (std::size_t i = 0; i < a.rows; ++i) out(i, k) = s.u(i, k);
        filled[k] = true;
    }
    detail::complete_orthonormal(out, filled);
    return out;
}

}  // namespace gencomp
