#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace cbfsos {

struct SingularMatrixError : std::runtime_error {
    explicit SingularMatrixError(const std::string& what) : std::runtime_error(what) {}
};

struct DenseMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;  // row-major

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    DenseMatrix(std::size_t r, std::size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols) throw std::invalid_argument("DenseMatrix shape mismatch");
    }
    static DenseMatrix identity(std::size_t d) {
        DenseMatrix m(d, d);
        for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    DenseMatrix transpose() const {
        DenseMatrix t(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    DenseMatrix operator*(const DenseMatrix& o) const {
        if (cols != o.rows) throw std::invalid_argument("matmul shape mismatch");
        DenseMatrix r(rows, o.cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t k = 0; k < cols; ++k) {
                double a = (*this)(i, k);
                if (a == 0.0) continue;
                for (std::size_t j = 0; j < o.cols; ++j) r(i, j) += a * o(k, j);
            }
        return r;
    }

    DenseMatrix operator+(const DenseMatrix& o) const {
        DenseMatrix r = *this;
        for (std::size_t i = 0; i < data.size(); ++i) r.data[i] += o.data[i];
        return r;
    }
    DenseMatrix operator-(const DenseMatrix& o) const {
        DenseMatrix r = *this;
        for (std::size_t i = 0; i < data.size(); ++i) r.data[i] -= o.data[i];
        return r;
    }
    DenseMatrix operator*(double c) const {
        DenseMatrix r = *this;
        for (double& v : r.data) v *= c;
        return r;
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> y(rows, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) y[i] += (*this)(i, j) * x[j];
        return y;
    }

    double max_abs() const {
        double v = 0.0;
        for (double x : data) v = std::max(v, std::abs(x));
        return v;
    }
};

// Symmetric matrix stored as packed upper triangle.
struct SymMatrix {
    std::size_t dim = 0;
    std::vector<double> upper;  // row-major upper triangle, length d*(d+1)/2

    SymMatrix() = default;
    explicit SymMatrix(std::size_t d) : dim(d), upper(d * (d + 1) / 2, 0.0) {}
    static SymMatrix identity(std::size_t d) {
        SymMatrix m(d);
        for (std::size_t i = 0; i < d; ++i) m.set(i, i, 1.0);
        return m;
    }
    static SymMatrix from_dense(const DenseMatrix& a) {
        SymMatrix m(a.rows);
        for (std::size_t i = 0; i < a.rows; ++i)
            for (std::size_t j = i; j < a.cols; ++j) m.set(i, j, 0.5 * (a(i, j) + a(j, i)));
        return m;
    }

    std::size_t index(std::size_t i, std::size_t j) const {
        if (i > j) std::swap(i, j);
        return i * dim - i * (i + 1) / 2 + j;
    }
    double get(std::size_t i, std::size_t j) const { return upper[index(i, j)]; }
    void set(std::size_t i, std::size_t j, double v) { upper[index(i, j)] = v; }

    DenseMatrix dense() const {
        DenseMatrix a(dim, dim);
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) a(i, j) = get(i, j);
        return a;
    }

    double max_abs() const {
        double v = 0.0;
        for (double x : upper) v = std::max(v, std::abs(x));
        return v;
    }
};

struct EigResult {
    std::vector<double> values;   // ascending
    DenseMatrix vectors;          // column i is the eigenvector of values[i]
};

// Cyclic Jacobi for symmetric matrices.
inline EigResult eig_sym(const SymMatrix& a) {
    const std::size_t d = a.dim;
    DenseMatrix m = a.dense();
    DenseMatrix v = DenseMatrix::identity(d);
    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off += m(p, q) * m(p, q);
        if (off < 1e-30 * (1.0 + m.max_abs() * m.max_abs())) break;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                double apq = m(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double app = m(p, p), aqq = m(q, q);
                double tau = (aqq - app) / (2.0 * apq);
                double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    double mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    double mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
        if (sweep == max_sweeps - 1)
            throw std::runtime_error("eig_sym: Jacobi sweeps did not converge");
    }
    // sort ascending
    std::vector<std::size_t> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return m(i, i) < m(j, j); });
    EigResult r;
    r.values.resize(d);
    r.vectors = DenseMatrix(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        r.values[i] = m(order[i], order[i]);
        for (std::size_t k = 0; k < d; ++k) r.vectors(k, i) = v(k, order[i]);
    }
    return r;
}

inline double min_eigenvalue(const SymMatrix& a) {
    if (a.dim == 0) return 0.0;
    return eig_sym(a).values.front();
}

// Returns lower-triangular L with L L^T = A, or nullopt if A is not PD
// within the pivot tolerance.
inline std::optional<DenseMatrix> cholesky(const SymMatrix& a, double pivot_tol = 1e-12) {
    const std::size_t d = a.dim;
    DenseMatrix l(d, d);
    double scale = std::max(1.0, a.max_abs());
    for (std::size_t j = 0; j < d; ++j) {
        double diag = a.get(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (diag < pivot_tol * scale) return std::nullopt;
        l(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < d; ++i) {
            double s = a.get(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

inline std::vector<double> forward_substitute(const DenseMatrix& l, const std::vector<double>& b) {
    std::vector<double> x(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

inline std::vector<double> back_substitute_lt(const DenseMatrix& l, const std::vector<double>& b) {
    std::size_t d = b.size();
    std::vector<double> x(d);
    for (std::size_t ii = d; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < d; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

// LU with partial pivoting.
inline std::vector<double> solve_linear(const DenseMatrix& a, const std::vector<double>& b) {
    if (a.rows != a.cols || b.size() != a.rows) throw std::invalid_argument("solve_linear: shape mismatch");
    const std::size_t d = a.rows;
    DenseMatrix lu = a;
    std::vector<std::size_t> perm(d);
    for (std::size_t i = 0; i < d; ++i) perm[i] = i;
    double scale = std::max(1.0, a.max_abs());
    for (std::size_t k = 0; k < d; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < d; ++i)
            if (std::abs(lu(i, k)) > std::abs(lu(piv, k))) piv = i;
        if (std::abs(lu(piv, k)) < 1e-12 * scale)
            throw SingularMatrixError("solve_linear: matrix is singular to working precision");
        if (piv != k) {
            for (std::size_t j = 0; j < d; ++j) std::swap(lu(k, j), lu(piv, j));
            std::swap(perm[k], perm[piv]);
        }
        for (std::size_t i = k + 1; i < d; ++i) {
            lu(i, k) /= lu(k, k);
            for (std::size_t j = k + 1; j < d; ++j) lu(i, j) -= lu(i, k) * lu(k, j);
        }
    }
    std::vector<double> x(d);
    for (std::size_t i = 0; i < d; ++i) x[i] = b[perm[i]];
    for (std::size_t i = 1; i < d; ++i)
        for (std::size_t k = 0; k < i; ++k) x[i] -= lu(i, k) * x[k];
    for (std::size_t ii = d; ii-- > 0;) {
        for (std::size_t k = ii + 1; k < d; ++k) x[ii] -= lu(ii, k) * x[k];
        x[ii] /= lu(ii, ii);
    }
    return x;
}

// Solves Fbar^T P + P Fbar + N = 0 via the Kronecker-product system on vec(P).
// Throws SingularMatrixError when Fbar has eigenvalues symmetric about the
// imaginary axis (no unique solution).
inline SymMatrix solve_lyapunov(const DenseMatrix& fbar, const SymMatrix& n) {
    if (fbar.rows != fbar.cols || n.dim != fbar.rows) throw std::invalid_argument("solve_lyapunov: shape mismatch");
    const std::size_t d = fbar.rows;
    // vec(F^T P + P F) = (I (x) F^T + F^T (x) I) vec(P), column-major vec
    DenseMatrix k(d * d, d * d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t p = 0; p < d; ++p)
                for (std::size_t q = 0; q < d; ++q) {
                    // entry of F^T P: sum_k F(k,i) P(k,j); of P F: sum_k P(i,k) F(k,j)
                    double v = 0.0;
                    if (j == q) v += fbar(p, i);
                    if (i == p) v += fbar(q, j);
                    k(i * d + j, p * d + q) = v;
                }
    std::vector<double> rhs(d * d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) rhs[i * d + j] = -n.get(i, j);
    std::vector<double> x;
    try {
        x = solve_linear(k, rhs);
    } catch (const SingularMatrixError&) {
        throw SingularMatrixError("solve_lyapunov: no unique solution (spectrum symmetric about imaginary axis)");
    }
    // enforce symmetry
    SymMatrix p(d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) p.set(i, j, 0.5 * (x[i * d + j] + x[j * d + i]));
    return p;
}

}  // namespace cbfsos
