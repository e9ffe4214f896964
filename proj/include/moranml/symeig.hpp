#pragma once

// Dense symmetric eigensolver: Householder reduction to tridiagonal form
// followed by the implicit-shift QL iteration. Only the eigenvectors that
// are requested are back-transformed, which keeps the "top L of n" case
// (L << n) close to the cost of the reduction itself.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

class EigensolverError : public std::runtime_error {
public:
    EigensolverError(const std::string& what, int iterations)
        : std::runtime_error(what), iterations_(iterations) {}
    int iterations() const noexcept { return iterations_; }

private:
    int iterations_;
};

struct SymmetricEigenResult {
    Eigen::VectorXd values;   // descending
    Eigen::MatrixXd vectors;  // unit-norm columns matching `values`
    int ql_iterations = 0;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tridiagonal {
    std::vector<double> diag;
    std::vector<double> off;  // off[i] couples i and i+1; off[n-1] == 0
    // Reflector k acts on indices k+1..n-1 as I - beta v v'.
    std::vector<std::vector<double>> reflectors;
    std::vector<double> betas;
};

inline Tridiagonal householder_tridiagonalize(RowMatrix a) {
    const std::ptrdiff_t n = a.rows();
    Tridiagonal t;
    t.diag.assign(n, 0.0);
    t.off.assign(n, 0.0);
    t.reflectors.resize(n > 2 ? n - 2 : 0);
    t.betas.assign(n > 2 ? n - 2 : 0, 0.0);

    std::vector<double> p(n), w(n);
    for (std::ptrdiff_t k = 0; k + 2 < n; ++k) {
        const std::ptrdiff_t m = n - k - 1;
        const double* x = a.data() + k * n + (k + 1);
        t.diag[k] = a(k, k);

        double tail = 0.0;
        for (std::ptrdiff_t i = 1; i < m; ++i) tail += x[i] * x[i];
        if (tail == 0.0) {
            t.off[k] = x[0];
            continue;
        }
        const double xnorm = std::sqrt(x[0] * x[0] + tail);
        const double alpha = x[0] > 0 ? -xnorm : xnorm;
        std::vector<double> v(x, x + m);
        v[0] -= alpha;
        const double beta = 1.0 / (xnorm * (xnorm + std::abs(x[0])));
        t.off[k] = alpha;

        // p = beta * B v over the trailing block B = a[k+1:, k+1:].
        double vp = 0.0;
        for (std::ptrdiff_t i = 0; i < m; ++i) {
            const double* row = a.data() + (k + 1 + i) * n + (k + 1);
            double s = 0.0;
            for (std::ptrdiff_t j = 0; j < m; ++j) s += row[j] * v[j];
            p[i] = beta * s;
            vp += v[i] * p[i];
        }
        const double kscale = 0.5 * beta * vp;
        for (std::ptrdiff_t i = 0; i < m; ++i) w[i] = p[i] - kscale * v[i];
        for (std::ptrdiff_t i = 0; i < m; ++i) {
            double* row = a.data() + (k + 1 + i) * n + (k + 1);
            const double vi = v[i];
            const double wi = w[i];
            for (std::ptrdiff_t j = 0; j < m; ++j) row[j] -= vi * w[j] + wi * v[j];
        }
        t.reflectors[k] = std::move(v);
        t.betas[k] = beta;
    }
    if (n >= 2) {
        t.diag[n - 2] = a(n - 2, n - 2);
        t.off[n - 2] = a(n - 1, n - 2);
    }
    t.diag[n - 1] = a(n - 1, n - 1);
    t.off[n - 1] = 0.0;
    return t;
}

// Implicit QL on (diag, off). On return diag holds eigenvalues and row i of
// `z` holds the tridiagonal eigenvector for diag[i].
inline int tridiagonal_ql(std::vector<double>& d, std::vector<double>& e, RowMatrix& z) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(d.size());
    const std::ptrdiff_t cols = z.cols();
    constexpr double eps = 2.220446049250313e-16;
    constexpr int max_iter_per_value = 60;
    int total_iter = 0;
    double f = 0.0;
    double tst1 = 0.0;

    for (std::ptrdiff_t l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
        std::ptrdiff_t m = l;
        while (m < n) {
            if (std::abs(e[m]) <= eps * tst1) break;
            ++m;
        }
        if (m > l) {
            int iter = 0;
            do {
                if (++iter > max_iter_per_value) {
                    throw EigensolverError("QL iteration did not converge for eigenvalue " +
                                               std::to_string(l) + " after " +
                                               std::to_string(total_iter) + " iterations",
                                           total_iter);
                }
                ++total_iter;
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (std::ptrdiff_t i = l + 2; i < n; ++i) d[i] -= h;
                f += h;

                p = d[m];
                double c = 1.0, c2 = 1.0, c3 = 1.0;
                const double el1 = e[l + 1];
                double s = 0.0, s2 = 0.0;
                for (std::ptrdiff_t i = m - 1; i >= l; --i) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = std::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    double* zi = z.data() + i * cols;
                    double* zi1 = z.data() + (i + 1) * cols;
                    for (std::ptrdiff_t k = 0; k < cols; ++k) {
                        const double hk = zi1[k];
                        zi1[k] = s * zi[k] + c * hk;
                        zi[k] = c * zi[k] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::abs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }
    return total_iter;
}

}  // namespace detail

/// Eigen-decomposition of a symmetric matrix. Returns the `top_k` largest
/// eigenpairs (all of them when top_k < 0), eigenvalues sorted descending.
/// Only the lower triangle is trusted to be symmetric with the upper one.
inline SymmetricEigenResult symmetric_eigen(const Eigen::MatrixXd& a, std::ptrdiff_t top_k = -1) {
    const std::ptrdiff_t n = a.rows();
    if (n == 0 || a.cols() != n) throw std::invalid_argument("symmetric_eigen: matrix must be square and nonempty");
    if (top_k < 0 || top_k > n) top_k = n;

    SymmetricEigenResult out;
    if (n == 1) {
        out.values = Eigen::VectorXd::Constant(1, a(0, 0));
        out.vectors = Eigen::MatrixXd::Ones(1, 1);
        out.values.conservativeResize(top_k);
        out.vectors.conservativeResize(1, top_k);
        return out;
    }

    detail::Tridiagonal t = detail::householder_tridiagonalize(detail::RowMatrix(a));
    detail::RowMatrix z = detail::RowMatrix::Identity(n, n);
    out.ql_iterations = detail::tridiagonal_ql(t.diag, t.off, z);

    std::vector<std::ptrdiff_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::ptrdiff_t x, std::ptrdiff_t y) { return t.diag[x] > t.diag[y]; });

    detail::RowMatrix sel(top_k, n);
    out.values.resize(top_k);
    for (std::ptrdiff_t r = 0; r < top_k; ++r) {
        out.values[r] = t.diag[order[r]];
        sel.row(r) = z.row(order[r]);
    }
    z.resize(0, 0);

    // x = H_0 H_1 ... H_{n-3} z
    for (std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t.reflectors.size()) - 1; k >= 0; --k) {
        const auto& v = t.reflectors[k];
        if (v.empty()) continue;
        const double beta = t.betas[k];
        const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(v.size());
        for (std::ptrdiff_t r = 0; r < top_k; ++r) {
            double* row = sel.data() + r * n + (k + 1);
            double dot = 0.0;
            for (std::ptrdiff_t j = 0; j < m; ++j) dot += v[j] * row[j];
            dot *= beta;
            for (std::ptrdiff_t j = 0; j < m; ++j) row[j] -= dot * v[j];
        }
    }
    out.vectors = sel.transpose();
    return out;
}

}  // namespace moranml
