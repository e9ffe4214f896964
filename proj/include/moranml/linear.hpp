#pragma once

// Least-squares models: plain OLS, ESF (OLS on [1, X, E]) and ESF-SVC
// (OLS on the expanded design X_k, X_k * e_l with X_0 = 1).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

class RankDeficientError : public std::runtime_error {
public:
    RankDeficientError(const std::string& what, std::vector<std::string> columns)
        : std::runtime_error(what), columns_(std::move(columns)) {}
    const std::vector<std::string>& columns() const noexcept { return columns_; }

private:
    std::vector<std::string> columns_;
};

/// Least squares via column-pivoted QR. Throws RankDeficientError naming the
/// columns the pivoting pushed past the numerical rank.
inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                     const std::vector<std::string>& names) {
    if (design.rows() != y.size()) throw std::invalid_argument("least_squares: row mismatch");
    if (design.rows() < design.cols()) {
        throw RankDeficientError("design has more columns (" + std::to_string(design.cols()) + ") than rows (" +
                                     std::to_string(design.rows()) + ")",
                                 {});
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < design.cols()) {
        std::vector<std::string> dependent;
        const auto& perm = qr.colsPermutation().indices();
        for (std::ptrdiff_t k = qr.rank(); k < design.cols(); ++k) {
            const int c = perm[k];
            dependent.push_back(c < static_cast<int>(names.size()) ? names[c] : "col" + std::to_string(c));
        }
        std::sort(dependent.begin(), dependent.end());
        std::string msg = "rank-deficient design; dependent columns:";
        for (const auto& d : dependent) msg += " " + d;
        throw RankDeficientError(msg, dependent);
    }
    return qr.solve(y);
}

/// [1, X] with names "intercept", names...
inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd d(x.rows(), x.cols() + 1);
    d.col(0).setOnes();
    d.rightCols(x.cols()) = x;
    return d;
}

/// Expanded ESF-SVC design for covariates x (n x K) and spatial block e
/// (n x S); columns[k] lists spatial columns interacting with X_k (k = 0 is
/// the intercept). Order: for each k, X_k then X_k * e_l over columns[k].
inline Eigen::MatrixXd svc_design(const Eigen::MatrixXd& x, const Eigen::MatrixXd& e,
                                  const std::vector<std::vector<int>>& columns) {
    const auto n = x.rows();
    const auto K = x.cols();
    if (static_cast<std::ptrdiff_t>(columns.size()) != K + 1) {
        throw std::invalid_argument("svc_design: need one column list per coefficient (K + 1)");
    }
    std::ptrdiff_t width = K + 1;
    for (const auto& c : columns) width += static_cast<std::ptrdiff_t>(c.size());
    Eigen::MatrixXd d(n, width);
    std::ptrdiff_t at = 0;
    for (std::ptrdiff_t k = 0; k <= K; ++k) {
        const Eigen::VectorXd xk = k == 0 ? Eigen::VectorXd::Ones(n) : Eigen::VectorXd(x.col(k - 1));
        d.col(at++) = xk;
        for (int l : columns[k]) {
            if (l < 0 || l >= e.cols()) throw std::invalid_argument("svc_design: spatial column out of range");
            d.col(at++) = xk.cwiseProduct(e.col(l));
        }
    }
    return d;
}

inline std::vector<std::string> svc_names(const std::vector<std::string>& x_names,
                                          const std::vector<std::string>& e_names,
                                          const std::vector<std::vector<int>>& columns) {
    std::vector<std::string> out;
    for (std::size_t k = 0; k < columns.size(); ++k) {
        const std::string xk = k == 0 ? "intercept" : x_names.at(k - 1);
        out.push_back(xk);
        for (int l : columns[k]) out.push_back(xk + "*" + e_names.at(l));
    }
    return out;
}

}  // namespace moranml
