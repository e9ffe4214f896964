#pragma once

// LASSO regularization paths by cyclic coordinate descent and eigenvector
// subset selection by 5-fold CV error or BIC.
//
// Columns are standardized (population sd) and the intercept is left
// unpenalized; the minimized objective on the standardized scale is
//
//   (1 / 2n) ||y~ - X~ b||^2 + lambda ||b||_1 .

#include "moranml/parallel.hpp"
#include "moranml/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double lambda) : std::runtime_error(what), lambda_(lambda) {}
    double lambda() const noexcept { return lambda_; }

private:
    double lambda_;
};

struct Standardization {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;  // 0 for constant columns
    double y_mean = 0.0;
};

struct LassoPath {
    std::vector<double> lambdas;             // strictly descending
    std::vector<Eigen::VectorXd> coefs;      // original scale, length p each
    std::vector<double> intercepts;
    std::vector<int> sweeps;                 // coordinate-descent sweeps per lambda
    Standardization standardization;

    std::size_t size() const { return lambdas.size(); }
};

struct LassoOptions {
    int n_lambdas = 100;
    double min_ratio = 1e-4;
    double tolerance = 1e-7;  // max standardized coefficient change per sweep
    int max_sweeps = 100000;
};

namespace detail {

struct StandardizedProblem {
    Eigen::MatrixXd gram;  // X~'X~ / n
    Eigen::VectorXd xty;   // X~'y~ / n
    Standardization st;
    double n = 0;
};

inline StandardizedProblem standardize(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const auto n = x.rows();
    const auto p = x.cols();
    if (y.size() != n) throw std::invalid_argument("lasso: design / response length mismatch");
    if (n < 2 || p < 1) throw std::invalid_argument("lasso: need n >= 2 and p >= 1");
    StandardizedProblem sp;
    sp.n = static_cast<double>(n);
    sp.st.mean = x.colwise().mean();
    sp.st.sd.resize(p);
    Eigen::MatrixXd xs = x.rowwise() - sp.st.mean.transpose();
    for (std::ptrdiff_t j = 0; j < p; ++j) {
        const double sd = std::sqrt(xs.col(j).squaredNorm() / sp.n);
        sp.st.sd[j] = sd > 1e-12 ? sd : 0.0;
        if (sp.st.sd[j] > 0) {
            xs.col(j) /= sd;
        } else {
            xs.col(j).setZero();
        }
    }
    sp.st.y_mean = y.mean();
    const Eigen::VectorXd yc = y.array() - sp.st.y_mean;
    sp.gram.noalias() = xs.transpose() * xs / sp.n;
    sp.xty.noalias() = xs.transpose() * yc / sp.n;
    return sp;
}

inline double soft_threshold(double z, double g) {
    if (z > g) return z - g;
    if (z < -g) return z + g;
    return 0.0;
}

/// Covariance-update coordinate descent at one lambda, warm-started from b.
/// Returns the number of sweeps.
inline int coordinate_descent(const StandardizedProblem& sp, double lambda, Eigen::VectorXd& b,
                              const LassoOptions& opt, std::vector<double>* objective_trace = nullptr) {
    const auto p = b.size();
    // grad[j] = x_j'r / n with r = y - X b
    Eigen::VectorXd grad = sp.xty - sp.gram * b;
    auto objective = [&] {
        // (1/2n)||r||^2 up to the constant y'y/2n: 0.5 b'Gb - b'xty
        return 0.5 * b.dot(sp.gram * b) - b.dot(sp.xty) + lambda * b.lpNorm<1>();
    };
    if (objective_trace) objective_trace->push_back(objective());

    std::vector<char> active(p, 0);
    for (std::ptrdiff_t j = 0; j < p; ++j) active[j] = b[j] != 0.0;
    int sweeps = 0;
    auto sweep = [&](bool active_only) {
        double max_change = 0.0;
        for (std::ptrdiff_t j = 0; j < p; ++j) {
            if (active_only && !active[j]) continue;
            const double gjj = sp.gram(j, j);
            if (gjj <= 0.0) continue;
            const double old = b[j];
            const double updated = soft_threshold(grad[j] + gjj * old, lambda) / gjj;
            const double delta = updated - old;
            if (delta != 0.0) {
                b[j] = updated;
                grad.noalias() -= sp.gram.col(j) * delta;
                max_change = std::max(max_change, std::abs(delta));
                if (updated != 0.0) active[j] = 1;
            }
        }
        ++sweeps;
        if (objective_trace) objective_trace->push_back(objective());
        return max_change;
    };

    for (;;) {
        const double full_change = sweep(false);
        if (full_change < opt.tolerance) break;
        for (;;) {
            if (sweeps >= opt.max_sweeps) {
                throw ConvergenceError("lasso coordinate descent did not converge at lambda " + std::to_string(lambda),
                                       lambda);
            }
            if (sweep(true) < opt.tolerance) break;
        }
        if (sweeps >= opt.max_sweeps) {
            throw ConvergenceError("lasso coordinate descent did not converge at lambda " + std::to_string(lambda),
                                   lambda);
        }
    }
    return sweeps;
}

inline double lambda_max(const StandardizedProblem& sp) { return sp.xty.cwiseAbs().maxCoeff(); }

inline std::vector<double> geometric_grid(double hi, int count, double min_ratio) {
    if (count < 1) throw std::invalid_argument("lasso: n_lambdas must be positive");
    std::vector<double> grid(count);
    if (count == 1) {
        grid[0] = hi;
        return grid;
    }
    const double step = std::log(min_ratio) / (count - 1);
    for (int i = 0; i < count; ++i) grid[i] = hi * std::exp(step * i);
    grid[0] = hi;
    return grid;
}

inline LassoPath run_path(const StandardizedProblem& sp, const std::vector<double>& lambdas, const LassoOptions& opt,
                          bool warm_start = true) {
    for (std::size_t i = 1; i < lambdas.size(); ++i) {
        if (!(lambdas[i] < lambdas[i - 1])) throw std::invalid_argument("lasso: lambda grid must be strictly descending");
    }
    const auto p = sp.xty.size();
    LassoPath path;
    path.standardization = sp.st;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (double lambda : lambdas) {
        if (!warm_start) b.setZero();
        const int sweeps = coordinate_descent(sp, lambda, b, opt);
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
        for (std::ptrdiff_t j = 0; j < p; ++j) {
            if (sp.st.sd[j] > 0) beta[j] = b[j] / sp.st.sd[j];
        }
        path.lambdas.push_back(lambda);
        path.coefs.push_back(beta);
        path.intercepts.push_back(sp.st.y_mean - beta.dot(sp.st.mean));
        path.sweeps.push_back(sweeps);
    }
    return path;
}

}  // namespace detail

inline LassoPath lasso_path(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, const LassoOptions& opt = {}) {
    const auto sp = detail::standardize(design, y);
    const double hi = detail::lambda_max(sp);
    if (!(hi > 0)) {
        // y~ orthogonal to every column: the whole path is zero.
        return detail::run_path(sp, {1.0}, opt);
    }
    return detail::run_path(sp, detail::geometric_grid(hi, opt.n_lambdas, opt.min_ratio), opt);
}

/// Path over a caller-supplied descending grid (used for CV folds).
inline LassoPath lasso_path(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, const std::vector<double>& lambdas,
                            const LassoOptions& opt = {}, bool warm_start = true) {
    return detail::run_path(detail::standardize(design, y), lambdas, opt, warm_start);
}

enum class SelectionCriterion { none, mse_cv, bic };

inline const char* to_string(SelectionCriterion c) {
    switch (c) {
        case SelectionCriterion::none: return "none";
        case SelectionCriterion::mse_cv: return "mse_cv";
        case SelectionCriterion::bic: return "bic";
    }
    return "?";
}

struct SelectedSubset {
    std::vector<int> indices;  // ascending candidate column indices
    SelectionCriterion criterion = SelectionCriterion::none;
    double chosen_lambda = 0.0;
    double score = 0.0;
};

inline SelectedSubset select_none(std::ptrdiff_t p) {
    SelectedSubset s;
    for (int j = 0; j < p; ++j) s.indices.push_back(j);
    return s;
}

namespace detail {

inline std::vector<int> nonzero_indices(const Eigen::VectorXd& beta) {
    std::vector<int> out;
    for (std::ptrdiff_t j = 0; j < beta.size(); ++j) {
        if (beta[j] != 0.0) out.push_back(static_cast<int>(j));
    }
    return out;
}

}  // namespace detail

/// Fold id per row: seeded shuffle of 0..n-1 cut into contiguous blocks.
inline std::vector<int> fold_assignment(std::ptrdiff_t n, int folds, std::uint64_t seed) {
    if (folds < 2 || n < folds) throw std::invalid_argument("fold_assignment: need 2 <= folds <= n");
    std::vector<std::ptrdiff_t> order(n);
    for (std::ptrdiff_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed, "folds");
    rng.shuffle(order);
    std::vector<int> fold(n);
    for (std::ptrdiff_t pos = 0; pos < n; ++pos) {
        fold[order[pos]] = static_cast<int>(pos * folds / n);
    }
    return fold;
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<std::ptrdiff_t>& rows) {
    Eigen::MatrixXd out(static_cast<std::ptrdiff_t>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = x.row(rows[i]);
    return out;
}

inline Eigen::VectorXd take_rows(const Eigen::VectorXd& v, const std::vector<std::ptrdiff_t>& rows) {
    Eigen::VectorXd out(static_cast<std::ptrdiff_t>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
    return out;
}

/// LASSO-MSE: lambda minimizing mean held-out MSE over a seeded fold
/// partition (grid from the full data), then the full-data fit at that
/// lambda. `mean_cv_mse`, when given, receives the CV curve.
inline SelectedSubset select_mse_cv(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, int folds,
                                    std::uint64_t seed, const LassoOptions& opt = {}, int threads = 1,
                                    std::vector<double>* mean_cv_mse = nullptr) {
    const auto n = design.rows();
    if (n < folds) throw std::invalid_argument("select_mse_cv: fewer rows than folds");
    const LassoPath full = lasso_path(design, y, opt);
    const auto fold = fold_assignment(n, folds, seed);

    std::vector<std::vector<double>> fold_mse(folds);
    parallel_for(static_cast<std::size_t>(folds), threads, [&](std::size_t f) {
        std::vector<std::ptrdiff_t> train, test;
        for (std::ptrdiff_t i = 0; i < n; ++i) (fold[i] == static_cast<int>(f) ? test : train).push_back(i);
        const LassoPath path = lasso_path(take_rows(design, train), take_rows(y, train), full.lambdas, opt);
        const Eigen::MatrixXd xt = take_rows(design, test);
        const Eigen::VectorXd yt = take_rows(y, test);
        auto& out = fold_mse[f];
        for (std::size_t k = 0; k < path.size(); ++k) {
            const Eigen::VectorXd resid = yt - ((xt * path.coefs[k]).array() + path.intercepts[k]).matrix();
            out.push_back(resid.squaredNorm() / static_cast<double>(yt.size()));
        }
    });

    std::vector<double> curve(full.size(), 0.0);
    for (const auto& fm : fold_mse)
        for (std::size_t k = 0; k < curve.size(); ++k) curve[k] += fm[k] / folds;
    std::size_t best = 0;
    for (std::size_t k = 1; k < curve.size(); ++k) {
        if (curve[k] < curve[best]) best = k;
    }
    if (mean_cv_mse) *mean_cv_mse = curve;

    SelectedSubset s;
    s.criterion = SelectionCriterion::mse_cv;
    s.chosen_lambda = full.lambdas[best];
    s.score = curve[best];
    s.indices = detail::nonzero_indices(full.coefs[best]);
    return s;
}

/// BIC(lambda) = n ln(RSS / n) + k ln n, k = nonzero coefficients + 1.
inline std::vector<double> bic_scores(const LassoPath& path, const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
    const double n = static_cast<double>(design.rows());
    std::vector<double> out;
    out.reserve(path.size());
    for (std::size_t k = 0; k < path.size(); ++k) {
        const Eigen::VectorXd resid = y - ((design * path.coefs[k]).array() + path.intercepts[k]).matrix();
        const double rss = std::max(resid.squaredNorm(), std::numeric_limits<double>::min());
        const auto nonzero = static_cast<double>(detail::nonzero_indices(path.coefs[k]).size());
        out.push_back(n * std::log(rss / n) + (nonzero + 1.0) * std::log(n));
    }
    return out;
}

inline SelectedSubset select_bic(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, const LassoOptions& opt = {}) {
    const LassoPath path = lasso_path(design, y, opt);
    const auto scores = bic_scores(path, design, y);
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k) {
        if (scores[k] < scores[best]) best = k;
    }
    SelectedSubset s;
    s.criterion = SelectionCriterion::bic;
    s.chosen_lambda = path.lambdas[best];
    s.score = scores[best];
    s.indices = detail::nonzero_indices(path.coefs[best]);
    return s;
}

inline SelectedSubset select_subset(SelectionCriterion c, const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                    std::uint64_t seed, int folds = 5, int threads = 1) {
    switch (c) {
        case SelectionCriterion::none: return select_none(design.cols());
        case SelectionCriterion::mse_cv: return select_mse_cv(design, y, folds, seed, {}, threads);
        case SelectionCriterion::bic: return select_bic(design, y);
    }
    throw std::invalid_argument("select_subset: unknown criterion");
}

// Which regression the eigenvector selection runs.
//   eigen_only:      y on [E]
//   svc_interaction: y on [E, X_1..X_K, X_1∘E, .., X_K∘E], the ESF-SVC design;
//                    block k of the interaction columns gives the subset for
//                    coefficient k, and the union is the shared subset.
// The covariates enter the spatial signal only through products with the
// eigenvectors, so y on E alone sees little beyond noise.
enum class SelectionDesign { eigen_only, svc_interaction };

inline const char* to_string(SelectionDesign d) { return d == SelectionDesign::eigen_only ? "eigen_only" : "svc"; }

struct EigenSelection {
    SelectedSubset shared;               // union over coefficients
    std::vector<SelectedSubset> per_k;   // k = 0 intercept, 1..K covariates
};

inline Eigen::MatrixXd selection_design(const Eigen::MatrixXd& e, const Eigen::MatrixXd& x, SelectionDesign design) {
    if (design == SelectionDesign::eigen_only) return e;
    if (x.rows() != e.rows()) throw std::invalid_argument("selection_design: row mismatch");
    const auto n = e.rows();
    const auto L = e.cols();
    const auto K = x.cols();
    Eigen::MatrixXd d(n, L + K + K * L);
    d.leftCols(L) = e;
    d.middleCols(L, K) = x;
    for (std::ptrdiff_t k = 0; k < K; ++k) {
        for (std::ptrdiff_t l = 0; l < L; ++l) {
            d.col(L + K + k * L + l) = e.col(l).cwiseProduct(x.col(k));
        }
    }
    return d;
}

/// Eigenvector subsets for the shared and per-coefficient modes from a single
/// LASSO fit. With criterion none every candidate is kept everywhere.
inline EigenSelection select_eigenvectors(const Eigen::MatrixXd& e, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                          SelectionCriterion criterion, SelectionDesign design, std::uint64_t seed,
                                          int folds = 5, int threads = 1) {
    const auto L = e.cols();
    const auto K = x.cols();
    EigenSelection out;
    if (criterion == SelectionCriterion::none) {
        out.shared = select_none(L);
        out.per_k.assign(static_cast<std::size_t>(K) + 1, out.shared);
        return out;
    }
    const SelectedSubset raw = select_subset(criterion, selection_design(e, x, design), y, seed, folds, threads);
    auto blank = [&] {
        SelectedSubset s;
        s.criterion = raw.criterion;
        s.chosen_lambda = raw.chosen_lambda;
        s.score = raw.score;
        return s;
    };
    if (design == SelectionDesign::eigen_only) {
        out.shared = raw;
        out.per_k.assign(static_cast<std::size_t>(K) + 1, raw);
        return out;
    }
    out.per_k.assign(static_cast<std::size_t>(K) + 1, blank());
    std::vector<char> any(L, 0);
    for (int j : raw.indices) {
        if (j < L) {
            out.per_k[0].indices.push_back(j);
            any[j] = 1;
        } else if (j >= L + K) {
            const int k = (j - static_cast<int>(L + K)) / static_cast<int>(L);
            const int l = (j - static_cast<int>(L + K)) % static_cast<int>(L);
            out.per_k[k + 1].indices.push_back(l);
            any[l] = 1;
        }
    }
    out.shared = blank();
    for (int l = 0; l < L; ++l) {
        if (any[l]) out.shared.indices.push_back(l);
    }
    return out;
}

/// CSV `criterion,lambda,index_list` with space-separated indices.
inline void save_selection(const SelectedSubset& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write selection: " + path);
    out << "criterion,lambda,index_list\n" << to_string(s.criterion) << ',';
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", s.chosen_lambda);
    out << buf << ',';
    for (std::size_t k = 0; k < s.indices.size(); ++k) out << (k ? " " : "") << s.indices[k];
    out << '\n';
}

}  // namespace moranml
