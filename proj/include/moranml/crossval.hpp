#pragma once

// Nested k-fold cross-validation. Outer folds score out-of-sample R^2; for
// tree models each outer training portion runs an inner CV over the
// hyperparameter grid and refits the winner.

#include "moranml/lasso.hpp"
#include "moranml/model.hpp"
#include "moranml/parallel.hpp"

#include <Eigen/Dense>

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

struct ModelSpec {
    ModelKind kind = ModelKind::linear;
    std::vector<TreeParams> grid{TreeParams{}};  // tree kinds
    std::vector<std::vector<int>> svc_columns;   // esf_svc
};

struct CVResult {
    std::vector<double> fold_r2;
    double mean_r2 = 0.0;
    std::uint64_t seed = 0;
    std::vector<int> chosen;  // grid index picked in each outer fold
};

/// 1 - SS_res / SS_tot with SS_tot centred on the mean of `y`.
inline double r2_score(const Eigen::VectorXd& y, const Eigen::VectorXd& pred) {
    if (y.size() != pred.size() || y.size() == 0) throw std::invalid_argument("r2_score: length mismatch");
    const double mean = y.mean();
    const double ss_tot = (y.array() - mean).square().sum();
    if (!(ss_tot > 0)) throw std::invalid_argument("r2_score: target has zero variance in this fold");
    return 1.0 - (y - pred).squaredNorm() / ss_tot;
}

inline FeatureBundle take_rows(const FeatureBundle& fb, const std::vector<std::ptrdiff_t>& rows) {
    FeatureBundle out;
    out.mode = fb.mode;
    out.names = fb.names;
    out.nonspatial.resize(static_cast<std::ptrdiff_t>(rows.size()), fb.nonspatial.cols());
    out.spatial.resize(static_cast<std::ptrdiff_t>(rows.size()), fb.spatial.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.nonspatial.row(i) = fb.nonspatial.row(rows[i]);
        if (fb.spatial.cols() > 0) out.spatial.row(i) = fb.spatial.row(rows[i]);
    }
    return out;
}

inline PredictorModel fit_model(const ModelSpec& spec, const TreeParams& hp, const FeatureBundle& fb,
                                const Eigen::VectorXd& y, std::uint64_t seed, int threads = 1) {
    switch (spec.kind) {
        case ModelKind::linear: return fit_ols(fb, y);
        case ModelKind::esf: return fit_esf(fb, y);
        case ModelKind::esf_svc: return fit_esf_svc(fb, spec.svc_columns, y);
        case ModelKind::forest: return fit_tree_ensemble(fb, y, hp, EnsembleMode::bagging, seed, threads);
        case ModelKind::gbm: return fit_tree_ensemble(fb, y, hp, EnsembleMode::boosting, seed, threads);
    }
    throw std::invalid_argument("fit_model: unknown kind");
}

namespace detail {

inline void split_folds(const std::vector<int>& fold, int f, std::vector<std::ptrdiff_t>& train,
                        std::vector<std::ptrdiff_t>& test) {
    train.clear();
    test.clear();
    for (std::size_t i = 0; i < fold.size(); ++i) {
        (fold[i] == f ? test : train).push_back(static_cast<std::ptrdiff_t>(i));
    }
}

/// Grid index with the best mean inner-CV R^2 (first wins ties).
inline int tune(const ModelSpec& spec, const FeatureBundle& fb, const Eigen::VectorXd& y, int k, std::uint64_t seed) {
    if (spec.grid.size() <= 1 || !is_tree_kind(spec.kind)) return 0;
    const auto fold = fold_assignment(fb.rows(), k, stream_seed(seed, "inner_folds"));
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    std::vector<std::ptrdiff_t> train, test;
    for (std::size_t g = 0; g < spec.grid.size(); ++g) {
        double sum = 0;
        for (int f = 0; f < k; ++f) {
            split_folds(fold, f, train, test);
            const auto model = fit_model(spec, spec.grid[g], take_rows(fb, train), take_rows(y, train),
                                         stream_seed(seed, "inner_fit", static_cast<std::uint64_t>(f)));
            sum += r2_score(take_rows(y, test), model.predict(take_rows(fb, test).matrix()));
        }
        if (sum / k > best_score) {
            best_score = sum / k;
            best = static_cast<int>(g);
        }
    }
    return best;
}

}  // namespace detail

/// Nested k-fold CV. `inner_k` < 2 means "same as k". Outer folds may run on
/// up to `threads` workers; every fold draws from its own seed stream.
inline CVResult cross_validate(const ModelSpec& spec, const FeatureBundle& fb, const Eigen::VectorXd& y, int k,
                               std::uint64_t seed, int threads = 1, int inner_k = 0) {
    if (k < 2) throw std::invalid_argument("cross_validate: k must be >= 2");
    if (fb.rows() != y.size()) throw std::invalid_argument("cross_validate: row mismatch");
    if (spec.grid.empty()) throw std::invalid_argument("cross_validate: empty hyperparameter grid");
    if (inner_k < 2) inner_k = k;
    const auto fold = fold_assignment(fb.rows(), k, stream_seed(seed, "outer_folds"));
    CVResult res;
    res.seed = seed;
    res.fold_r2.assign(k, 0.0);
    res.chosen.assign(k, 0);
    parallel_for(static_cast<std::size_t>(k), threads, [&](std::size_t f) {
        std::vector<std::ptrdiff_t> train, test;
        detail::split_folds(fold, static_cast<int>(f), train, test);
        const FeatureBundle fb_train = take_rows(fb, train);
        const Eigen::VectorXd y_train = take_rows(y, train);
        const std::uint64_t fold_seed = stream_seed(seed, "fold", f);
        const int g = detail::tune(spec, fb_train, y_train, inner_k, fold_seed);
        const auto model = fit_model(spec, spec.grid[g], fb_train, y_train, stream_seed(fold_seed, "fit"));
        res.chosen[f] = g;
        res.fold_r2[f] = r2_score(take_rows(y, test), model.predict(take_rows(fb, test).matrix()));
    });
    res.mean_r2 = std::accumulate(res.fold_r2.begin(), res.fold_r2.end(), 0.0) / k;
    return res;
}

}  // namespace moranml
