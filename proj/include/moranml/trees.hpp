#pragma once

// CART regression trees (exact splits on presorted columns, variance
// reduction) and the two ensemble modes built from them: bagging with
// bootstrap rows and per-node feature sampling, and stagewise boosting on
// squared-error residuals with shrinkage.
//
// Split ties go to the lowest feature index, then the lowest threshold.

#include "moranml/parallel.hpp"
#include "moranml/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

struct TreeParams {
    int max_depth = 6;
    int n_trees = 300;
    double learning_rate = 0.1;  // boosting only
    int min_leaf = 5;
    double subsample = 0.8;      // boosting: row fraction per tree, without replacement
    double max_features = 1.0;   // fraction of columns tried per node
    bool bootstrap = true;       // bagging: resample rows with replacement
    bool early_stopping = true;  // boosting: hold out a slice and stop on no improvement
    double validation_fraction = 0.1;
    int patience = 20;

    bool operator==(const TreeParams&) const = default;
};

enum class EnsembleMode { bagging, boosting };

inline void validate(const TreeParams& hp, EnsembleMode mode) {
    auto fail = [](const std::string& m) { throw std::invalid_argument("TreeParams: " + m); };
    if (hp.max_depth < 0 || hp.max_depth > 12) fail("max_depth outside [0, 12]");
    if (hp.n_trees < 1 || hp.n_trees > 2000) fail("n_trees outside [1, 2000]");
    if (!(hp.learning_rate > 0 && hp.learning_rate <= 1)) fail("learning_rate outside (0, 1]");
    if (hp.min_leaf < 1) fail("min_leaf < 1");
    if (!(hp.subsample > 0 && hp.subsample <= 1)) fail("subsample outside (0, 1]");
    if (!(hp.max_features > 0 && hp.max_features <= 1)) fail("max_features outside (0, 1]");
    if (mode == EnsembleMode::boosting && hp.early_stopping) {
        if (!(hp.validation_fraction > 0 && hp.validation_fraction <= 0.5)) fail("validation_fraction outside (0, 0.5]");
        if (hp.patience < 1) fail("patience < 1");
    }
}

struct RegressionTree {
    // Flat node arrays; feature < 0 marks a leaf.
    std::vector<int> feature;
    std::vector<double> threshold;
    std::vector<int> left, right;
    std::vector<double> value;

    std::size_t size() const { return feature.size(); }

    template <class Row>
    double predict_row(const Row& row) const {
        int node = 0;
        while (feature[node] >= 0) node = row(feature[node]) <= threshold[node] ? left[node] : right[node];
        return value[node];
    }

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
        Eigen::VectorXd out(x.rows());
        for (std::ptrdiff_t i = 0; i < x.rows(); ++i) {
            out[i] = predict_row([&](int f) { return x(i, f); });
        }
        return out;
    }

    int depth() const {
        std::vector<int> d(size(), 0);
        int best = 0;
        for (std::size_t k = 0; k < size(); ++k) {
            if (feature[k] >= 0) {
                d[left[k]] = d[k] + 1;
                d[right[k]] = d[k] + 1;
                best = std::max(best, d[k] + 1);
            }
        }
        return best;
    }
};

/// Column argsorts of a design, computed once and shared by every tree grown
/// on it. Read-only after construction.
class TreeBuilder {
public:
    explicit TreeBuilder(const Eigen::MatrixXd& x) : x_(x), n_(x.rows()), p_(x.cols()) {
        if (n_ < 1 || p_ < 1) throw std::invalid_argument("TreeBuilder: empty design");
        if (!x.allFinite()) throw std::invalid_argument("TreeBuilder: non-finite feature values");
        sorted_.resize(static_cast<std::size_t>(n_ * p_));
        for (std::ptrdiff_t f = 0; f < p_; ++f) {
            int* ord = sorted_.data() + f * n_;
            std::iota(ord, ord + n_, 0);
            std::stable_sort(ord, ord + n_, [&](int a, int b) { return x(a, f) < x(b, f); });
        }
    }

    std::ptrdiff_t rows() const { return n_; }
    std::ptrdiff_t cols() const { return p_; }

    /// Grows one tree on `target` with integer row weights (bootstrap counts
    /// or 0/1 subsample flags). `rng` drives per-node feature sampling and is
    /// only touched when max_features < 1.
    RegressionTree build(const Eigen::VectorXd& target, const std::vector<int>& weight, int max_depth, int min_leaf,
                         double max_features, Rng& rng) const {
        if (target.size() != n_ || static_cast<std::ptrdiff_t>(weight.size()) != n_) {
            throw std::invalid_argument("TreeBuilder::build: length mismatch");
        }
        std::ptrdiff_t m = 0;
        for (int w : weight) m += w > 0;
        if (m == 0) throw std::invalid_argument("TreeBuilder::build: no rows with positive weight");

        // per-feature active row lists, value inline; a node is the same
        // [begin, end) range in every list
        struct Entry {
            double x;
            int row;
        };
        std::vector<Entry> buf(static_cast<std::size_t>(m * p_));
        for (std::ptrdiff_t f = 0; f < p_; ++f) {
            const int* ord = sorted_.data() + f * n_;
            Entry* dst = buf.data() + f * m;
            for (std::ptrdiff_t k = 0; k < n_; ++k) {
                if (weight[ord[k]] > 0) *dst++ = {x_(ord[k], f), ord[k]};
            }
        }
        std::vector<double> w(n_), wt(n_);
        for (std::ptrdiff_t i = 0; i < n_; ++i) {
            w[i] = weight[i];
            wt[i] = weight[i] * target[i];
        }

        const int n_try = std::max(1, static_cast<int>(std::lround(max_features * static_cast<double>(p_))));
        std::vector<int> all_features(p_);
        std::iota(all_features.begin(), all_features.end(), 0);

        RegressionTree tree;
        struct Task {
            std::ptrdiff_t begin, end;
            int depth, node;
        };
        auto new_node = [&] {
            tree.feature.push_back(-1);
            tree.threshold.push_back(0.0);
            tree.left.push_back(-1);
            tree.right.push_back(-1);
            tree.value.push_back(0.0);
            return static_cast<int>(tree.feature.size() - 1);
        };
        std::vector<Task> stack{{0, m, 0, new_node()}};
        std::vector<char> goes_left(n_, 0);
        std::vector<Entry> scratch(m);
        std::vector<int> candidates;

        while (!stack.empty()) {
            const Task t = stack.back();
            stack.pop_back();
            const std::ptrdiff_t len = t.end - t.begin;
            const Entry* node0 = buf.data() + t.begin;
            double w_sum = 0, s_sum = 0, ss_sum = 0;
            for (std::ptrdiff_t k = 0; k < len; ++k) {
                const int r = node0[k].row;
                w_sum += w[r];
                s_sum += wt[r];
                ss_sum += wt[r] * target[r];
            }
            tree.value[t.node] = s_sum / w_sum;
            const double sse = ss_sum - s_sum * s_sum / w_sum;
            if (t.depth >= max_depth || w_sum < 2.0 * min_leaf || !(sse > 1e-13 * ss_sum)) continue;

            if (n_try < p_) {
                const auto pick = rng.sample_without_replacement(p_, n_try);
                candidates.assign(pick.begin(), pick.end());
                std::sort(candidates.begin(), candidates.end());
            } else {
                candidates = all_features;
            }

            const double parent = s_sum * s_sum / w_sum;
            double best_gain = 0.0;
            int best_feature = -1;
            double best_threshold = 0.0;
            for (int f : candidates) {
                const Entry* e = buf.data() + f * m + t.begin;
                double wl = 0, sl = 0;
                for (std::ptrdiff_t k = 0; k + 1 < len; ++k) {
                    const int r = e[k].row;
                    wl += w[r];
                    sl += wt[r];
                    if (!(e[k].x < e[k + 1].x)) continue;
                    const double wr = w_sum - wl;
                    if (wl < min_leaf || wr < min_leaf) continue;
                    const double sr = s_sum - sl;
                    const double gain = sl * sl / wl + sr * sr / wr - parent;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_feature = f;
                        const double a = e[k].x, b = e[k + 1].x;
                        double mid = 0.5 * (a + b);
                        if (!(mid < b)) mid = a;
                        best_threshold = mid;
                    }
                }
            }
            if (best_feature < 0 || best_gain <= 1e-12 * sse) continue;

            // stable, branch-free partition of every feature list
            const Entry* split = buf.data() + best_feature * m + t.begin;
            std::ptrdiff_t n_left = 0;
            for (std::ptrdiff_t k = 0; k < len; ++k) {
                const char g = split[k].x <= best_threshold;
                goes_left[split[k].row] = g;
                n_left += g;
            }
            for (std::ptrdiff_t f = 0; f < p_; ++f) {
                Entry* e = buf.data() + f * m + t.begin;
                std::ptrdiff_t li = 0, ri = 0;
                for (std::ptrdiff_t k = 0; k < len; ++k) {
                    const Entry v = e[k];
                    const std::ptrdiff_t g = goes_left[v.row];
                    e[li] = v;
                    scratch[ri] = v;
                    li += g;
                    ri += 1 - g;
                }
                std::copy(scratch.begin(), scratch.begin() + ri, e + li);
            }
            tree.feature[t.node] = best_feature;
            tree.threshold[t.node] = best_threshold;
            const int l = new_node();
            const int r = new_node();
            tree.left[t.node] = l;
            tree.right[t.node] = r;
            // push right first so the left subtree is numbered first
            stack.push_back({t.begin + n_left, t.end, t.depth + 1, r});
            stack.push_back({t.begin, t.begin + n_left, t.depth + 1, l});
        }
        return tree;
    }

private:
    const Eigen::MatrixXd& x_;
    std::ptrdiff_t n_, p_;
    std::vector<int> sorted_;
};

struct TreeEnsemble {
    EnsembleMode mode = EnsembleMode::boosting;
    double base = 0.0;           // boosting initial prediction
    double learning_rate = 1.0;  // boosting shrinkage
    std::vector<RegressionTree> trees;
    std::vector<double> train_loss;       // boosting: training MSE after each stage (stage 0 = base)
    std::vector<double> validation_loss;  // boosting with early stopping

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
        Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
        if (mode == EnsembleMode::bagging) {
            for (const auto& t : trees) out += t.predict(x);
            if (!trees.empty()) out /= static_cast<double>(trees.size());
        } else {
            out.setConstant(base);
            for (const auto& t : trees) out += learning_rate * t.predict(x);
        }
        return out;
    }
};

/// Single CART tree on every row (weight 1, all features).
inline RegressionTree fit_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int max_depth, int min_leaf = 1) {
    TreeBuilder builder(x);
    Rng unused(0);
    return builder.build(y, std::vector<int>(x.rows(), 1), max_depth, min_leaf, 1.0, unused);
}

inline TreeEnsemble fit_bagging(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const TreeParams& hp,
                                std::uint64_t seed, int threads = 1) {
    validate(hp, EnsembleMode::bagging);
    if (x.rows() != y.size()) throw std::invalid_argument("fit_bagging: row mismatch");
    const TreeBuilder builder(x);
    const auto n = x.rows();
    TreeEnsemble ens;
    ens.mode = EnsembleMode::bagging;
    ens.trees.resize(hp.n_trees);
    parallel_for(static_cast<std::size_t>(hp.n_trees), threads, [&](std::size_t t) {
        Rng rng(seed, "tree", t);
        std::vector<int> w(n, 0);
        if (hp.bootstrap) {
            for (std::ptrdiff_t i = 0; i < n; ++i) ++w[rng.below(static_cast<std::uint64_t>(n))];
        } else {
            std::fill(w.begin(), w.end(), 1);
        }
        ens.trees[t] = builder.build(y, w, hp.max_depth, hp.min_leaf, hp.max_features, rng);
    });
    return ens;
}

inline TreeEnsemble fit_boosting(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const TreeParams& hp,
                                 std::uint64_t seed) {
    validate(hp, EnsembleMode::boosting);
    if (x.rows() != y.size()) throw std::invalid_argument("fit_boosting: row mismatch");
    const auto n = x.rows();
    std::vector<char> is_train(n, 1);
    std::vector<int> train_rows, valid_rows;
    if (hp.early_stopping) {
        const auto n_valid = static_cast<std::ptrdiff_t>(std::lround(hp.validation_fraction * static_cast<double>(n)));
        if (n_valid < 1 || n - n_valid < 2) throw std::invalid_argument("fit_boosting: too few rows for early stopping");
        Rng rng(seed, "validation");
        for (auto i : rng.sample_without_replacement(n, n_valid)) is_train[i] = 0;
    }
    for (std::ptrdiff_t i = 0; i < n; ++i) (is_train[i] ? train_rows : valid_rows).push_back(static_cast<int>(i));

    const TreeBuilder builder(x);
    TreeEnsemble ens;
    ens.mode = EnsembleMode::boosting;
    ens.learning_rate = hp.learning_rate;
    double base = 0;
    for (int i : train_rows) base += y[i];
    ens.base = base / static_cast<double>(train_rows.size());

    Eigen::VectorXd f = Eigen::VectorXd::Constant(n, ens.base);
    auto mse = [&](const std::vector<int>& rows) {
        double s = 0;
        for (int i : rows) s += (y[i] - f[i]) * (y[i] - f[i]);
        return s / static_cast<double>(rows.size());
    };
    ens.train_loss.push_back(mse(train_rows));
    if (!valid_rows.empty()) ens.validation_loss.push_back(mse(valid_rows));

    const auto n_train = static_cast<std::ptrdiff_t>(train_rows.size());
    const auto n_sub = std::max<std::ptrdiff_t>(1, std::lround(hp.subsample * static_cast<double>(n_train)));
    std::size_t best_stage = 0;
    double best_valid = valid_rows.empty() ? 0.0 : ens.validation_loss[0];
    Eigen::VectorXd residual(n);
    for (int t = 0; t < hp.n_trees; ++t) {
        Rng rng(seed, "tree", static_cast<std::uint64_t>(t));
        std::vector<int> w(n, 0);
        if (n_sub < n_train) {
            for (auto k : rng.sample_without_replacement(n_train, n_sub)) w[train_rows[k]] = 1;
        } else {
            for (int i : train_rows) w[i] = 1;
        }
        residual = y - f;
        RegressionTree tree = builder.build(residual, w, hp.max_depth, hp.min_leaf, hp.max_features, rng);
        f += hp.learning_rate * tree.predict(x);
        ens.trees.push_back(std::move(tree));
        ens.train_loss.push_back(mse(train_rows));
        if (!valid_rows.empty()) {
            const double v = mse(valid_rows);
            ens.validation_loss.push_back(v);
            if (v < best_valid) {
                best_valid = v;
                best_stage = ens.trees.size();
            } else if (static_cast<int>(ens.trees.size() - best_stage) >= hp.patience) {
                break;
            }
        }
    }
    if (hp.early_stopping) {
        ens.trees.resize(best_stage);
        ens.train_loss.resize(best_stage + 1);
        ens.validation_loss.resize(best_stage + 1);
    }
    return ens;
}

}  // namespace moranml
