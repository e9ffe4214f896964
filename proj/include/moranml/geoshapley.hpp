#pragma once

// GeoShapley: Shapley decomposition with every spatial column acting as one
// joint player GEO,
//
//   f(x) = phi0 + phi_GEO + sum_j phi_j + sum_j phi_(GEO,j)
//
// under the interventional value function v(S) = E_b f(x_S, b_-S) over a
// fixed background sample. phi_(GEO,j) is the full Shapley interaction
// index between GEO and feature j; half of it is taken out of each of the
// two main effects so the four parts add up to the prediction.

#include "moranml/geometry.hpp"
#include "moranml/model.hpp"
#include "moranml/parallel.hpp"
#include "moranml/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

struct PlayerPartition {
    std::vector<int> geo_columns;      // toggled jointly
    std::vector<int> feature_players;  // one column each

    int n_features() const { return static_cast<int>(feature_players.size()); }
    bool has_geo() const { return !geo_columns.empty(); }
    /// Players are the features 0..p-1, then GEO (index p) when present.
    int n_players() const { return n_features() + (has_geo() ? 1 : 0); }
};

/// Covariates are the first `n_nonspatial` columns, the spatial block the rest.
inline PlayerPartition make_partition(int n_nonspatial, int n_spatial) {
    PlayerPartition p;
    for (int j = 0; j < n_nonspatial; ++j) p.feature_players.push_back(j);
    for (int j = 0; j < n_spatial; ++j) p.geo_columns.push_back(n_nonspatial + j);
    return p;
}

inline PlayerPartition make_partition(const PredictorModel& m) {
    return make_partition(m.n_nonspatial, static_cast<int>(m.n_inputs()) - m.n_nonspatial);
}

inline void validate(const PlayerPartition& p, std::ptrdiff_t n_columns) {
    std::vector<int> seen(static_cast<std::size_t>(n_columns), 0);
    auto mark = [&](int c) {
        if (c < 0 || c >= n_columns) throw std::invalid_argument("PlayerPartition: column out of range");
        if (seen[c]++) throw std::invalid_argument("PlayerPartition: column in two players");
    };
    for (int c : p.geo_columns) mark(c);
    for (int c : p.feature_players) mark(c);
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
        throw std::invalid_argument("PlayerPartition: some model column belongs to no player");
    }
    if (p.n_players() < 1) throw std::invalid_argument("PlayerPartition: no players");
}

/// Batch prediction function; the explainer only ever calls this.
using Predictor = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

inline Predictor as_predictor(const PredictorModel& model) {
    return [&model](const Eigen::MatrixXd& x) { return model.predict(x); };
}

/// v(S) for one instance and any set of coalitions (bitmask over players).
class CoalitionEvaluator {
public:
    CoalitionEvaluator(Predictor predict, Eigen::MatrixXd background, PlayerPartition partition)
        : predict_(std::move(predict)), background_(std::move(background)), partition_(std::move(partition)) {
        if (background_.rows() < 1) throw std::invalid_argument("value_function: empty background");
        validate(partition_, background_.cols());
        if (partition_.n_players() > 62) throw std::invalid_argument("value_function: too many players");
        columns_.resize(partition_.n_players());
        for (int j = 0; j < partition_.n_features(); ++j) columns_[j] = {partition_.feature_players[j]};
        if (partition_.has_geo()) columns_.back() = partition_.geo_columns;
        base_ = predict_(background_).mean();
    }

    CoalitionEvaluator(const PredictorModel& model, Eigen::MatrixXd background, PlayerPartition partition)
        : CoalitionEvaluator(as_predictor(model), check_schema(model, std::move(background)), std::move(partition)) {}

    int players() const { return partition_.n_players(); }
    const PlayerPartition& partition() const { return partition_; }
    const Eigen::MatrixXd& background() const { return background_; }
    /// v(empty set): mean background prediction.
    double base_value() const { return base_; }

    std::vector<double> values(const Eigen::RowVectorXd& instance, const std::vector<std::uint64_t>& masks) const {
        if (instance.size() != background_.cols()) throw std::invalid_argument("value_function: instance schema mismatch");
        const auto g = background_.rows();
        const auto m = static_cast<std::ptrdiff_t>(masks.size());
        Eigen::MatrixXd composite(g * m, background_.cols());
        for (std::ptrdiff_t k = 0; k < m; ++k) {
            auto block = composite.middleRows(k * g, g);
            block = background_;
            for (int pl = 0; pl < players(); ++pl) {
                if (!((masks[k] >> pl) & 1U)) continue;
                for (int c : columns_[pl]) block.col(c).setConstant(instance[c]);
            }
        }
        const Eigen::VectorXd pred = predict_(composite);
        std::vector<double> out(static_cast<std::size_t>(m));
        for (std::ptrdiff_t k = 0; k < m; ++k) out[k] = pred.segment(k * g, g).mean();
        return out;
    }

    double value(const Eigen::RowVectorXd& instance, std::uint64_t mask) const { return values(instance, {mask})[0]; }

private:
    static Eigen::MatrixXd check_schema(const PredictorModel& model, Eigen::MatrixXd background) {
        if (background.cols() != model.n_inputs()) throw std::invalid_argument("value_function: background schema mismatch");
        return background;
    }

    Predictor predict_;
    Eigen::MatrixXd background_;
    PlayerPartition partition_;
    std::vector<std::vector<int>> columns_;
    double base_ = 0.0;
};

inline CoalitionEvaluator value_function(const PredictorModel& model, const Eigen::MatrixXd& background,
                                         const PlayerPartition& partition) {
    return CoalitionEvaluator(model, background, partition);
}

/// g rows drawn uniformly without replacement (g = min(n, size)).
inline Eigen::MatrixXd sample_background(const Eigen::MatrixXd& x, std::ptrdiff_t size, std::uint64_t seed) {
    const auto g = std::min<std::ptrdiff_t>(x.rows(), size);
    if (g < 1) throw std::invalid_argument("sample_background: no rows");
    Rng rng(seed, "background");
    auto idx = rng.sample_without_replacement(x.rows(), g);
    std::sort(idx.begin(), idx.end());
    Eigen::MatrixXd out(g, x.cols());
    for (std::ptrdiff_t k = 0; k < g; ++k) out.row(k) = x.row(idx[k]);
    return out;
}

struct GeoShapleyExplanation {
    double phi0 = 0.0;
    Eigen::VectorXd phi_geo;    // r
    Eigen::MatrixXd phi;        // r x p, main effects
    Eigen::MatrixXd phi_geo_j;  // r x p, GEO x feature interactions
    Eigen::MatrixXd shapley;    // r x q, plain Shapley values (features, then GEO)
    Eigen::VectorXd prediction;
    Eigen::MatrixXd background;

    std::ptrdiff_t rows() const { return prediction.size(); }

    /// phi0 + phi_geo + sum phi + sum phi_geo_j for each row.
    Eigen::VectorXd total() const {
        return (phi0 + phi_geo.array() + phi.rowwise().sum().array() + phi_geo_j.rowwise().sum().array()).matrix();
    }
};

namespace detail {

inline double factorial(int k) {
    double f = 1;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

/// Splits raw Shapley values and GEO interactions into the four parts.
inline void allocate_row(GeoShapleyExplanation& ex, std::ptrdiff_t row, const std::vector<double>& shap,
                         const std::vector<double>& inter, int p, bool has_geo) {
    double geo = has_geo ? shap[p] : 0.0;
    for (int j = 0; j < p; ++j) {
        const double ij = has_geo ? inter[j] : 0.0;
        ex.phi(row, j) = shap[j] - 0.5 * ij;
        ex.phi_geo_j(row, j) = ij;
        geo -= 0.5 * ij;
        ex.shapley(row, j) = shap[j];
    }
    if (has_geo) ex.shapley(row, p) = shap[p];
    ex.phi_geo[row] = geo;
}

inline GeoShapleyExplanation blank_explanation(const CoalitionEvaluator& ev, std::ptrdiff_t r) {
    const int p = ev.partition().n_features();
    GeoShapleyExplanation ex;
    ex.phi0 = ev.base_value();
    ex.phi_geo = Eigen::VectorXd::Zero(r);
    ex.phi = Eigen::MatrixXd::Zero(r, p);
    ex.phi_geo_j = Eigen::MatrixXd::Zero(r, p);
    ex.shapley = Eigen::MatrixXd::Zero(r, ev.players());
    ex.prediction = Eigen::VectorXd::Zero(r);
    ex.background = ev.background();
    return ex;
}

}  // namespace detail

constexpr int kMaxExactPlayers = 12;

/// Exact enumeration of all 2^q coalitions per row.
inline GeoShapleyExplanation explain_exact(const CoalitionEvaluator& ev, const Eigen::MatrixXd& rows, int threads = 1) {
    const PlayerPartition& partition = ev.partition();
    const int q = ev.players();
    if (q > kMaxExactPlayers) {
        throw std::invalid_argument("explain_exact: " + std::to_string(q) + " players exceeds " +
                                    std::to_string(kMaxExactPlayers) + "; use explain_sampled");
    }
    const int p = partition.n_features();
    const bool has_geo = partition.has_geo();
    const std::uint64_t full = (std::uint64_t{1} << q) - 1;
    std::vector<std::uint64_t> masks(full + 1);
    for (std::uint64_t s = 0; s <= full; ++s) masks[s] = s;

    // Shapley weights |S|! (q - |S| - 1)! / q! and interaction weights
    // |S|! (q - |S| - 2)! / (q - 1)!
    std::vector<double> w_shap(q, 0.0), w_int(q, 0.0);
    for (int s = 0; s < q; ++s) w_shap[s] = detail::factorial(s) * detail::factorial(q - s - 1) / detail::factorial(q);
    for (int s = 0; s + 2 <= q; ++s) {
        w_int[s] = detail::factorial(s) * detail::factorial(q - s - 2) / detail::factorial(q - 1);
    }

    auto ex = detail::blank_explanation(ev, rows.rows());
    parallel_for(static_cast<std::size_t>(rows.rows()), threads, [&](std::size_t i) {
        const Eigen::RowVectorXd inst = rows.row(i);
        std::vector<double> v = ev.values(inst, masks);
        v[0] = ev.base_value();
        std::vector<double> shap(q, 0.0), inter(std::max(p, 1), 0.0);
        for (int pl = 0; pl < q; ++pl) {
            const std::uint64_t bit = std::uint64_t{1} << pl;
            for (std::uint64_t s = 0; s <= full; ++s) {
                if (s & bit) continue;
                shap[pl] += w_shap[std::popcount(s)] * (v[s | bit] - v[s]);
            }
        }
        if (has_geo) {
            const std::uint64_t gbit = std::uint64_t{1} << p;
            for (int j = 0; j < p; ++j) {
                const std::uint64_t jbit = std::uint64_t{1} << j;
                for (std::uint64_t s = 0; s <= full; ++s) {
                    if (s & (gbit | jbit)) continue;
                    const double delta = v[s | gbit | jbit] - v[s | gbit] - v[s | jbit] + v[s];
                    inter[j] += w_int[std::popcount(s)] * delta;
                }
            }
        }
        detail::allocate_row(ex, static_cast<std::ptrdiff_t>(i), shap, inter, p, has_geo);
        ex.prediction[i] = v[full];
    });
    return ex;
}

namespace detail {

/// Constrained Kernel SHAP over `players` players: weighted least squares of
/// v(S) - v(empty) on coalition indicators with sum(phi) = v(N) - v(empty).
/// `coalitions` excludes the empty and full sets.
inline std::vector<double> kernel_shap(int players, const std::vector<std::uint64_t>& coalitions,
                                       const std::vector<double>& values, double v_empty, double v_full) {
    const double delta = v_full - v_empty;
    std::vector<double> phi(players, 0.0);
    if (players == 1) {
        phi[0] = delta;
        return phi;
    }
    const int u = players - 1;  // the last player is eliminated via the constraint
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(u, u);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(u);
    Eigen::VectorXd z(u);
    for (std::size_t k = 0; k < coalitions.size(); ++k) {
        const auto s = coalitions[k];
        const int size = std::popcount(s);
        const double w =
            (players - 1) / (std::exp(std::lgamma(players + 1.0) - std::lgamma(size + 1.0) - std::lgamma(players - size + 1.0)) *
                             size * (players - size));
        const double last = static_cast<double>((s >> u) & 1U);
        for (int i = 0; i < u; ++i) z[i] = static_cast<double>((s >> i) & 1U) - last;
        const double target = values[k] - v_empty - last * delta;
        a.noalias() += w * z * z.transpose();
        b.noalias() += w * target * z;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    const double scale = a.diagonal().cwiseAbs().maxCoeff();
    bool singular = ldlt.info() != Eigen::Success || !(scale > 0);
    if (!singular) {
        const auto d = ldlt.vectorD();
        singular = d.minCoeff() <= 1e-12 * scale;
    }
    if (singular) {
        throw std::runtime_error("explain_sampled: singular Kernel SHAP system; increase the coalition budget");
    }
    const Eigen::VectorXd sol = ldlt.solve(b);
    double rest = delta;
    for (int i = 0; i < u; ++i) {
        phi[i] = sol[i];
        rest -= sol[i];
    }
    phi[u] = rest;
    return phi;
}

}  // namespace detail

/// Kernel SHAP estimate from at most `budget` coalition evaluations per row.
/// Feature subsets are drawn with their complements, and each comes as a
/// GEO pair (S, S + GEO) so the same evaluations feed
/// the q-player game and the derived game u(S) = v(S + GEO) - v(S) over the
/// features, whose Shapley values are the GEO interactions. A budget of at
/// least 2^q enumerates every coalition and reproduces the exact result.
inline GeoShapleyExplanation explain_sampled(const CoalitionEvaluator& ev, const Eigen::MatrixXd& rows, int budget,
                                             std::uint64_t seed, int threads = 1) {
    const PlayerPartition& partition = ev.partition();
    const int q = ev.players();
    if (budget < 2 * q + 2) throw std::invalid_argument("explain_sampled: budget must be >= 2q + 2");
    const int p = partition.n_features();
    const bool has_geo = partition.has_geo();
    const std::uint64_t feature_full = (std::uint64_t{1} << p) - 1;
    const std::uint64_t gbit = has_geo ? std::uint64_t{1} << p : 0;
    const std::uint64_t full = feature_full | gbit;
    const bool enumerate = q < 62 && static_cast<double>(budget) >= std::ldexp(1.0, q);

    // feature-subset sizes drawn with the Kernel SHAP mass of the sizes they cover
    std::vector<double> size_mass(p + 1, 0.0);
    auto kmass = [&](int s) { return (s >= 1 && s <= q - 1) ? (q - 1.0) / (s * (q - s)) : 0.0; };
    for (int s = 0; s <= p; ++s) size_mass[s] = kmass(s) + (has_geo ? kmass(s + 1) : 0.0);

    auto ex = detail::blank_explanation(ev, rows.rows());
    parallel_for(static_cast<std::size_t>(rows.rows()), threads, [&](std::size_t i) {
        // feature subsets S; each brings S and S + GEO
        std::set<std::uint64_t> subsets;
        if (enumerate) {
            for (std::uint64_t s = 0; s <= feature_full; ++s) subsets.insert(s);
        } else {
            // complement pairs S, F - S (with GEO, four coalitions closed under
            // complement in the full game too). A pair only adds one direction
            // to the interaction regression, so small budgets sample singly.
            const bool paired = !has_geo || budget >= 4 * p + 4;
            subsets.insert(0);
            subsets.insert(feature_full);
            const int per = has_geo ? 2 : 1;
            const double n_subsets = std::ldexp(1.0, p);
            Rng rng(seed, "kernel_shap", i);
            const double mass_total = std::accumulate(size_mass.begin() + 1, size_mass.end() - 1, 0.0);
            // Until the regression over the features has full rank, drop
            // draws whose direction z_i - z_last is already spanned.
            std::vector<Eigen::VectorXd> basis;
            auto adds_direction = [&](std::uint64_t mask) {
                Eigen::VectorXd d(p - 1);
                const double last = static_cast<double>((mask >> (p - 1)) & 1U);
                for (int k = 0; k + 1 < p; ++k) d[k] = static_cast<double>((mask >> k) & 1U) - last;
                for (const auto& b : basis) d -= b.dot(d) * b;
                if (d.norm() < 1e-9) return false;
                basis.push_back(d.normalized());
                return true;
            };
            int attempts = 0;
            while (mass_total > 0 && static_cast<int>(subsets.size() + (paired ? 2 : 1)) * per <= budget &&
                   static_cast<double>(subsets.size()) < n_subsets && attempts < 100 * budget) {
                ++attempts;
                double r = rng.uniform() * mass_total;
                int s = 1;
                while (s < p - 1 && r >= size_mass[s]) r -= size_mass[s++];
                std::uint64_t mask = 0;
                for (auto c : rng.sample_without_replacement(p, s)) mask |= std::uint64_t{1} << c;
                if (static_cast<int>(basis.size()) < p - 1 && !adds_direction(mask)) continue;
                subsets.insert(mask);
                if (paired) subsets.insert(feature_full & ~mask);
            }
        }
        std::vector<std::uint64_t> masks;
        for (auto s : subsets) {
            masks.push_back(s);
            if (has_geo) masks.push_back(s | gbit);
        }
        const Eigen::RowVectorXd inst = rows.row(i);
        const std::vector<double> v = ev.values(inst, masks);
        double v_empty = ev.base_value(), v_full = 0;
        std::vector<std::uint64_t> inner;
        std::vector<double> inner_v;
        for (std::size_t k = 0; k < masks.size(); ++k) {
            if (masks[k] == full) v_full = v[k];
            if (masks[k] == 0 || masks[k] == full) continue;
            inner.push_back(masks[k]);
            inner_v.push_back(v[k]);
        }
        const auto shap = detail::kernel_shap(q, inner, inner_v, v_empty, v_full);

        std::vector<double> inter(std::max(p, 1), 0.0);
        if (has_geo && p > 0) {
            // derived game over the features: u(S) = v(S + GEO) - v(S)
            std::vector<std::uint64_t> d_masks;
            std::vector<double> d_vals;
            double u_empty = 0, u_full = 0;
            for (std::size_t k = 0; k < masks.size(); k += 2) {
                const double u = v[k + 1] - (masks[k] == 0 ? v_empty : v[k]);
                if (masks[k] == 0) {
                    u_empty = u;
                } else if (masks[k] == feature_full) {
                    u_full = u;
                } else {
                    d_masks.push_back(masks[k]);
                    d_vals.push_back(u);
                }
            }
            const auto d = detail::kernel_shap(p, d_masks, d_vals, u_empty, u_full);
            for (int j = 0; j < p; ++j) inter[j] = d[j];
        }
        detail::allocate_row(ex, static_cast<std::ptrdiff_t>(i), shap, inter, p, has_geo);
        ex.prediction[i] = v_full;
    });
    return ex;
}

inline GeoShapleyExplanation explain_exact(const PredictorModel& model, const Eigen::MatrixXd& rows,
                                           const Eigen::MatrixXd& background, const PlayerPartition& partition,
                                           int threads = 1) {
    return explain_exact(CoalitionEvaluator(model, background, partition), rows, threads);
}

inline GeoShapleyExplanation explain_sampled(const PredictorModel& model, const Eigen::MatrixXd& rows,
                                             const Eigen::MatrixXd& background, const PlayerPartition& partition,
                                             int budget, std::uint64_t seed, int threads = 1) {
    return explain_sampled(CoalitionEvaluator(model, background, partition), rows, budget, seed, threads);
}

// ----------------------------------------------------------------- smoother

struct SvcSmoothResult {
    Eigen::VectorXd slope;
    Eigen::VectorXd intercept;
    double bandwidth = 0.0;
    std::vector<int> widened;  // rows whose window had to be widened
    std::vector<double> cv_bandwidths, cv_scores;
};

namespace detail {

struct LocalFit {
    double a = 0, b = 0;
    bool ok = false;
};

/// Gaussian-weighted least squares of y on (1, x) around location i;
/// `skip` leaves row i out (LOO).
inline LocalFit local_fit(const Eigen::VectorXd& y, const Eigen::VectorXd& x, const Eigen::MatrixX2d& coords,
                          std::ptrdiff_t i, double h, bool skip) {
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double inv = 1.0 / (h * h);
    for (std::ptrdiff_t s = 0; s < y.size(); ++s) {
        if (skip && s == i) continue;
        const double dx = coords(i, 0) - coords(s, 0), dy = coords(i, 1) - coords(s, 1);
        const double w = std::exp(-0.5 * (dx * dx + dy * dy) * inv);
        sw += w;
        sx += w * x[s];
        sy += w * y[s];
        sxx += w * x[s] * x[s];
        sxy += w * x[s] * y[s];
    }
    LocalFit f;
    if (!(sw > 0)) return f;
    const double mx = sx / sw, my = sy / sw;
    const double vxx = sxx / sw - mx * mx;
    const double vxy = sxy / sw - mx * my;
    if (!(vxx > 1e-10 * (sxx / sw + 1e-300))) return f;
    f.b = vxy / vxx;
    f.a = my - f.b * mx;
    f.ok = true;
    return f;
}

}  // namespace detail

/// Local slopes of phi on x: Gaussian-kernel GWR with bandwidth `h`, or a
/// leave-one-out CV choice over a log grid when h <= 0.
inline SvcSmoothResult svc_smooth(const Eigen::VectorXd& phi, const Eigen::VectorXd& x, const Eigen::MatrixX2d& coords,
                                  double h = 0.0, int threads = 1, int grid_points = 16) {
    const auto n = phi.size();
    if (x.size() != n || coords.rows() != n) throw std::invalid_argument("svc_smooth: length mismatch");
    if (n < 3) throw std::invalid_argument("svc_smooth: need at least 3 locations");
    SvcSmoothResult res;
    if (!(h > 0)) {
        // grid from about the nearest-neighbour spacing to the full extent
        const double extent = std::hypot(coords.col(0).maxCoeff() - coords.col(0).minCoeff(),
                                         coords.col(1).maxCoeff() - coords.col(1).minCoeff());
        double nn_sum = 0;
        const std::ptrdiff_t probe = std::min<std::ptrdiff_t>(n, 200);
        for (std::ptrdiff_t k = 0; k < probe; ++k) {
            const std::ptrdiff_t i = k * n / probe;
            double best = std::numeric_limits<double>::infinity();
            for (std::ptrdiff_t s = 0; s < n; ++s) {
                if (s != i) best = std::min(best, std::hypot(coords(i, 0) - coords(s, 0), coords(i, 1) - coords(s, 1)));
            }
            nn_sum += best;
        }
        const double lo = std::max(nn_sum / static_cast<double>(probe), 1e-12), hi = std::max(extent, 2 * lo);
        double best_score = std::numeric_limits<double>::infinity();
        for (int g = 0; g < grid_points; ++g) {
            const double hb = lo * std::pow(hi / lo, static_cast<double>(g) / (grid_points - 1));
            std::vector<double> err(static_cast<std::size_t>(n), 0.0);
            parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
                const auto f = detail::local_fit(phi, x, coords, static_cast<std::ptrdiff_t>(i), hb, true);
                const double pred = f.ok ? f.a + f.b * x[i] : phi.mean();
                err[i] = (phi[i] - pred) * (phi[i] - pred);
            });
            double score = 0;
            for (double e : err) score += e;
            res.cv_bandwidths.push_back(hb);
            res.cv_scores.push_back(score);
            if (score < best_score) {
                best_score = score;
                h = hb;
            }
        }
    }
    res.bandwidth = h;
    res.slope.resize(n);
    res.intercept.resize(n);
    std::vector<char> widened(static_cast<std::size_t>(n), 0);
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
        double hi = h;
        auto f = detail::local_fit(phi, x, coords, static_cast<std::ptrdiff_t>(i), hi, false);
        for (int tries = 0; !f.ok && tries < 40; ++tries) {
            hi *= 2;
            widened[i] = 1;
            f = detail::local_fit(phi, x, coords, static_cast<std::ptrdiff_t>(i), hi, false);
        }
        if (!f.ok) throw std::invalid_argument("svc_smooth: x is constant over every window");
        res.slope[i] = f.b;
        res.intercept[i] = f.a;
    });
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        if (widened[i]) res.widened.push_back(static_cast<int>(i));
    }
    return res;
}

/// CSV id,phi0,phi_geo,phi_x1..,phi_geo_x1..,svc_x1..,pred. `svc` may be
/// empty (columns then hold NaN).
inline void save_explanation(const GeoShapleyExplanation& ex, const std::vector<std::string>& ids,
                             const std::vector<Eigen::VectorXd>& svc, const std::string& path) {
    const auto p = ex.phi.cols();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write explanation: " + path);
    out << "id,phi0,phi_geo";
    for (std::ptrdiff_t j = 1; j <= p; ++j) out << ",phi_x" << j;
    for (std::ptrdiff_t j = 1; j <= p; ++j) out << ",phi_geo_x" << j;
    for (std::ptrdiff_t j = 1; j <= p; ++j) out << ",svc_x" << j;
    out << ",pred\n";
    using detail::format_double;
    for (std::ptrdiff_t i = 0; i < ex.rows(); ++i) {
        out << ids.at(i) << ',' << format_double(ex.phi0) << ',' << format_double(ex.phi_geo[i]);
        for (std::ptrdiff_t j = 0; j < p; ++j) out << ',' << format_double(ex.phi(i, j));
        for (std::ptrdiff_t j = 0; j < p; ++j) out << ',' << format_double(ex.phi_geo_j(i, j));
        for (std::ptrdiff_t j = 0; j < p; ++j) {
            out << ',' << (static_cast<std::size_t>(j) < svc.size() ? format_double(svc[j][i]) : std::string("nan"));
        }
        out << ',' << format_double(ex.prediction[i]) << '\n';
    }
}

}  // namespace moranml
