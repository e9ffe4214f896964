#pragma once

// Scenario matrices, Table-style summaries and the tree-depth demo.
//
// A bench file is a scenario file plus a [bench] section listing the axes:
//
//   [bench]
//   models = linear, esf_svc, forest, gbm
//   weights = queen, exp
//   selections = none, mse_cv, bic
//   coords = true
//   seeds = 1, 2, 3, 4, 5

#include "moranml/scenario.hpp"
#include "moranml/trees.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace moranml {

struct BenchConfig {
    ScenarioConfig base;
    std::vector<ModelKind> models{ModelKind::linear, ModelKind::esf_svc, ModelKind::forest, ModelKind::gbm};
    std::vector<WeightsKind> weights{WeightsKind::queen, WeightsKind::exponential};
    std::vector<SelectionCriterion> selections{SelectionCriterion::none, SelectionCriterion::mse_cv,
                                               SelectionCriterion::bic};
    bool coords = true;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

namespace detail {

inline std::vector<std::string> split_names(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = lower(trim(item));
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace detail

/// `overrides` ("section.key" -> value) are applied on top of the file.
inline BenchConfig load_bench_config(const std::string& path, const std::map<std::string, std::string>& overrides = {}) {
    auto kv = read_ini(path);
    if (!kv.count("moranml.schema")) throw ConfigError(path + ": missing [moranml] schema");
    for (const auto& [k, v] : overrides) kv[k] = v;
    std::map<std::string, std::string> bench, scenario;
    for (const auto& [k, v] : kv) (k.rfind("bench.", 0) == 0 ? bench : scenario)[k] = v;
    BenchConfig b;
    b.base = config_from_map(scenario);
    if (b.base.geometry == GeometryKind::points && fs::path(b.base.points_file).is_relative()) {
        const auto beside = fs::path(path).parent_path() / b.base.points_file;
        if (!fs::exists(b.base.points_file) && fs::exists(beside)) b.base.points_file = beside.string();
    }
    for (const auto& [key, value] : bench) {
        const auto names = detail::split_names(value);
        if (names.empty()) throw ConfigError(key + ": empty list");
        if (key == "bench.models") {
            b.models.clear();
            for (const auto& n : names) b.models.push_back(config_from_map({{"scenario.model", n}}).model);
        } else if (key == "bench.weights") {
            b.weights.clear();
            for (const auto& n : names) b.weights.push_back(config_from_map({{"scenario.weights", n}}).weights);
        } else if (key == "bench.selections") {
            b.selections.clear();
            for (const auto& n : names) b.selections.push_back(config_from_map({{"scenario.selection", n}}).selection);
        } else if (key == "bench.coords") {
            b.coords = detail::parse_bool(key, value);
        } else if (key == "bench.seeds") {
            b.seeds.clear();
            for (const auto& n : names) {
                const auto s = detail::parse_integer(key, n);
                if (s < 0) throw ConfigError("bench.seeds must be non-negative");
                b.seeds.push_back(static_cast<std::uint64_t>(s));
            }
        } else {
            throw ConfigError("unknown key " + key);
        }
    }
    return b;
}

/// Table layout: linear once (no spatial input); ESF models over weights x
/// selection; tree models over weights x selection plus coords.
inline std::vector<ScenarioConfig> expand_matrix(const BenchConfig& b) {
    std::vector<ScenarioConfig> out;
    for (auto model : b.models) {
        std::vector<ScenarioConfig> cells;
        ScenarioConfig c = b.base;
        c.model = model;
        if (!is_tree_kind(model)) c.trees.clear();
        if (model == ModelKind::linear) {
            c.spatial_mode = SpatialMode::none;
            c.selection = SelectionCriterion::none;
            cells.push_back(c);
        } else {
            for (auto w : b.weights) {
                for (auto s : b.selections) {
                    c.spatial_mode = SpatialMode::eigenvectors;
                    c.weights = w;
                    c.selection = s;
                    cells.push_back(c);
                }
            }
            if (is_tree_kind(model) && b.coords) {
                c.spatial_mode = SpatialMode::coords;
                c.selection = SelectionCriterion::none;
                cells.push_back(c);
            }
        }
        for (const auto& cell : cells) {
            for (auto seed : b.seeds) {
                ScenarioConfig s = cell;
                s.seed = seed;
                validate(s);
                out.push_back(s);
            }
        }
    }
    return out;
}

/// Table column of a scenario: queen_all ... exp_bic, coords or no_spatial.
inline std::string summary_column(const ScenarioConfig& cfg) {
    if (cfg.spatial_mode == SpatialMode::coords) return "coords";
    if (cfg.spatial_mode == SpatialMode::none) return "no_spatial";
    const std::string w = cfg.weights == WeightsKind::queen ? "queen" : "exp";
    switch (cfg.selection) {
        case SelectionCriterion::none: return w + "_all";
        case SelectionCriterion::mse_cv: return w + "_mse";
        case SelectionCriterion::bic: return w + "_bic";
    }
    return w;
}

inline const std::vector<std::string>& summary_columns() {
    static const std::vector<std::string> cols{"queen_all", "queen_mse", "queen_bic", "exp_all",
                                               "exp_mse",   "exp_bic",   "coords",    "no_spatial"};
    return cols;
}

inline std::string summary_header() {
    std::string h = "geometry,model";
    for (const auto& c : summary_columns()) h += "," + c;
    return h;
}

/// Seed-averaged R^2 per (geometry, model) and column, plus one
/// "selected" row per geometry with the mean eigenvector counts. Cells with
/// any failed seed read FAILED; cells never run stay empty.
inline std::string build_summary(const std::vector<ScenarioResult>& results) {
    struct Cell {
        double sum = 0, count_sum = 0;
        int n = 0;
        bool failed = false;
    };
    std::map<std::string, std::map<int, std::map<std::string, Cell>>> table;  // geometry -> model -> column
    std::map<std::string, std::map<std::string, Cell>> counts;                // geometry -> column
    for (const auto& r : results) {
        const auto geo = geometry_label(r.config);
        const auto col = summary_column(r.config);
        auto& cell = table[geo][static_cast<int>(r.config.model)][col];
        if (!r.ok()) {
            cell.failed = true;
            continue;
        }
        cell.sum += r.mean_r2;
        ++cell.n;
        if (r.config.spatial_mode == SpatialMode::eigenvectors) {
            auto& c = counts[geo][col];
            c.sum += r.selected_count;
            ++c.n;
        }
    }
    std::string out = summary_header() + "\n";
    char buf[64];
    for (const auto& [geo, models] : table) {
        for (const auto& [model, cols] : models) {
            out += geo + "," + to_string(static_cast<ModelKind>(model));
            for (const auto& c : summary_columns()) {
                out += ",";
                const auto it = cols.find(c);
                if (it == cols.end()) continue;
                if (it->second.failed) {
                    out += "FAILED";
                } else if (it->second.n > 0) {
                    std::snprintf(buf, sizeof buf, "%.4f", it->second.sum / it->second.n);
                    out += buf;
                }
            }
            out += "\n";
        }
        out += geo + ",selected";
        for (const auto& c : summary_columns()) {
            out += ",";
            const auto it = counts[geo].find(c);
            if (it != counts[geo].end() && it->second.n > 0) {
                std::snprintf(buf, sizeof buf, "%.1f", it->second.sum / it->second.n);
                out += buf;
            }
        }
        out += "\n";
    }
    return out;
}

inline std::string build_runs(std::vector<ScenarioResult> results) {
    std::sort(results.begin(), results.end(), [](const ScenarioResult& a, const ScenarioResult& b) {
        auto key = [](const ScenarioResult& r) {
            return std::make_tuple(geometry_label(r.config), static_cast<int>(r.config.model), summary_column(r.config),
                                   r.config.seed, r.hash);
        };
        return key(a) < key(b);
    });
    std::string out = "hash,geometry,model,column,seed,selected,mean_r2,fold_r2,status,stage\n";
    char buf[64];
    for (const auto& r : results) {
        out += r.hash + "," + geometry_label(r.config) + "," + to_string(r.config.model) + "," +
               summary_column(r.config) + "," + std::to_string(r.config.seed) + "," + std::to_string(r.selected_count) + ",";
        std::snprintf(buf, sizeof buf, "%.6f", r.mean_r2);
        out += r.ok() ? std::string(buf) : std::string();
        out += ",";
        for (std::size_t f = 0; f < r.fold_r2.size(); ++f) {
            std::snprintf(buf, sizeof buf, "%s%.6f", f ? " " : "", r.fold_r2[f]);
            out += buf;
        }
        // failed and cached both count as finished work; only failures matter here
        out += "," + std::string(r.ok() ? "ok" : "failed") + "," + r.stage + "\n";
    }
    return out;
}

struct MatrixResult {
    std::vector<ScenarioResult> results;
    std::string summary_path;
    std::string runs_path;
    int failures = 0;
};

inline void write_reports(MatrixResult& m, const std::string& out_root) {
    fs::create_directories(out_root);
    m.summary_path = (fs::path(out_root) / "summary.csv").string();
    m.runs_path = (fs::path(out_root) / "runs.csv").string();
    detail::write_text(m.summary_path, build_summary(m.results));
    detail::write_text(m.runs_path, build_runs(m.results));
}

/// Runs the scenarios on `parallelism` workers (each gets an even share of
/// opt.threads), then writes summary.csv and runs.csv under opt.out_root.
inline MatrixResult run_matrix(const std::vector<ScenarioConfig>& cfgs, int parallelism, const RunOptions& opt,
                               const std::function<void(const ScenarioResult&)>& on_done = {}) {
    if (cfgs.empty()) throw std::invalid_argument("run_matrix: no scenarios");
    parallelism = std::clamp(parallelism, 1, static_cast<int>(cfgs.size()));
    RunOptions inner = opt;
    inner.threads = std::max(1, opt.threads / parallelism);
    MatrixResult m;
    m.results.resize(cfgs.size());
    std::mutex report;
    parallel_for(cfgs.size(), parallelism, [&](std::size_t i) {
        m.results[i] = run_scenario(cfgs[i], inner);
        if (on_done) {
            std::lock_guard<std::mutex> lock(report);
            on_done(m.results[i]);
        }
    });
    for (const auto& r : m.results) m.failures += r.ok() ? 0 : 1;
    write_reports(m, opt.out_root);
    return m;
}

/// Every finished scenario under `out_root` (directories with result.json).
inline std::vector<ScenarioResult> collect_results(const std::string& out_root) {
    std::vector<ScenarioResult> out;
    if (!fs::exists(out_root)) return out;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(out_root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "result.json")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) out.push_back(load_result((d / "result.json").string()));
    return out;
}

// ----------------------------------------------------------------- tree demo

struct DepthRow {
    int depth = 0;
    double r2_surface = 0;         // tree on the smooth surface
    double r2_variant = 0;         // tree on smooth + checkerboard, vs that total
    double r2_variant_smooth = 0;  // same tree, squared correlation with the smooth part
    double r2_variant_checker = 0; // ... and with the checkerboard part
};

/// Single coordinate-input trees of each depth fit to a GRF surface
/// (l = `scale`) on a rows x cols grid, and to the same surface plus a
/// +-`checker` checkerboard (negative spatial autocorrelation).
inline std::vector<DepthRow> tree_depth_demo(std::uint64_t seed, const std::vector<int>& depths, int rows = 50,
                                             int cols = 50, double scale = 8.0, double checker = 1.0) {
    if (depths.empty()) throw std::invalid_argument("tree_depth_demo: no depths");
    if (!std::is_sorted(depths.begin(), depths.end())) throw std::invalid_argument("tree_depth_demo: depths must ascend");
    const auto ps = make_grid(rows, cols, 1.0);
    GrfSpec spec;
    spec.scale = scale;
    const Eigen::VectorXd smooth = sample_grf(ps, spec, stream_seed(seed, "demo_surface"));
    Eigen::VectorXd board(ps.size());
    for (std::ptrdiff_t i = 0; i < ps.size(); ++i) {
        const auto r = static_cast<long long>(std::lround(ps.coords(i, 1)));
        const auto c = static_cast<long long>(std::lround(ps.coords(i, 0)));
        board[i] = ((r + c) % 2 == 0) ? checker : -checker;
    }
    const Eigen::VectorXd total = smooth + board;
    const Eigen::MatrixXd x = ps.coords;
    auto corr2 = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        const double r = detail::pearson(a, b);
        return r * r;
    };
    auto r2 = [](const Eigen::VectorXd& y, const Eigen::VectorXd& p) { return 1.0 - (y - p).squaredNorm() / (y.array() - y.mean()).square().sum(); };
    std::vector<DepthRow> out;
    for (int d : depths) {
        DepthRow row;
        row.depth = d;
        row.r2_surface = r2(smooth, fit_tree(x, smooth, d).predict(x));
        const Eigen::VectorXd pv = fit_tree(x, total, d).predict(x);
        row.r2_variant = r2(total, pv);
        row.r2_variant_smooth = corr2(pv, smooth);
        row.r2_variant_checker = corr2(pv, board);
        out.push_back(row);
    }
    return out;
}

inline void save_depth_demo(const std::vector<DepthRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "depth,r2_surface,r2_variant,r2_variant_smooth,r2_variant_checker\n";
    using detail::format_double;
    for (const auto& r : rows) {
        out << r.depth << ',' << format_double(r.r2_surface) << ',' << format_double(r.r2_variant) << ','
            << format_double(r.r2_variant_smooth) << ',' << format_double(r.r2_variant_checker) << '\n';
    }
}

}  // namespace moranml
