#pragma once

// One benchmark scenario: geometry -> dataset -> (weights -> eigenvectors ->
// selection) -> nested CV -> final fit -> GeoShapley. Artifacts go to
// <out>/<config-hash>/; a finished directory is reused unless forced.
//
// Config files are INI with a schema version:
//
//   [moranml]
//   schema = 1
//   [scenario]
//   geometry = grid          ; or points (+ points_file)
//   rows = 50
//   cols = 50
//   weights = exp            ; queen | exp
//   spatial_mode = eigenvectors
//   selection = bic          ; none | mse_cv | bic
//   model = gbm              ; linear | esf | esf_svc | forest | gbm
//   seed = 7
//   [trees]
//   max_depth = 4, 6         ; lists expand to a grid tuned by inner CV

#include "moranml/crossval.hpp"
#include "moranml/eigenmoran.hpp"
#include "moranml/features.hpp"
#include "moranml/geometry.hpp"
#include "moranml/geoshapley.hpp"
#include "moranml/heatmap.hpp"
#include "moranml/lasso.hpp"
#include "moranml/model.hpp"
#include "moranml/synthgen.hpp"
#include "moranml/weights.hpp"

#include <Eigen/Dense>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

namespace fs = std::filesystem;

constexpr int kConfigSchema = 1;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A pipeline stage failed; `stage()` names it.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

enum class GeometryKind { grid, points };
enum class EstimatorKind { exact, sampled };

struct ScenarioConfig {
    GeometryKind geometry = GeometryKind::grid;
    int rows = 50;
    int cols = 50;
    double spacing = 1.0;
    std::string points_file;
    WeightsKind weights = WeightsKind::exponential;
    SpatialMode spatial_mode = SpatialMode::coords;
    SelectionCriterion selection = SelectionCriterion::none;
    SelectionDesign selection_design = SelectionDesign::svc_interaction;
    ModelKind model = ModelKind::gbm;
    std::uint64_t seed = 1;
    int folds = 5;
    int candidate_L = 200;
    EstimatorKind estimator = EstimatorKind::exact;
    int budget = 0;  // sampled estimator; 0 picks max(2q + 2, 64)
    NoiseConvention noise = NoiseConvention::variance;
    bool explain = false;
    int background = 100;
    // tree hyperparameter overrides, key -> candidate values
    std::map<std::string, std::vector<double>> trees;
};

inline TreeParams default_tree_params(ModelKind kind) {
    TreeParams hp;
    if (kind == ModelKind::forest) {
        hp.max_depth = 12;
        hp.n_trees = 300;
        hp.min_leaf = 2;
        hp.max_features = 0.5;
        hp.bootstrap = true;
    } else {
        hp.max_depth = 6;
        hp.n_trees = 2000;
        hp.learning_rate = 0.05;
        hp.min_leaf = 20;
        hp.subsample = 0.8;
        hp.early_stopping = true;
        hp.validation_fraction = 0.1;
        hp.patience = 100;
    }
    return hp;
}

namespace detail {

inline const std::vector<std::string>& tree_keys() {
    static const std::vector<std::string> keys{"max_depth", "n_trees",        "learning_rate",      "min_leaf",
                                               "subsample", "max_features",   "bootstrap",          "early_stopping",
                                               "validation_fraction", "patience"};
    return keys;
}

inline void set_tree_param(TreeParams& hp, const std::string& key, double v) {
    auto as_int = [&](const std::string& k) {
        if (v != std::floor(v)) throw ConfigError("trees." + k + " must be an integer");
        return static_cast<int>(v);
    };
    if (key == "max_depth") hp.max_depth = as_int(key);
    else if (key == "n_trees") hp.n_trees = as_int(key);
    else if (key == "learning_rate") hp.learning_rate = v;
    else if (key == "min_leaf") hp.min_leaf = as_int(key);
    else if (key == "subsample") hp.subsample = v;
    else if (key == "max_features") hp.max_features = v;
    else if (key == "bootstrap") hp.bootstrap = v != 0;
    else if (key == "early_stopping") hp.early_stopping = v != 0;
    else if (key == "validation_fraction") hp.validation_fraction = v;
    else if (key == "patience") hp.patience = as_int(key);
    else throw ConfigError("unknown key trees." + key);
}

inline std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    const auto s = lower(v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline double parse_number(const std::string& key, const std::string& v) {
    double out = 0;
    if (!parse_double(trim(v), out) || !std::isfinite(out)) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

inline long long parse_integer(const std::string& key, const std::string& v) {
    const double d = parse_number(key, v);
    if (d != std::floor(d) || std::abs(d) > 9.0e15) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return static_cast<long long>(d);
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item == "true" || item == "false") {
            out.push_back(item == "true" ? 1.0 : 0.0);
        } else {
            out.push_back(parse_number(key, item));
        }
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

template <class E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
    const auto s = lower(trim(v));
    std::string names;
    for (const auto& [name, value] : options) {
        if (s == name) return value;
        names += std::string(names.empty() ? "" : ", ") + name;
    }
    throw ConfigError(key + ": '" + v + "' is not one of " + names);
}

}  // namespace detail

/// Every hyperparameter combination of the overrides on top of the model's
/// defaults, in key order then value order.
inline std::vector<TreeParams> tree_grid(const ScenarioConfig& cfg) {
    std::vector<TreeParams> grid{default_tree_params(cfg.model)};
    for (const auto& key : detail::tree_keys()) {
        const auto it = cfg.trees.find(key);
        if (it == cfg.trees.end()) continue;
        std::vector<TreeParams> next;
        for (const auto& hp : grid) {
            for (double v : it->second) {
                TreeParams h = hp;
                detail::set_tree_param(h, key, v);
                next.push_back(h);
            }
        }
        grid = std::move(next);
    }
    return grid;
}

inline void validate(const ScenarioConfig& cfg) {
    if (cfg.geometry == GeometryKind::grid) {
        if (cfg.rows < 1 || cfg.cols < 1 || cfg.rows * cfg.cols < 4) throw ConfigError("grid needs rows*cols >= 4");
        if (!(cfg.spacing > 0)) throw ConfigError("grid spacing must be positive");
    } else if (cfg.points_file.empty()) {
        throw ConfigError("geometry = points needs points_file");
    }
    if (cfg.spatial_mode != SpatialMode::eigenvectors && cfg.selection != SelectionCriterion::none) {
        throw ConfigError("selection applies only to spatial_mode = eigenvectors");
    }
    if ((cfg.model == ModelKind::esf || cfg.model == ModelKind::esf_svc) && cfg.spatial_mode != SpatialMode::eigenvectors) {
        throw ConfigError(std::string("model ") + to_string(cfg.model) + " needs spatial_mode = eigenvectors");
    }
    if (cfg.model == ModelKind::linear && cfg.spatial_mode != SpatialMode::none) {
        throw ConfigError("model linear needs spatial_mode = none");
    }
    if (cfg.folds < 2) throw ConfigError("folds must be >= 2");
    if (cfg.candidate_L < 1) throw ConfigError("candidate_L must be >= 1");
    if (cfg.geometry == GeometryKind::grid && cfg.spatial_mode == SpatialMode::eigenvectors &&
        static_cast<long long>(cfg.candidate_L) > static_cast<long long>(cfg.rows) * cfg.cols) {
        throw ConfigError("candidate_L " + std::to_string(cfg.candidate_L) + " exceeds the " +
                          std::to_string(cfg.rows * cfg.cols) + " grid cells");
    }
    if (cfg.background < 1) throw ConfigError("background must be >= 1");
    if (cfg.budget < 0) throw ConfigError("budget must be >= 0");
    if (!cfg.trees.empty() && !is_tree_kind(cfg.model)) throw ConfigError("[trees] given for a non-tree model");
    const EnsembleMode mode = cfg.model == ModelKind::forest ? EnsembleMode::bagging : EnsembleMode::boosting;
    if (is_tree_kind(cfg.model)) {
        for (const auto& hp : tree_grid(cfg)) {
            try {
                validate(hp, mode);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
    }
}

/// Flat "section.key" -> value map; applies the values over `base`.
inline ScenarioConfig config_from_map(const std::map<std::string, std::string>& kv, ScenarioConfig cfg = {}) {
    using namespace detail;
    for (const auto& [key, value] : kv) {
        const auto v = trim(value);
        if (key == "moranml.schema") {
            if (parse_integer(key, v) != kConfigSchema) {
                throw ConfigError("unsupported config schema " + v + " (expected " + std::to_string(kConfigSchema) + ")");
            }
        } else if (key == "scenario.geometry") {
            cfg.geometry = parse_enum<GeometryKind>(key, v, {{"grid", GeometryKind::grid}, {"points", GeometryKind::points}});
        } else if (key == "scenario.rows") {
            cfg.rows = static_cast<int>(parse_integer(key, v));
        } else if (key == "scenario.cols") {
            cfg.cols = static_cast<int>(parse_integer(key, v));
        } else if (key == "scenario.spacing") {
            cfg.spacing = parse_number(key, v);
        } else if (key == "scenario.points_file") {
            cfg.points_file = v;
        } else if (key == "scenario.weights") {
            cfg.weights = parse_enum<WeightsKind>(key, v, {{"queen", WeightsKind::queen}, {"exp", WeightsKind::exponential}});
        } else if (key == "scenario.spatial_mode") {
            cfg.spatial_mode = parse_enum<SpatialMode>(
                key, v, {{"coords", SpatialMode::coords}, {"eigenvectors", SpatialMode::eigenvectors}, {"none", SpatialMode::none}});
        } else if (key == "scenario.selection") {
            cfg.selection = parse_enum<SelectionCriterion>(
                key, v, {{"none", SelectionCriterion::none}, {"mse_cv", SelectionCriterion::mse_cv}, {"bic", SelectionCriterion::bic}});
        } else if (key == "scenario.selection_design") {
            cfg.selection_design = parse_enum<SelectionDesign>(
                key, v, {{"svc", SelectionDesign::svc_interaction}, {"eigen_only", SelectionDesign::eigen_only}});
        } else if (key == "scenario.model") {
            try {
                cfg.model = parse_model_kind(lower(v));
            } catch (const std::exception&) {
                throw ConfigError(key + ": '" + v + "' is not one of linear, esf, esf_svc, forest, gbm");
            }
        } else if (key == "scenario.seed") {
            const auto s = parse_integer(key, v);
            if (s < 0) throw ConfigError("seed must be non-negative");
            cfg.seed = static_cast<std::uint64_t>(s);
        } else if (key == "scenario.folds") {
            cfg.folds = static_cast<int>(parse_integer(key, v));
        } else if (key == "scenario.candidate_L") {
            cfg.candidate_L = static_cast<int>(parse_integer(key, v));
        } else if (key == "scenario.estimator") {
            cfg.estimator = parse_enum<EstimatorKind>(key, v, {{"exact", EstimatorKind::exact}, {"sampled", EstimatorKind::sampled}});
        } else if (key == "scenario.budget") {
            cfg.budget = static_cast<int>(parse_integer(key, v));
        } else if (key == "scenario.noise") {
            cfg.noise = parse_enum<NoiseConvention>(key, v, {{"variance", NoiseConvention::variance}, {"sd", NoiseConvention::sd}});
        } else if (key == "scenario.explain") {
            cfg.explain = parse_bool(key, v);
        } else if (key == "scenario.background") {
            cfg.background = static_cast<int>(parse_integer(key, v));
        } else if (key.rfind("trees.", 0) == 0) {
            const auto name = key.substr(6);
            if (std::find(tree_keys().begin(), tree_keys().end(), name) == tree_keys().end()) {
                throw ConfigError("unknown key " + key);
            }
            cfg.trees[name] = parse_list(key, v);
        } else {
            throw ConfigError("unknown key " + key);
        }
    }
    return cfg;
}

/// Canonical map (the inverse of config_from_map); also the hash input.
inline std::map<std::string, std::string> config_to_map(const ScenarioConfig& cfg) {
    using detail::format_double;
    std::map<std::string, std::string> kv;
    kv["moranml.schema"] = std::to_string(kConfigSchema);
    kv["scenario.geometry"] = cfg.geometry == GeometryKind::grid ? "grid" : "points";
    if (cfg.geometry == GeometryKind::grid) {
        kv["scenario.rows"] = std::to_string(cfg.rows);
        kv["scenario.cols"] = std::to_string(cfg.cols);
        kv["scenario.spacing"] = format_double(cfg.spacing);
    } else {
        kv["scenario.points_file"] = cfg.points_file;
    }
    kv["scenario.spatial_mode"] = to_string(cfg.spatial_mode);
    if (cfg.spatial_mode == SpatialMode::eigenvectors) {
        kv["scenario.weights"] = to_string(cfg.weights);
        kv["scenario.selection"] = to_string(cfg.selection);
        kv["scenario.selection_design"] = to_string(cfg.selection_design);
        kv["scenario.candidate_L"] = std::to_string(cfg.candidate_L);
    }
    kv["scenario.model"] = to_string(cfg.model);
    kv["scenario.seed"] = std::to_string(cfg.seed);
    kv["scenario.folds"] = std::to_string(cfg.folds);
    kv["scenario.noise"] = cfg.noise == NoiseConvention::variance ? "variance" : "sd";
    kv["scenario.explain"] = cfg.explain ? "true" : "false";
    if (cfg.explain) {
        kv["scenario.estimator"] = cfg.estimator == EstimatorKind::exact ? "exact" : "sampled";
        if (cfg.estimator == EstimatorKind::sampled) kv["scenario.budget"] = std::to_string(cfg.budget);
        kv["scenario.background"] = std::to_string(cfg.background);
    }
    for (const auto& [key, values] : cfg.trees) {
        std::string s;
        for (double v : values) s += (s.empty() ? "" : ",") + format_double(v);
        kv["trees." + key] = s;
    }
    return kv;
}

inline std::map<std::string, std::string> read_ini(const std::string& path) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(e.what());
    }
    std::map<std::string, std::string> kv;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError(path + ": key '" + section + "' outside any section");
        for (const auto& [key, value] : body) kv[section + "." + key] = value.get_value<std::string>();
    }
    return kv;
}

/// Reads and validates a scenario file. Keys of other sections ([bench])
/// are ignored here.
inline ScenarioConfig load_scenario_config(const std::string& path) {
    auto kv = read_ini(path);
    if (!kv.count("moranml.schema")) throw ConfigError(path + ": missing [moranml] schema");
    std::erase_if(kv, [](const auto& p) { return p.first.rfind("bench.", 0) == 0; });
    auto cfg = config_from_map(kv);
    if (cfg.geometry == GeometryKind::points && fs::path(cfg.points_file).is_relative()) {
        const auto beside = fs::path(path).parent_path() / cfg.points_file;
        if (!fs::exists(cfg.points_file) && fs::exists(beside)) cfg.points_file = beside.string();
    }
    validate(cfg);
    return cfg;
}

namespace detail {

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return fnv1a64(ss.str());
}

/// Identifies the point set: grid shape, or the bytes of the points file.
inline std::string geometry_key(const ScenarioConfig& cfg) {
    if (cfg.geometry == GeometryKind::grid) {
        return "grid:" + std::to_string(cfg.rows) + "x" + std::to_string(cfg.cols) + "@" + format_double(cfg.spacing);
    }
    return "points:" + hex64(file_hash(cfg.points_file));
}

}  // namespace detail

/// Hash of the canonical config; the points file enters by content.
inline std::string config_hash(const ScenarioConfig& cfg) {
    std::string s;
    for (const auto& [k, v] : config_to_map(cfg)) {
        if (k == "scenario.points_file") continue;
        s += k + "=" + v + "\n";
    }
    s += "geometry=" + detail::geometry_key(cfg) + "\n";
    return detail::hex64(fnv1a64(s));
}

/// Short label for tables: grid50x50 or the points file stem.
inline std::string geometry_label(const ScenarioConfig& cfg) {
    if (cfg.geometry == GeometryKind::grid) return "grid" + std::to_string(cfg.rows) + "x" + std::to_string(cfg.cols);
    return fs::path(cfg.points_file).stem().string();
}

struct ScenarioResult {
    ScenarioConfig config;
    std::string hash;
    std::string dir;
    std::string status = "ok";  // ok | cached | failed
    std::string stage;          // failing stage
    std::string error;
    int selected_count = 0;
    std::vector<double> fold_r2;
    double mean_r2 = 0.0;
    std::vector<int> chosen;
    double wall_seconds = 0.0;
    std::vector<std::string> artifacts;
    std::map<std::string, double> diagnostics;

    bool ok() const { return status != "failed"; }
};

struct RunOptions {
    std::string out_root = "out";
    bool force = false;
    int threads = 1;
};

inline nlohmann::ordered_json result_json(const ScenarioResult& r) {
    nlohmann::ordered_json j;
    j["schema"] = kConfigSchema;
    j["hash"] = r.hash;
    j["config"] = config_to_map(r.config);
    j["selected_count"] = r.selected_count;
    j["fold_r2"] = r.fold_r2;
    j["mean_r2"] = r.mean_r2;
    j["chosen_grid_index"] = r.chosen;
    j["artifacts"] = r.artifacts;
    j["diagnostics"] = r.diagnostics;
    return j;
}

inline ScenarioResult load_result(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    const auto j = nlohmann::json::parse(in);
    ScenarioResult r;
    r.config = config_from_map(j.at("config").get<std::map<std::string, std::string>>());
    r.hash = j.at("hash").get<std::string>();
    r.dir = fs::path(path).parent_path().string();
    r.selected_count = j.at("selected_count").get<int>();
    r.fold_r2 = j.at("fold_r2").get<std::vector<double>>();
    r.mean_r2 = j.at("mean_r2").get<double>();
    r.chosen = j.at("chosen_grid_index").get<std::vector<int>>();
    r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    r.diagnostics = j.at("diagnostics").get<std::map<std::string, double>>();
    const auto timing = fs::path(r.dir) / "timing.json";
    if (fs::exists(timing)) {
        std::ifstream t(timing);
        r.wall_seconds = nlohmann::json::parse(t).value("wall_seconds", 0.0);
    }
    return r;
}

// ----------------------------------------------------------------- stages

inline PointSet scenario_points(const ScenarioConfig& cfg) {
    if (cfg.geometry == GeometryKind::grid) return make_grid(cfg.rows, cfg.cols, cfg.spacing);
    return load_points(cfg.points_file);
}

inline SpatialWeights scenario_weights(const ScenarioConfig& cfg, const PointSet& ps) {
    if (cfg.weights == WeightsKind::queen) return queen_weights(ps);
    const auto d = pairwise_distances(ps);
    return exponential_weights(d, mst_max_edge(d));
}

namespace detail {

inline std::mutex& cache_lock(const std::string& key) {
    static std::mutex guard;
    static std::map<std::string, std::unique_ptr<std::mutex>> locks;
    std::lock_guard<std::mutex> g(guard);
    auto& m = locks[key];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
}

}  // namespace detail

/// Top-L Moran basis for the scenario's geometry and weights, computed once
/// per <out>/cache and read back bit-exactly afterwards.
inline EigenBasis cached_eigen_basis(const ScenarioConfig& cfg, const PointSet& ps, const std::string& out_root,
                                     std::string* cache_path = nullptr) {
    const std::string key = detail::hex64(fnv1a64(detail::geometry_key(cfg) + "|" + to_string(cfg.weights) + "|" +
                                                  std::to_string(cfg.candidate_L)));
    const fs::path dir = fs::path(out_root) / "cache";
    const fs::path path = dir / ("eigen-" + key + ".csv");
    if (cache_path) *cache_path = path.string();
    std::lock_guard<std::mutex> lock(detail::cache_lock(path.string()));
    if (fs::exists(path)) return load_eigen_basis(path.string());
    if (cfg.candidate_L > ps.size()) {
        throw std::invalid_argument("candidate_L " + std::to_string(cfg.candidate_L) + " exceeds n = " +
                                    std::to_string(ps.size()));
    }
    const auto basis = moran_eigen_full(scenario_weights(cfg, ps), cfg.candidate_L);
    fs::create_directories(dir);
    const fs::path tmp = dir / ("eigen-" + key + ".csv.tmp");
    save_eigen_basis(basis, ps.ids, tmp.string());
    fs::rename(tmp, path);
    // reload so fresh and cached runs see identical bits
    return load_eigen_basis(path.string());
}

namespace detail {

inline Eigen::MatrixXd covariates(const SyntheticDataset& ds) {
    Eigen::MatrixXd x(ds.size(), 2);
    x << ds.x1, ds.x2;
    return x;
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::VectorXd ac = a.array() - a.mean();
    const Eigen::VectorXd bc = b.array() - b.mean();
    const double den = std::sqrt(ac.squaredNorm() * bc.squaredNorm());
    return den > 0 ? ac.dot(bc) / den : 0.0;
}

/// Least-squares coefficients of y on [1, x, x^2, ...] up to `degree`.
inline Eigen::VectorXd poly_fit(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int degree) {
    Eigen::MatrixXd a(x.size(), degree + 1);
    for (std::ptrdiff_t i = 0; i < x.size(); ++i) {
        double p = 1;
        for (int d = 0; d <= degree; ++d, p *= x[i]) a(i, d) = p;
    }
    return a.colPivHouseholderQr().solve(y);
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

}  // namespace detail

/// Runs the pipeline into <out>/<hash>/. Stage failures come back as a
/// failed result (never thrown) so callers can keep going.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg, const RunOptions& opt = {}) {
    const auto started = std::chrono::steady_clock::now();
    ScenarioResult res;
    res.config = cfg;
    try {
        validate(cfg);
        res.hash = config_hash(cfg);
    } catch (const std::exception& e) {
        res.status = "failed";
        res.stage = "config";
        res.error = e.what();
        return res;
    }
    const fs::path final_dir = fs::path(opt.out_root) / res.hash;
    res.dir = final_dir.string();
    if (!opt.force && fs::exists(final_dir / "result.json")) {
        try {
            auto cached = load_result((final_dir / "result.json").string());
            cached.status = "cached";
            return cached;
        } catch (const std::exception&) {
            // unreadable: recompute
        }
    }
    const fs::path work = fs::path(opt.out_root) / (res.hash + ".partial");
    const int threads = std::max(1, opt.threads);
    try {
        fs::remove_all(work);
        fs::create_directories(work / "surfaces");

        const PointSet ps = detail::stage("geometry", [&] { return scenario_points(cfg); });
        const SyntheticDataset ds = detail::stage("dataset", [&] {
            DgpParams params;
            params.noise = cfg.noise;
            auto d = generate_dataset(ps, cfg.seed, params);
            save_dataset(d, (work / "dataset.csv").string());
            return d;
        });
        res.artifacts.push_back("dataset.csv");
        const Eigen::MatrixXd x = detail::covariates(ds);

        // spatial features
        EigenBasis basis;
        EigenSelection selection;
        std::vector<int> shared;
        if (cfg.spatial_mode == SpatialMode::eigenvectors) {
            basis = detail::stage("eigen", [&] {
                std::string cache;
                auto b = cached_eigen_basis(cfg, ps, opt.out_root, &cache);
                std::error_code ec;
                fs::create_hard_link(cache, work / "eigen.csv", ec);
                if (ec) fs::copy_file(cache, work / "eigen.csv", fs::copy_options::overwrite_existing);
                return b;
            });
            res.artifacts.push_back("eigen.csv");
            selection = detail::stage("selection", [&] {
                auto s = select_eigenvectors(basis.vectors, x, ds.y, cfg.selection, cfg.selection_design,
                                             stream_seed(cfg.seed, "selection"), cfg.folds, threads);
                save_selection(s.shared, (work / "selection.csv").string());
                return s;
            });
            res.artifacts.push_back("selection.csv");
            shared = selection.shared.indices;
            res.selected_count = static_cast<int>(shared.size());
        }
        const FeatureBundle fb = detail::stage("features", [&] {
            return make_bundle(x, cfg.spatial_mode, &ps, cfg.spatial_mode == SpatialMode::eigenvectors ? &basis : nullptr,
                               cfg.spatial_mode == SpatialMode::eigenvectors ? &shared : nullptr);
        });

        ModelSpec spec;
        spec.kind = cfg.model;
        if (is_tree_kind(cfg.model)) spec.grid = tree_grid(cfg);
        if (cfg.model == ModelKind::esf_svc) {
            // candidate indices -> positions within the shared block
            std::map<int, int> pos;
            for (std::size_t k = 0; k < shared.size(); ++k) pos[shared[k]] = static_cast<int>(k);
            for (const auto& sub : selection.per_k) {
                std::vector<int> cols;
                for (int idx : sub.indices) cols.push_back(pos.at(idx));
                spec.svc_columns.push_back(cols);
            }
        }

        const CVResult cv = detail::stage("cv", [&] {
            return cross_validate(spec, fb, ds.y, cfg.folds, stream_seed(cfg.seed, "cv"), threads);
        });
        res.fold_r2 = cv.fold_r2;
        res.mean_r2 = cv.mean_r2;
        res.chosen = cv.chosen;

        const PredictorModel model = detail::stage("fit", [&] {
            const auto fit_seed = stream_seed(cfg.seed, "final");
            const int g = detail::tune(spec, fb, ds.y, cfg.folds, fit_seed);
            auto m = fit_model(spec, spec.grid[g], fb, ds.y, stream_seed(fit_seed, "fit"), threads);
            save_model(m, (work / "model.bin").string());
            return m;
        });
        res.artifacts.push_back("model.bin");
        res.diagnostics["train_r2"] = r2_score(ds.y, model.predict(fb.matrix()));

        if (cfg.explain) {
            detail::stage("explain", [&] {
                const Eigen::MatrixXd inputs = fb.matrix();
                const auto partition = make_partition(model);
                const auto bg = sample_background(inputs, cfg.background, stream_seed(cfg.seed, "background"));
                const CoalitionEvaluator ev(model, bg, partition);
                const int q = partition.n_players();
                GeoShapleyExplanation ex;
                if (cfg.estimator == EstimatorKind::exact) {
                    ex = explain_exact(ev, inputs, threads);
                } else {
                    const int budget = cfg.budget > 0 ? cfg.budget : std::max(2 * q + 2, 64);
                    ex = explain_sampled(ev, inputs, budget, stream_seed(cfg.seed, "explain"), threads);
                }
                std::vector<Eigen::VectorXd> svc;
                for (int j = 0; j < partition.n_features(); ++j) {
                    const auto s = svc_smooth(ex.phi_geo_j.col(j), x.col(j), ps.coords, 0.0, threads);
                    svc.push_back(s.slope);
                    res.diagnostics["svc_bandwidth_x" + std::to_string(j + 1)] = s.bandwidth;
                    res.diagnostics["svc_widened_x" + std::to_string(j + 1)] = static_cast<double>(s.widened.size());
                }
                save_explanation(ex, ps.ids, svc, (work / "explain.csv").string());
                res.artifacts.push_back("explain.csv");

                res.diagnostics["additivity_max_error"] = (ex.total() - ex.prediction).cwiseAbs().maxCoeff();
                res.diagnostics["corr_svc_beta1"] = detail::pearson(svc[0], ds.beta1);
                res.diagnostics["corr_svc_beta2"] = detail::pearson(svc[1], ds.beta2);
                res.diagnostics["phi_x2_slope"] = detail::poly_fit(ds.x2, ex.phi.col(1), 1)[1];
                res.diagnostics["phi_x1_quadratic"] = detail::poly_fit(ds.x1, ex.phi.col(0), 2)[2];

                const std::vector<std::pair<std::string, Eigen::VectorXd>> surfaces{
                    {"beta1_true", ds.beta1}, {"beta2_true", ds.beta2}, {"svc_x1", svc[0]},
                    {"svc_x2", svc[1]},       {"phi_geo", ex.phi_geo}};
                for (const auto& [name, values] : surfaces) {
                    render_heatmap(values, ps, (work / "surfaces" / (name + ".svg")).string(), name);
                    res.artifacts.push_back("surfaces/" + name + ".svg");
                }
            });
        }

        detail::stage("report", [&] {
            detail::write_text(work / "result.json", result_json(res).dump(2) + "\n");
            res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            nlohmann::ordered_json t;
            t["wall_seconds"] = res.wall_seconds;
            t["threads"] = threads;
            detail::write_text(work / "timing.json", t.dump(2) + "\n");
            fs::remove_all(final_dir);
            fs::rename(work, final_dir);
        });
        return res;
    } catch (const StageError& e) {
        res.status = "failed";
        res.stage = e.stage();
        res.error = e.what();
    } catch (const std::exception& e) {
        res.status = "failed";
        res.stage = "io";
        res.error = e.what();
    }
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    try {
        nlohmann::ordered_json j;
        j["stage"] = res.stage;
        j["error"] = res.error;
        j["config"] = config_to_map(cfg);
        if (fs::exists(work)) detail::write_text(work / "error.json", j.dump(2) + "\n");
    } catch (...) {
    }
    return res;
}

}  // namespace moranml
