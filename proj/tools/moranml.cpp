// moranml command line: dataset generation, eigenvector export, selection,
// training, explanation, benchmark matrices and reports.
//
// Exit codes: 0 success, 1 a scenario failed, 2 bad configuration.

#include "moranml/bench.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

using namespace moranml;

namespace {

constexpr int kOk = 0;
constexpr int kScenarioFailed = 1;
constexpr int kConfigError = 2;

struct Globals {
    std::string config;
    std::string out = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    bool force = false;
    std::vector<std::string> sets;
};

std::map<std::string, std::string> overrides(const Globals& g) {
    std::map<std::string, std::string> kv;
    for (const auto& s : g.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || s.find('.') > eq) throw ConfigError("--set expects section.key=value, got '" + s + "'");
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return kv;
}

std::map<std::string, std::string> base_map(const Globals& g) {
    std::map<std::string, std::string> kv;
    if (!g.config.empty()) {
        kv = read_ini(g.config);
        if (!kv.count("moranml.schema")) throw ConfigError(g.config + ": missing [moranml] schema");
        std::erase_if(kv, [](const auto& p) { return p.first.rfind("bench.", 0) == 0; });
    }
    for (const auto& [k, v] : overrides(g)) kv[k] = v;
    if (g.seed_set) kv["scenario.seed"] = std::to_string(g.seed);
    return kv;
}

ScenarioConfig scenario(const Globals& g, std::map<std::string, std::string> extra = {}) {
    auto kv = base_map(g);
    for (auto& [k, v] : extra) kv[k] = v;
    auto cfg = config_from_map(kv);
    if (!g.config.empty() && cfg.geometry == GeometryKind::points && fs::path(cfg.points_file).is_relative() &&
        !fs::exists(cfg.points_file)) {
        const auto beside = fs::path(g.config).parent_path() / cfg.points_file;
        if (fs::exists(beside)) cfg.points_file = beside.string();
    }
    validate(cfg);
    if (cfg.geometry == GeometryKind::points && !fs::exists(cfg.points_file)) {
        throw ConfigError("points_file not found: " + cfg.points_file);
    }
    return cfg;
}

void print_result(const ScenarioResult& r) {
    if (!r.ok()) {
        std::fprintf(stderr, "FAILED %s [%s] %s\n", r.hash.c_str(), r.stage.c_str(), r.error.c_str());
        return;
    }
    std::printf("%-7s %s  %-10s %-8s %-12s %-6s seed=%-4llu selected=%-4d R2=%.4f  (%s)\n", r.status.c_str(),
                r.hash.c_str(), geometry_label(r.config).c_str(), to_string(r.config.model),
                summary_column(r.config).c_str(), "", static_cast<unsigned long long>(r.config.seed), r.selected_count,
                r.mean_r2, r.dir.c_str());
}

int run_one(const ScenarioConfig& cfg, const Globals& g) {
    const auto r = run_scenario(cfg, {g.out, g.force, g.threads});
    print_result(r);
    if (!r.ok()) return r.stage == "config" ? kConfigError : kScenarioFailed;
    for (const auto& [k, v] : r.diagnostics) std::printf("  %s = %.6g\n", k.c_str(), v);
    return kOk;
}

fs::path ensure_out(const Globals& g) {
    fs::create_directories(g.out);
    return g.out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Moran eigenvectors vs coordinates for spatial machine learning"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "INI scenario or bench file")->check(CLI::ExistingFile);
    app.add_option("--out", g.out, "Output root directory");
    app.add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { g.seed = s, g.seed_set = true; }, "Master seed (overrides the config)");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::Range(1, 1024));
    app.add_flag("--force", g.force, "Recompute scenarios whose output already exists");
    app.add_option("--set", g.sets, "Override a config value, e.g. --set scenario.model=forest");
    app.fallthrough();

    auto* generate = app.add_subcommand("generate", "Write a synthetic dataset (dataset.csv)");
    auto* eigen = app.add_subcommand("eigen", "Export the candidate Moran eigenvector basis (eigen.csv)");
    auto* select = app.add_subcommand("select", "LASSO eigenvector selection (selection.csv)");
    auto* train = app.add_subcommand("train", "Run one scenario: CV R^2 and the final model");
    auto* explain = app.add_subcommand("explain", "Run one scenario with GeoShapley explanations and surfaces");
    auto* bench = app.add_subcommand("bench", "Run a scenario matrix and write summary.csv");
    auto* demo = app.add_subcommand("demo-tree-depth", "Single-tree depth demo on a GRF surface");
    auto* report = app.add_subcommand("report", "Rebuild summary.csv and runs.csv from finished scenarios");

    int parallel = 1;
    bench->add_option("--parallel", parallel, "Scenarios run at once")->check(CLI::Range(1, 256));
    std::vector<int> depths{0, 2, 4, 6, 8};
    demo->add_option("--depths", depths, "Ascending tree depths")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (generate->parsed()) {
            const auto cfg = scenario(g);
            const auto out = ensure_out(g);
            DgpParams params;
            params.noise = cfg.noise;
            const auto ds = generate_dataset(scenario_points(cfg), cfg.seed, params);
            save_dataset(ds, (out / "dataset.csv").string());
            std::printf("wrote %s (n = %td, seed = %llu)\n", (out / "dataset.csv").c_str(), ds.size(),
                        static_cast<unsigned long long>(cfg.seed));
            return kOk;
        }
        if (eigen->parsed() || select->parsed()) {
            // the basis needs eigenvector mode; a linear model would not validate there
            const auto kv = base_map(g);
            const bool linear = kv.count("scenario.model") && kv.at("scenario.model") == "linear";
            auto cfg = scenario(g, {{"scenario.spatial_mode", "eigenvectors"}, {"scenario.model", linear ? "esf" : kv.count("scenario.model") ? kv.at("scenario.model") : "gbm"}});
            const auto out = ensure_out(g);
            const auto ps = scenario_points(cfg);
            const auto basis = cached_eigen_basis(cfg, ps, g.out);
            save_eigen_basis(basis, ps.ids, (out / "eigen.csv").string());
            std::printf("wrote %s (L = %td, %s weights)\n", (out / "eigen.csv").c_str(), basis.size(), to_string(cfg.weights));
            if (select->parsed()) {
                DgpParams params;
                params.noise = cfg.noise;
                const auto ds = generate_dataset(ps, cfg.seed, params);
                Eigen::MatrixXd x(ds.size(), 2);
                x << ds.x1, ds.x2;
                const auto s = select_eigenvectors(basis.vectors, x, ds.y, cfg.selection, cfg.selection_design,
                                                   stream_seed(cfg.seed, "selection"), cfg.folds, g.threads);
                save_selection(s.shared, (out / "selection.csv").string());
                std::printf("wrote %s (%s, %zu of %td selected)\n", (out / "selection.csv").c_str(),
                            to_string(cfg.selection), s.shared.indices.size(), basis.size());
            }
            return kOk;
        }
        if (train->parsed()) return run_one(scenario(g, {{"scenario.explain", "false"}}), g);
        if (explain->parsed()) return run_one(scenario(g, {{"scenario.explain", "true"}}), g);
        if (bench->parsed()) {
            if (g.config.empty()) throw ConfigError("bench needs --config with a [bench] section");
            auto b = load_bench_config(g.config, overrides(g));
            if (g.seed_set) b.seeds = {g.seed};
            const auto cfgs = expand_matrix(b);
            std::printf("%zu scenarios, %d at a time, %d threads\n", cfgs.size(), parallel, g.threads);
            const auto m = run_matrix(cfgs, parallel, {g.out, g.force, g.threads}, print_result);
            std::printf("\n%s\nwrote %s and %s\n", build_summary(m.results).c_str(), m.summary_path.c_str(),
                        m.runs_path.c_str());
            return m.failures ? kScenarioFailed : kOk;
        }
        if (demo->parsed()) {
            const auto cfg = scenario(g);
            const auto out = ensure_out(g);
            const auto rows = tree_depth_demo(cfg.seed, depths, cfg.rows, cfg.cols);
            const auto path = out / "tree_depth.csv";
            save_depth_demo(rows, path.string());
            std::printf("depth  R2(surface)  R2(variant)  R2(smooth part)  R2(checker part)\n");
            for (const auto& r : rows) {
                std::printf("%5d  %11.4f  %11.4f  %15.4f  %16.4f\n", r.depth, r.r2_surface, r.r2_variant,
                            r.r2_variant_smooth, r.r2_variant_checker);
            }
            std::printf("wrote %s\n", path.c_str());
            return kOk;
        }
        if (report->parsed()) {
            MatrixResult m;
            m.results = collect_results(g.out);
            if (m.results.empty()) {
                std::fprintf(stderr, "no finished scenarios under %s\n", g.out.c_str());
                return kScenarioFailed;
            }
            write_reports(m, g.out);
            std::printf("%s\nwrote %s and %s\n", build_summary(m.results).c_str(), m.summary_path.c_str(),
                        m.runs_path.c_str());
            return kOk;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kScenarioFailed;
    }
    return kOk;
}
