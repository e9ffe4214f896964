#pragma once

// One fit/predict surface over the linear family and the tree ensembles, and
// a versioned text dump that restores predictions bit for bit.

#include "moranml/features.hpp"
#include "moranml/linear.hpp"
#include "moranml/trees.hpp"

#include <Eigen/Dense>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

enum class ModelKind { linear, esf, esf_svc, forest, gbm };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::linear: return "linear";
        case ModelKind::esf: return "esf";
        case ModelKind::esf_svc: return "esf_svc";
        case ModelKind::forest: return "forest";
        case ModelKind::gbm: return "gbm";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    for (auto k : {ModelKind::linear, ModelKind::esf, ModelKind::esf_svc, ModelKind::forest, ModelKind::gbm}) {
        if (s == to_string(k)) return k;
    }
    throw std::invalid_argument("unknown model kind: " + s);
}

inline bool is_tree_kind(ModelKind k) { return k == ModelKind::forest || k == ModelKind::gbm; }

struct PredictorModel {
    ModelKind kind = ModelKind::linear;
    std::vector<std::string> columns;  // input schema: non-spatial then spatial
    int n_nonspatial = 0;
    std::uint64_t seed = 0;
    TreeParams hp;

    // linear family: coefficients in design order
    //   linear/esf: [intercept, inputs...]
    //   esf_svc:    per k, [X_k, X_k * e_l for l in svc_columns[k]]
    Eigen::VectorXd coef;
    std::vector<std::vector<int>> svc_columns;  // indices into the spatial block

    TreeEnsemble ensemble;

    std::ptrdiff_t n_inputs() const { return static_cast<std::ptrdiff_t>(columns.size()); }

    Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
        if (x.cols() != n_inputs()) {
            throw std::invalid_argument("predict: expected " + std::to_string(n_inputs()) + " columns, got " +
                                        std::to_string(x.cols()));
        }
        switch (kind) {
            case ModelKind::linear:
            case ModelKind::esf: {
                Eigen::VectorXd out = x * coef.tail(x.cols());
                out.array() += coef[0];
                return out;
            }
            case ModelKind::esf_svc:
                return svc_design(x.leftCols(n_nonspatial), x.rightCols(x.cols() - n_nonspatial), svc_columns) * coef;
            case ModelKind::forest:
            case ModelKind::gbm: return ensemble.predict(x);
        }
        throw std::logic_error("predict: unknown kind");
    }

    /// Intercept and non-spatial coefficients (linear, esf).
    Eigen::VectorXd beta() const { return coef.head(1 + n_nonspatial); }
    /// Spatial-block coefficients (linear with coords, esf).
    Eigen::VectorXd gamma() const { return coef.tail(coef.size() - 1 - n_nonspatial); }

    /// ESF-SVC coefficient surface beta_k + E_k gamma_k (k = 0 intercept).
    Eigen::VectorXd svc_surface(int k, const Eigen::MatrixXd& spatial) const {
        if (kind != ModelKind::esf_svc) throw std::logic_error("svc_surface: not an ESF-SVC model");
        if (k < 0 || k > n_nonspatial) throw std::out_of_range("svc_surface: coefficient index");
        std::ptrdiff_t at = 0;
        for (int j = 0; j < k; ++j) at += 1 + static_cast<std::ptrdiff_t>(svc_columns[j].size());
        Eigen::VectorXd out = Eigen::VectorXd::Constant(spatial.rows(), coef[at]);
        for (std::size_t l = 0; l < svc_columns[k].size(); ++l) {
            out += coef[at + 1 + static_cast<std::ptrdiff_t>(l)] * spatial.col(svc_columns[k][l]);
        }
        return out;
    }
};

inline PredictorModel fit_ols(const FeatureBundle& fb, const Eigen::VectorXd& y) {
    validate(fb);
    PredictorModel m;
    m.kind = ModelKind::linear;
    m.columns = fb.names;
    m.n_nonspatial = static_cast<int>(fb.n_nonspatial());
    std::vector<std::string> names{"intercept"};
    names.insert(names.end(), fb.names.begin(), fb.names.end());
    m.coef = least_squares(with_intercept(fb.matrix()), y, names);
    return m;
}

inline PredictorModel fit_esf(const FeatureBundle& fb, const Eigen::VectorXd& y) {
    if (fb.mode != SpatialMode::eigenvectors) throw std::invalid_argument("fit_esf: needs eigenvector spatial mode");
    PredictorModel m = fit_ols(fb, y);
    m.kind = ModelKind::esf;
    return m;
}

/// `subsets[k]` indexes the bundle's spatial columns used by coefficient k
/// (k = 0 intercept, 1..K covariates).
inline PredictorModel fit_esf_svc(const FeatureBundle& fb, const std::vector<std::vector<int>>& subsets,
                                  const Eigen::VectorXd& y) {
    validate(fb);
    if (fb.mode != SpatialMode::eigenvectors) throw std::invalid_argument("fit_esf_svc: needs eigenvector spatial mode");
    PredictorModel m;
    m.kind = ModelKind::esf_svc;
    m.columns = fb.names;
    m.n_nonspatial = static_cast<int>(fb.n_nonspatial());
    m.svc_columns = subsets;
    const std::vector<std::string> x_names(fb.names.begin(), fb.names.begin() + fb.n_nonspatial());
    const std::vector<std::string> e_names(fb.names.begin() + fb.n_nonspatial(), fb.names.end());
    m.coef = least_squares(svc_design(fb.nonspatial, fb.spatial, subsets), y, svc_names(x_names, e_names, subsets));
    return m;
}

inline PredictorModel fit_tree_ensemble(const FeatureBundle& fb, const Eigen::VectorXd& y, const TreeParams& hp,
                                        EnsembleMode mode, std::uint64_t seed, int threads = 1) {
    validate(fb);
    PredictorModel m;
    m.kind = mode == EnsembleMode::bagging ? ModelKind::forest : ModelKind::gbm;
    m.columns = fb.names;
    m.n_nonspatial = static_cast<int>(fb.n_nonspatial());
    m.seed = seed;
    m.hp = hp;
    const Eigen::MatrixXd x = fb.matrix();
    m.ensemble = mode == EnsembleMode::bagging ? fit_bagging(x, y, hp, seed, threads) : fit_boosting(x, y, hp, seed);
    return m;
}

// ---------------------------------------------------------------- dump / load

namespace detail {

inline std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class TokenReader {
public:
    explicit TokenReader(std::istream& in) : in_(in) {}
    std::string word() {
        std::string w;
        if (!(in_ >> w)) throw std::runtime_error("model file truncated");
        return w;
    }
    void expect(const std::string& w) {
        const auto got = word();
        if (got != w) throw std::runtime_error("model file: expected '" + w + "', got '" + got + "'");
    }
    long long integer() {
        const auto w = word();
        long long v = 0;
        auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
        if (ec != std::errc() || p != w.data() + w.size()) throw std::runtime_error("model file: bad integer " + w);
        return v;
    }
    double real() {
        const auto w = word();
        double v = 0;
        auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
        if (ec != std::errc() || p != w.data() + w.size()) throw std::runtime_error("model file: bad number " + w);
        return v;
    }

private:
    std::istream& in_;
};

}  // namespace detail

constexpr const char* kModelFormat = "moranml-model";
constexpr int kModelVersion = 1;

inline void dump_model(const PredictorModel& m, std::ostream& out) {
    using detail::exact;
    out << kModelFormat << ' ' << kModelVersion << '\n';
    out << "kind " << to_string(m.kind) << '\n';
    out << "seed " << m.seed << '\n';
    out << "columns " << m.columns.size();
    for (const auto& c : m.columns) out << ' ' << c;
    out << "\nnonspatial " << m.n_nonspatial << '\n';
    const auto& h = m.hp;
    out << "hp max_depth " << h.max_depth << " n_trees " << h.n_trees << " learning_rate " << exact(h.learning_rate)
        << " min_leaf " << h.min_leaf << " subsample " << exact(h.subsample) << " max_features "
        << exact(h.max_features) << " bootstrap " << h.bootstrap << " early_stopping " << h.early_stopping
        << " validation_fraction " << exact(h.validation_fraction) << " patience " << h.patience << '\n';
    out << "coef " << m.coef.size();
    for (std::ptrdiff_t k = 0; k < m.coef.size(); ++k) out << ' ' << exact(m.coef[k]);
    out << "\nsvc " << m.svc_columns.size() << '\n';
    for (const auto& cols : m.svc_columns) {
        out << cols.size();
        for (int c : cols) out << ' ' << c;
        out << '\n';
    }
    const auto& e = m.ensemble;
    out << "ensemble " << (e.mode == EnsembleMode::bagging ? "bagging" : "boosting") << ' ' << exact(e.base) << ' '
        << exact(e.learning_rate) << ' ' << e.trees.size() << '\n';
    for (const auto& t : e.trees) {
        out << "tree " << t.size() << '\n';
        for (std::size_t k = 0; k < t.size(); ++k) {
            out << t.feature[k] << ' ' << exact(t.threshold[k]) << ' ' << t.left[k] << ' ' << t.right[k] << ' '
                << exact(t.value[k]) << '\n';
        }
    }
    out << "end\n";
}

inline PredictorModel load_model(std::istream& in) {
    detail::TokenReader r(in);
    r.expect(kModelFormat);
    const auto version = r.integer();
    if (version != kModelVersion) throw std::runtime_error("unsupported model version " + std::to_string(version));
    PredictorModel m;
    r.expect("kind");
    m.kind = parse_model_kind(r.word());
    r.expect("seed");
    {
        const auto w = r.word();
        std::from_chars(w.data(), w.data() + w.size(), m.seed);
    }
    r.expect("columns");
    const auto nc = r.integer();
    for (long long k = 0; k < nc; ++k) m.columns.push_back(r.word());
    r.expect("nonspatial");
    m.n_nonspatial = static_cast<int>(r.integer());
    r.expect("hp");
    auto& h = m.hp;
    r.expect("max_depth");
    h.max_depth = static_cast<int>(r.integer());
    r.expect("n_trees");
    h.n_trees = static_cast<int>(r.integer());
    r.expect("learning_rate");
    h.learning_rate = r.real();
    r.expect("min_leaf");
    h.min_leaf = static_cast<int>(r.integer());
    r.expect("subsample");
    h.subsample = r.real();
    r.expect("max_features");
    h.max_features = r.real();
    r.expect("bootstrap");
    h.bootstrap = r.integer() != 0;
    r.expect("early_stopping");
    h.early_stopping = r.integer() != 0;
    r.expect("validation_fraction");
    h.validation_fraction = r.real();
    r.expect("patience");
    h.patience = static_cast<int>(r.integer());
    r.expect("coef");
    m.coef.resize(r.integer());
    for (std::ptrdiff_t k = 0; k < m.coef.size(); ++k) m.coef[k] = r.real();
    r.expect("svc");
    m.svc_columns.resize(static_cast<std::size_t>(r.integer()));
    for (auto& cols : m.svc_columns) {
        cols.resize(static_cast<std::size_t>(r.integer()));
        for (auto& c : cols) c = static_cast<int>(r.integer());
    }
    r.expect("ensemble");
    const auto mode = r.word();
    if (mode != "bagging" && mode != "boosting") throw std::runtime_error("model file: bad ensemble mode " + mode);
    m.ensemble.mode = mode == "bagging" ? EnsembleMode::bagging : EnsembleMode::boosting;
    m.ensemble.base = r.real();
    m.ensemble.learning_rate = r.real();
    m.ensemble.trees.resize(static_cast<std::size_t>(r.integer()));
    for (auto& t : m.ensemble.trees) {
        r.expect("tree");
        const auto nodes = static_cast<std::size_t>(r.integer());
        t.feature.resize(nodes);
        t.threshold.resize(nodes);
        t.left.resize(nodes);
        t.right.resize(nodes);
        t.value.resize(nodes);
        for (std::size_t k = 0; k < nodes; ++k) {
            t.feature[k] = static_cast<int>(r.integer());
            t.threshold[k] = r.real();
            t.left[k] = static_cast<int>(r.integer());
            t.right[k] = static_cast<int>(r.integer());
            t.value[k] = r.real();
            if (t.feature[k] >= 0 && (t.left[k] <= 0 || t.right[k] <= 0 || static_cast<std::size_t>(t.left[k]) >= nodes ||
                                      static_cast<std::size_t>(t.right[k]) >= nodes)) {
                throw std::runtime_error("model file: corrupt tree links");
            }
        }
    }
    r.expect("end");
    return m;
}

inline void save_model(const PredictorModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model: " + path);
    dump_model(m, out);
}

inline PredictorModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model: " + path);
    return load_model(in);
}

}  // namespace moranml
