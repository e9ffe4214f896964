#pragma once

// Synthetic data: Gaussian-random-field coefficient surfaces with covariance
// exp(-0.5 (d / l)^2) and the response
//
//   y = 3 + (beta1 * x1 + x1^2) + (beta2 * x2 + 2 x2) + eps
//
// over a given set of locations.

#include "moranml/geometry.hpp"
#include "moranml/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

struct GrfSpec {
    double scale = 8.0;     // l, coordinate units
    double mean = 0.0;
    double jitter = 1e-10;  // added to the covariance diagonal
};

/// How the noise parameter 0.5 is read: as a variance (sd = sqrt(0.5)) or
/// directly as the standard deviation.
enum class NoiseConvention { variance, sd };

inline double noise_sd_for(NoiseConvention c) { return c == NoiseConvention::variance ? std::sqrt(0.5) : 0.5; }

struct DgpParams {
    double beta1_scale = 8.0;
    double beta2_scale = 12.0;
    NoiseConvention noise = NoiseConvention::variance;
    double jitter = 1e-10;
};

struct SyntheticDataset {
    PointSet points;
    Eigen::VectorXd x1, x2;
    Eigen::VectorXd beta1, beta2;
    Eigen::VectorXd noise;  // eps
    Eigen::VectorXd y;
    std::uint64_t seed = 0;
    double noise_sd = 0.0;

    std::ptrdiff_t size() const { return y.size(); }
};

/// Lower Cholesky factor of exp(-0.5 (d/l)^2) + jitter I; the jitter grows by
/// 10x up to 1e-4 before giving up.
inline Eigen::MatrixXd grf_cholesky(const PointSet& points, const GrfSpec& spec) {
    if (!(spec.scale > 0)) throw std::invalid_argument("GrfSpec: scale must be positive");
    if (spec.jitter < 1e-12 || spec.jitter > 1e-4) throw std::invalid_argument("GrfSpec: jitter outside [1e-12, 1e-4]");
    const auto n = points.size();
    Eigen::MatrixXd omega(n, n);
    const double inv = 1.0 / spec.scale;
    for (std::ptrdiff_t j = 0; j < n; ++j) {
        for (std::ptrdiff_t i = j; i < n; ++i) {
            const double d = std::hypot(points.coords(i, 0) - points.coords(j, 0),
                                        points.coords(i, 1) - points.coords(j, 1)) *
                             inv;
            const double v = std::exp(-0.5 * d * d);
            omega(i, j) = v;
            omega(j, i) = v;
        }
    }
    for (double jitter = spec.jitter; jitter <= 1e-4 * (1 + 1e-9); jitter *= 10) {
        Eigen::MatrixXd a = omega;
        a.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() == Eigen::Success) return llt.matrixL();
    }
    throw std::runtime_error("sample_grf: covariance not positive definite even with jitter 1e-4");
}

/// L z for z ~ N(0, I) drawn from `seed`, plus the mean.
inline Eigen::VectorXd sample_grf_from_factor(const Eigen::MatrixXd& lower, double mean, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::VectorXd z(lower.rows());
    for (std::ptrdiff_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
    Eigen::VectorXd out = lower.triangularView<Eigen::Lower>() * z;
    out.array() += mean;
    return out;
}

inline Eigen::VectorXd sample_grf(const PointSet& points, const GrfSpec& spec, std::uint64_t seed) {
    return sample_grf_from_factor(grf_cholesky(points, spec), spec.mean, seed);
}

/// y = 3 + (beta1 x1 + x1^2) + (beta2 x2 + 2 x2) + eps, elementwise.
inline Eigen::VectorXd assemble_response(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                                         const Eigen::VectorXd& beta1, const Eigen::VectorXd& beta2,
                                         const Eigen::VectorXd& noise) {
    const auto n = x1.size();
    if (x2.size() != n || beta1.size() != n || beta2.size() != n || noise.size() != n) {
        throw std::invalid_argument("assemble_response: length mismatch");
    }
    Eigen::VectorXd y(n);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        y[i] = 3.0 + (beta1[i] * x1[i] + x1[i] * x1[i]) + (beta2[i] * x2[i] + 2.0 * x2[i]) + noise[i];
    }
    return y;
}

/// Pre-factored covariance for repeated generation over one geometry.
struct DgpFactors {
    Eigen::MatrixXd beta1_lower;
    Eigen::MatrixXd beta2_lower;
};

inline DgpFactors dgp_factors(const PointSet& points, const DgpParams& params = {}) {
    return {grf_cholesky(points, GrfSpec{params.beta1_scale, 0.0, params.jitter}),
            grf_cholesky(points, GrfSpec{params.beta2_scale, 0.0, params.jitter})};
}

inline SyntheticDataset generate_dataset(const PointSet& points, std::uint64_t seed, const DgpFactors& factors,
                                         const DgpParams& params = {}) {
    const auto n = points.size();
    SyntheticDataset ds;
    ds.points = points;
    ds.seed = seed;
    ds.noise_sd = noise_sd_for(params.noise);

    Rng rx1(seed, "x1");
    Rng rx2(seed, "x2");
    Rng reps(seed, "eps");
    ds.x1.resize(n);
    ds.x2.resize(n);
    ds.noise.resize(n);
    for (std::ptrdiff_t i = 0; i < n; ++i) ds.x1[i] = rx1.uniform(-2.0, 2.0);
    for (std::ptrdiff_t i = 0; i < n; ++i) ds.x2[i] = rx2.uniform(-2.0, 2.0);
    for (std::ptrdiff_t i = 0; i < n; ++i) ds.noise[i] = ds.noise_sd * reps.normal();
    ds.beta1 = sample_grf_from_factor(factors.beta1_lower, 0.0, stream_seed(seed, "beta1"));
    ds.beta2 = sample_grf_from_factor(factors.beta2_lower, 0.0, stream_seed(seed, "beta2"));
    ds.y = assemble_response(ds.x1, ds.x2, ds.beta1, ds.beta2, ds.noise);
    return ds;
}

inline SyntheticDataset generate_dataset(const PointSet& points, std::uint64_t seed, const DgpParams& params = {}) {
    return generate_dataset(points, seed, dgp_factors(points, params), params);
}

inline void save_dataset(const SyntheticDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset: " + path);
    out << "id,x,y,x1,x2,beta1,beta2,noise,response\n";
    using detail::format_double;
    for (std::ptrdiff_t i = 0; i < ds.size(); ++i) {
        out << ds.points.ids[i] << ',' << format_double(ds.points.coords(i, 0)) << ','
            << format_double(ds.points.coords(i, 1)) << ',' << format_double(ds.x1[i]) << ','
            << format_double(ds.x2[i]) << ',' << format_double(ds.beta1[i]) << ',' << format_double(ds.beta2[i])
            << ',' << format_double(ds.noise[i]) << ',' << format_double(ds.y[i]) << '\n';
    }
}

/// Reads a dataset CSV. Geometry extras (adjacency, grid shape) are not part
/// of the file; seed and noise_sd are left at zero.
inline SyntheticDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError(path, 1, "empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,x,y,x1,x2,beta1,beta2,noise,response") throw ParseError(path, 1, "unexpected header");
    std::vector<std::array<double, 8>> rows;
    std::vector<std::string> ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        auto cols = detail::split_csv_line(line);
        if (cols.size() != 9) throw ParseError(path, lineno, "expected 9 fields");
        std::array<double, 8> r{};
        for (int k = 0; k < 8; ++k) {
            if (!detail::parse_double(cols[k + 1], r[k])) throw ParseError(path, lineno, "malformed number");
        }
        ids.push_back(detail::trim(cols[0]));
        rows.push_back(r);
    }
    const auto n = static_cast<std::ptrdiff_t>(rows.size());
    SyntheticDataset ds;
    ds.points.ids = std::move(ids);
    ds.points.coords.resize(n, 2);
    ds.x1.resize(n);
    ds.x2.resize(n);
    ds.beta1.resize(n);
    ds.beta2.resize(n);
    ds.noise.resize(n);
    ds.y.resize(n);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto& r = rows[i];
        ds.points.coords(i, 0) = r[0];
        ds.points.coords(i, 1) = r[1];
        ds.x1[i] = r[2];
        ds.x2[i] = r[3];
        ds.beta1[i] = r[4];
        ds.beta2[i] = r[5];
        ds.noise[i] = r[6];
        ds.y[i] = r[7];
    }
    return ds;
}

}  // namespace moranml
