#pragma once

// Unstandardized spatial weights C: Queen contiguity and the exponential
// distance kernel exp(-d / r).

#include "moranml/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace moranml {

enum class WeightsKind { queen, exponential };

inline const char* to_string(WeightsKind k) { return k == WeightsKind::queen ? "queen" : "exp"; }

struct SpatialWeights {
    Eigen::MatrixXd c;
    WeightsKind kind = WeightsKind::queen;
    double total_weight = 0.0;  // 1'C1

    std::ptrdiff_t size() const { return c.rows(); }
};

inline void validate(const SpatialWeights& w) {
    const auto n = w.c.rows();
    if (n == 0 || w.c.cols() != n) throw std::invalid_argument("SpatialWeights: matrix must be square");
    for (std::ptrdiff_t j = 0; j < n; ++j) {
        if (w.c(j, j) != 0.0) throw std::invalid_argument("SpatialWeights: nonzero diagonal");
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            if (w.c(i, j) < 0.0) throw std::invalid_argument("SpatialWeights: negative entry");
            if (w.c(i, j) != w.c(j, i)) throw std::invalid_argument("SpatialWeights: not symmetric");
        }
    }
    if (!(w.total_weight > 0.0)) throw std::invalid_argument("SpatialWeights: total weight must be positive");
    const double sum = w.c.sum();
    if (std::abs(sum - w.total_weight) > 1e-9 * std::max(1.0, sum)) {
        throw std::invalid_argument("SpatialWeights: total_weight does not match entry sum");
    }
}

/// Queen contiguity. Generated grids use the 8-neighbourhood template
/// regardless of spacing; other point sets need explicit adjacency pairs.
inline SpatialWeights queen_weights(const PointSet& ps) {
    const auto n = ps.size();
    SpatialWeights w;
    w.kind = WeightsKind::queen;
    w.c = Eigen::MatrixXd::Zero(n, n);
    if (ps.grid && !ps.has_adjacency()) {
        const int rows = ps.grid->rows;
        const int cols = ps.grid->cols;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        if (dr == 0 && dc == 0) continue;
                        const int rr = r + dr;
                        const int cc = c + dc;
                        if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
                        w.c(r * cols + c, rr * cols + cc) = 1.0;
                    }
                }
            }
        }
    } else if (ps.has_adjacency()) {
        for (const auto& [a, b] : ps.adjacency) {
            w.c(a, b) = 1.0;
            w.c(b, a) = 1.0;
        }
    } else {
        throw std::invalid_argument(
            "queen_weights: irregular point set has no adjacency; supply id pairs in an #adjacency section");
    }
    w.total_weight = w.c.sum();
    if (!(w.total_weight > 0)) throw std::invalid_argument("queen_weights: no neighbour pairs");
    return w;
}

inline SpatialWeights exponential_weights(const DistanceMatrix& d, double r) {
    if (!(r > 0) || !std::isfinite(r)) throw std::invalid_argument("exponential_weights: range r must be positive");
    const auto n = d.rows();
    SpatialWeights w;
    w.kind = WeightsKind::exponential;
    w.c.resize(n, n);
    for (std::ptrdiff_t j = 0; j < n; ++j) {
        for (std::ptrdiff_t i = j; i < n; ++i) {
            const double v = i == j ? 0.0 : std::exp(-d(i, j) / r);
            w.c(i, j) = v;
            w.c(j, i) = v;
        }
    }
    w.total_weight = w.c.sum();
    return w;
}

/// (i, j, c_ij) triples for the nonzero entries.
inline void save_weights_triples(const SpatialWeights& w, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write weights file: " + path);
    out << "i,j,c\n";
    for (std::ptrdiff_t i = 0; i < w.c.rows(); ++i) {
        for (std::ptrdiff_t j = 0; j < w.c.cols(); ++j) {
            if (w.c(i, j) != 0.0) out << i << ',' << j << ',' << detail::format_double(w.c(i, j)) << '\n';
        }
    }
}

}  // namespace moranml
