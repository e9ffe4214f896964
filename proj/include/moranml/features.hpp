#pragma once

#include "moranml/eigenmoran.hpp"
#include "moranml/geometry.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

enum class SpatialMode { coords, eigenvectors, none };

inline const char* to_string(SpatialMode m) {
    switch (m) {
        case SpatialMode::coords: return "coords";
        case SpatialMode::eigenvectors: return "eigenvectors";
        case SpatialMode::none: return "none";
    }
    return "?";
}

/// Model inputs: non-spatial covariates first, then the spatial block.
/// Column order is fixed and recorded in `names`.
struct FeatureBundle {
    Eigen::MatrixXd nonspatial;  // n x K
    Eigen::MatrixXd spatial;     // n x S (coords: S = 2)
    SpatialMode mode = SpatialMode::none;
    std::vector<std::string> names;

    std::ptrdiff_t rows() const { return nonspatial.rows(); }
    std::ptrdiff_t n_nonspatial() const { return nonspatial.cols(); }
    std::ptrdiff_t n_spatial() const { return spatial.cols(); }
    std::ptrdiff_t n_columns() const { return nonspatial.cols() + spatial.cols(); }

    Eigen::MatrixXd matrix() const {
        Eigen::MatrixXd out(rows(), n_columns());
        out << nonspatial, spatial;
        return out;
    }
};

inline void validate(const FeatureBundle& fb) {
    if (fb.mode == SpatialMode::none && fb.spatial.cols() != 0) {
        throw std::invalid_argument("FeatureBundle: mode none with spatial columns");
    }
    if (fb.mode == SpatialMode::coords && fb.spatial.cols() != 2) {
        throw std::invalid_argument("FeatureBundle: coords mode needs exactly 2 spatial columns");
    }
    if (fb.spatial.cols() > 0 && fb.spatial.rows() != fb.nonspatial.rows()) {
        throw std::invalid_argument("FeatureBundle: row mismatch between blocks");
    }
    if (static_cast<std::ptrdiff_t>(fb.names.size()) != fb.n_columns()) {
        throw std::invalid_argument("FeatureBundle: names do not match column count");
    }
}

/// X columns named x1..xK plus the spatial block. `eigen_columns` are the
/// candidate indices (0-based) of the basis columns kept; they are named
/// e<index + 1>.
inline FeatureBundle make_bundle(const Eigen::MatrixXd& x, SpatialMode mode, const PointSet* points = nullptr,
                                 const EigenBasis* basis = nullptr, const std::vector<int>* eigen_columns = nullptr) {
    FeatureBundle fb;
    fb.nonspatial = x;
    fb.mode = mode;
    for (std::ptrdiff_t k = 0; k < x.cols(); ++k) fb.names.push_back("x" + std::to_string(k + 1));
    if (mode == SpatialMode::coords) {
        if (!points) throw std::invalid_argument("make_bundle: coords mode needs points");
        fb.spatial = points->coords;
        fb.names.push_back("coord_x");
        fb.names.push_back("coord_y");
    } else if (mode == SpatialMode::eigenvectors) {
        if (!basis) throw std::invalid_argument("make_bundle: eigenvector mode needs a basis");
        std::vector<int> cols;
        if (eigen_columns) {
            cols = *eigen_columns;
        } else {
            for (int l = 0; l < basis->size(); ++l) cols.push_back(l);
        }
        fb.spatial.resize(x.rows(), static_cast<std::ptrdiff_t>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) {
            fb.spatial.col(k) = basis->vectors.col(cols[k]);
            fb.names.push_back("e" + std::to_string(cols[k] + 1));
        }
    } else {
        fb.spatial.resize(x.rows(), 0);
    }
    validate(fb);
    return fb;
}

}  // namespace moranml
