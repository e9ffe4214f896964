#pragma once

// Static SVG heatmaps of a value per location. Grid point sets draw one
// square per cell, anything else a fixed-radius circle per point. Colours
// run blue - white - red, symmetric about 0.

#include "moranml/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace moranml {

/// Diverging colour for t in [-1, 1]; monotone in t channel by channel.
inline std::string diverging_color(double t) {
    t = std::clamp(t, -1.0, 1.0);
    int r = 255, g = 255, b = 255;
    if (t > 0) {
        g = b = static_cast<int>(std::lround(255.0 * (1.0 - t)));
    } else if (t < 0) {
        r = g = static_cast<int>(std::lround(255.0 * (1.0 + t)));
    }
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

inline void render_heatmap(const Eigen::VectorXd& values, const PointSet& points, const std::string& path,
                           const std::string& title = "") {
    const auto n = values.size();
    if (n != points.size() || n == 0) throw std::invalid_argument("render_heatmap: values do not match points");
    if (!values.allFinite()) throw std::invalid_argument("render_heatmap: non-finite values");
    const double vmin = values.minCoeff(), vmax = values.maxCoeff();
    double scale = std::max(std::abs(vmin), std::abs(vmax));
    if (!(scale > 0)) scale = 1.0;

    const double x0 = points.coords.col(0).minCoeff(), x1 = points.coords.col(0).maxCoeff();
    const double y0 = points.coords.col(1).minCoeff(), y1 = points.coords.col(1).maxCoeff();
    const bool grid = points.grid.has_value();
    const double cell = grid ? points.grid->spacing : 0.0;
    const double pad = grid ? cell / 2 : std::max({x1 - x0, y1 - y0, 1.0}) * 0.01;
    const double w = (x1 - x0) + 2 * pad, h = (y1 - y0) + 2 * pad;
    const double px = 560.0 / std::max(w, h);
    const double width = w * px, height = h * px;
    const double legend = 40;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write heatmap: " + path);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                  width + 20, height + legend + 20, width + 20, height + legend + 20);
    out << buf;
    if (!title.empty()) out << "<title>" << title << "</title>\n";
    out << "<g id=\"cells\" stroke=\"none\">\n";
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        // north up: flip y
        const double cx = 10 + (points.coords(i, 0) - x0 + pad) * px;
        const double cy = 10 + (y1 - points.coords(i, 1) + pad) * px;
        const std::string fill = diverging_color(values[i] / scale);
        if (grid) {
            const double s = cell * px;
            std::snprintf(buf, sizeof buf, "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"%s\"/>\n",
                          cx - s / 2, cy - s / 2, s, s, fill.c_str());
        } else {
            std::snprintf(buf, sizeof buf, "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"3\" fill=\"%s\"/>\n", cx, cy,
                          fill.c_str());
        }
        out << buf;
    }
    out << "</g>\n";
    const std::string lo = detail::format_double(vmin), hi = detail::format_double(vmax);
    std::snprintf(buf, sizeof buf, "<text id=\"legend\" x=\"10\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"14\">",
                  height + legend);
    out << buf << "min=" << lo << " max=" << hi << "</text>\n</svg>\n";
}

}  // namespace moranml
