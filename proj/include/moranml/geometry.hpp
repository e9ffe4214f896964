#pragma once

// Spatial supports: regular grids and irregular point sets (centroids plus
// optional adjacency pairs), pairwise Euclidean distances, and the longest
// edge of the Euclidean minimum spanning tree.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace moranml {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& path, std::size_t line, const std::string& msg)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct GridShape {
    int rows = 0;
    int cols = 0;
    double spacing = 1.0;
};

/// Undirected pair (a, b) with a < b.
using IndexPair = std::pair<int, int>;

struct PointSet {
    Eigen::MatrixX2d coords;
    std::vector<std::string> ids;
    std::set<IndexPair> adjacency;  // empty when not supplied
    std::optional<GridShape> grid;  // set by make_grid

    std::ptrdiff_t size() const { return coords.rows(); }
    bool has_adjacency() const { return !adjacency.empty(); }
};

using DistanceMatrix = Eigen::MatrixXd;

inline PointSet make_grid(int rows, int cols, double spacing) {
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("make_grid: rows and cols must be positive");
    if (!(spacing > 0) || !std::isfinite(spacing)) throw std::invalid_argument("make_grid: spacing must be positive");
    if (static_cast<long long>(rows) * cols < 4) throw std::invalid_argument("make_grid: need at least 4 cells");

    PointSet ps;
    const int n = rows * cols;
    ps.coords.resize(n, 2);
    ps.ids.reserve(n);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int i = r * cols + c;
            ps.coords(i, 0) = c * spacing;
            ps.coords(i, 1) = r * spacing;
            ps.ids.push_back(std::to_string(i));
        }
    }
    ps.grid = GridShape{rows, cols, spacing};
    return ps;
}

/// Throws std::invalid_argument if `ps` violates the PointSet invariants.
inline void validate(const PointSet& ps) {
    const auto n = ps.size();
    if (n < 2) throw std::invalid_argument("PointSet: need at least 2 points");
    if (static_cast<std::ptrdiff_t>(ps.ids.size()) != n) throw std::invalid_argument("PointSet: id count mismatch");
    if (!ps.coords.allFinite()) throw std::invalid_argument("PointSet: non-finite coordinate");
    for (const auto& [a, b] : ps.adjacency) {
        if (a < 0 || b < 0 || a >= n || b >= n) throw std::invalid_argument("PointSet: adjacency index out of range");
        if (a >= b) throw std::invalid_argument("PointSet: adjacency pairs must be stored as (lo, hi) without self-pairs");
    }
    if (ps.adjacency.empty()) {
        std::vector<std::ptrdiff_t> order(n);
        for (std::ptrdiff_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto x, auto y) {
            return std::pair(ps.coords(x, 0), ps.coords(x, 1)) < std::pair(ps.coords(y, 0), ps.coords(y, 1));
        });
        for (std::ptrdiff_t k = 1; k < n; ++k) {
            if (ps.coords(order[k], 0) == ps.coords(order[k - 1], 0) &&
                ps.coords(order[k], 1) == ps.coords(order[k - 1], 1)) {
                throw std::invalid_argument("PointSet: duplicate coordinates for ids " + ps.ids[order[k - 1]] +
                                            " and " + ps.ids[order[k]]);
            }
        }
    }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline bool parse_double(const std::string& s, double& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace detail

/// Reads `id,x,y` rows, optionally followed by a `#adjacency` line and
/// `id_a,id_b` rows. Pairs are symmetrized into undirected index pairs.
inline PointSet load_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open point file: " + path);

    PointSet ps;
    std::unordered_map<std::string, int> index;
    std::vector<std::array<double, 2>> xy;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    bool in_adjacency = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        if (!header_seen) {
            auto cols = detail::split_csv_line(line);
            if (cols.size() != 3 || detail::trim(cols[0]) != "id" || detail::trim(cols[1]) != "x" ||
                detail::trim(cols[2]) != "y") {
                throw ParseError(path, lineno, "expected header 'id,x,y'");
            }
            header_seen = true;
            continue;
        }
        if (detail::trim(line) == "#adjacency") {
            if (in_adjacency) throw ParseError(path, lineno, "duplicate #adjacency section");
            in_adjacency = true;
            continue;
        }
        auto cols = detail::split_csv_line(line);
        if (!in_adjacency) {
            if (cols.size() != 3) throw ParseError(path, lineno, "expected 3 fields");
            const std::string id = detail::trim(cols[0]);
            if (id.empty()) throw ParseError(path, lineno, "empty id");
            double x = 0, y = 0;
            if (!detail::parse_double(cols[1], x) || !detail::parse_double(cols[2], y)) {
                throw ParseError(path, lineno, "malformed coordinate");
            }
            if (!index.emplace(id, static_cast<int>(ps.ids.size())).second) {
                throw ParseError(path, lineno, "duplicate id '" + id + "'");
            }
            ps.ids.push_back(id);
            xy.push_back({x, y});
        } else {
            if (cols.size() != 2) throw ParseError(path, lineno, "expected 2 fields in adjacency row");
            const std::string a = detail::trim(cols[0]);
            const std::string b = detail::trim(cols[1]);
            auto ia = index.find(a);
            auto ib = index.find(b);
            if (ia == index.end()) throw ParseError(path, lineno, "adjacency references unknown id '" + a + "'");
            if (ib == index.end()) throw ParseError(path, lineno, "adjacency references unknown id '" + b + "'");
            if (ia->second == ib->second) throw ParseError(path, lineno, "self adjacency for id '" + a + "'");
            ps.adjacency.emplace(std::min(ia->second, ib->second), std::max(ia->second, ib->second));
        }
    }
    if (!header_seen) throw ParseError(path, lineno, "missing header");
    if (ps.ids.size() < 2) throw ParseError(path, lineno, "need at least 2 points");
    ps.coords.resize(static_cast<std::ptrdiff_t>(xy.size()), 2);
    for (std::size_t i = 0; i < xy.size(); ++i) {
        ps.coords(i, 0) = xy[i][0];
        ps.coords(i, 1) = xy[i][1];
    }
    validate(ps);
    return ps;
}

inline void save_points(const PointSet& ps, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write point file: " + path);
    out << "id,x,y\n";
    for (std::ptrdiff_t i = 0; i < ps.size(); ++i) {
        out << ps.ids[i] << ',' << detail::format_double(ps.coords(i, 0)) << ','
            << detail::format_double(ps.coords(i, 1)) << '\n';
    }
    if (!ps.adjacency.empty()) {
        out << "#adjacency\n";
        for (const auto& [a, b] : ps.adjacency) out << ps.ids[a] << ',' << ps.ids[b] << '\n';
    }
}

inline DistanceMatrix pairwise_distances(const PointSet& ps) {
    const auto n = ps.size();
    DistanceMatrix d(n, n);
    for (std::ptrdiff_t j = 0; j < n; ++j) {
        d(j, j) = 0.0;
        for (std::ptrdiff_t i = j + 1; i < n; ++i) {
            const double v = std::hypot(ps.coords(i, 0) - ps.coords(j, 0), ps.coords(i, 1) - ps.coords(j, 1));
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

/// Longest edge of a minimum spanning tree over the complete graph `d`
/// (dense O(n^2) Prim).
inline double mst_max_edge(const DistanceMatrix& d) {
    const auto n = d.rows();
    if (n < 2 || d.cols() != n) throw std::invalid_argument("mst_max_edge: need a square matrix with n >= 2");
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<char> in_tree(n, 0);
    in_tree[0] = 1;
    for (std::ptrdiff_t i = 1; i < n; ++i) best[i] = d(i, 0);
    double longest = 0.0;
    for (std::ptrdiff_t step = 1; step < n; ++step) {
        std::ptrdiff_t next = -1;
        double nd = std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            if (!in_tree[i] && best[i] < nd) {
                nd = best[i];
                next = i;
            }
        }
        in_tree[next] = 1;
        longest = std::max(longest, nd);
        const double* col = d.data() + next * n;
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            if (!in_tree[i] && col[i] < best[i]) best[i] = col[i];
        }
    }
    return longest;
}

/// Copy of `ps` with coordinates mapped affinely so x spans [0, width] and
/// y spans [0, width * aspect], aspect being the original extent ratio.
inline PointSet rescale_extent(const PointSet& ps, double width) {
    PointSet out = ps;
    const double xmin = ps.coords.col(0).minCoeff();
    const double ymin = ps.coords.col(1).minCoeff();
    const double xr = ps.coords.col(0).maxCoeff() - xmin;
    if (!(xr > 0)) throw std::invalid_argument("rescale_extent: zero x extent");
    const double scale = width / xr;
    out.coords.col(0) = (ps.coords.col(0).array() - xmin) * scale;
    out.coords.col(1) = (ps.coords.col(1).array() - ymin) * scale;
    out.grid.reset();
    return out;
}

}  // namespace moranml
