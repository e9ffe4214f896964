#pragma once

// Moran eigenvectors: eigenpairs of the doubly centered weights matrix
// M C M with M = I - 11'/n, computed exactly or through a Nystrom
// extension from a knot subsample, plus the Moran's I statistic.

#include "moranml/geometry.hpp"
#include "moranml/rng.hpp"
#include "moranml/symeig.hpp"
#include "moranml/weights.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace moranml {

enum class EigenSource { full, nystrom };
enum class CandidateRule { top_positive, include_negative };

struct EigenBasis {
    Eigen::MatrixXd vectors;  // n x L
    Eigen::VectorXd values;   // L, non-increasing
    EigenSource source = EigenSource::full;
    CandidateRule rule = CandidateRule::top_positive;
    int dropped_columns = 0;  // Nystrom columns lost to rank deficiency

    std::ptrdiff_t size() const { return vectors.cols(); }
    std::ptrdiff_t points() const { return vectors.rows(); }

    /// Sub-basis restricted to the given column indices.
    EigenBasis subset(const std::vector<int>& columns) const {
        EigenBasis out;
        out.source = source;
        out.rule = rule;
        out.vectors.resize(vectors.rows(), static_cast<std::ptrdiff_t>(columns.size()));
        out.values.resize(static_cast<std::ptrdiff_t>(columns.size()));
        for (std::size_t k = 0; k < columns.size(); ++k) {
            out.vectors.col(k) = vectors.col(columns[k]);
            out.values[k] = values[columns[k]];
        }
        return out;
    }
};

/// M C M without forming M.
inline Eigen::MatrixXd double_center(const Eigen::MatrixXd& c) {
    const Eigen::VectorXd row_mean = c.rowwise().mean();
    const Eigen::RowVectorXd col_mean = c.colwise().mean();
    const double grand = row_mean.mean();
    Eigen::MatrixXd a = c;
    a.colwise() -= row_mean;
    a.rowwise() -= col_mean;
    a.array() += grand;
    return 0.5 * (a + a.transpose());
}

namespace detail {

/// Flip columns so the first entry with |x| > 1e-12 is positive.
inline void pin_signs(Eigen::MatrixXd& v) {
    for (std::ptrdiff_t k = 0; k < v.cols(); ++k) {
        for (std::ptrdiff_t i = 0; i < v.rows(); ++i) {
            if (std::abs(v(i, k)) > 1e-12) {
                if (v(i, k) < 0) v.col(k) = -v.col(k);
                break;
            }
        }
    }
}

/// Indices (into descending `values`) kept under `rule`, at most L of them.
inline std::vector<std::ptrdiff_t> candidate_indices(const Eigen::VectorXd& values, std::ptrdiff_t L,
                                                     CandidateRule rule) {
    const std::ptrdiff_t n = values.size();
    const double scale = std::max(values.cwiseAbs().maxCoeff(), 1e-300);
    const double zero_tol = 1e-10 * scale;
    std::vector<std::ptrdiff_t> keep;
    if (rule == CandidateRule::top_positive) {
        for (std::ptrdiff_t i = 0; i < n && static_cast<std::ptrdiff_t>(keep.size()) < L; ++i) {
            if (values[i] > zero_tol) keep.push_back(i);
        }
        return keep;
    }
    // Largest |lambda| first, excluding the null space, then re-sorted by value.
    std::vector<std::ptrdiff_t> order;
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        if (std::abs(values[i]) > zero_tol) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return std::abs(values[a]) > std::abs(values[b]); });
    if (static_cast<std::ptrdiff_t>(order.size()) > L) order.resize(L);
    std::sort(order.begin(), order.end());
    return order;
}

}  // namespace detail

inline EigenBasis moran_eigen_full(const SpatialWeights& w, std::ptrdiff_t L,
                                   CandidateRule rule = CandidateRule::top_positive) {
    const auto n = w.size();
    if (L <= 0 || L > n) throw std::invalid_argument("moran_eigen_full: need 0 < L <= n");
    if (!w.c.isApprox(w.c.transpose(), 0.0)) {
        const double asym = (w.c - w.c.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-10) throw std::invalid_argument("moran_eigen_full: weights matrix is not symmetric");
    }
    const Eigen::MatrixXd a = double_center(w.c);

    // Only the ends of the spectrum are needed; back-transform just those.
    SymmetricEigenResult all;
    if (rule == CandidateRule::top_positive) {
        all = symmetric_eigen(a, std::min<std::ptrdiff_t>(n, L + 1));
    } else {
        all = symmetric_eigen(a);
    }
    // For top_positive the zero eigenvalue of the constant vector can only
    // appear at the tail, so L + 1 leading pairs always suffice.
    auto keep = detail::candidate_indices(all.values, L, rule);
    EigenBasis b;
    b.source = EigenSource::full;
    b.rule = rule;

    // include_negative may also need null-space directions orthogonal to 1;
    // they are rebuilt from the null eigenvectors with 1 projected out.
    Eigen::MatrixXd null_extra;
    if (rule == CandidateRule::include_negative && static_cast<std::ptrdiff_t>(keep.size()) < L) {
        const double tol = 1e-10 * std::max(all.values.cwiseAbs().maxCoeff(), 1e-300);
        std::vector<std::ptrdiff_t> null_idx;
        for (std::ptrdiff_t i = 0; i < all.values.size(); ++i) {
            if (std::abs(all.values[i]) <= tol) null_idx.push_back(i);
        }
        Eigen::MatrixXd ns(n, static_cast<std::ptrdiff_t>(null_idx.size()));
        for (std::size_t k = 0; k < null_idx.size(); ++k) ns.col(k) = all.vectors.col(null_idx[k]);
        ns.rowwise() -= ns.colwise().mean();
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ns);
        qr.setThreshold(1e-8);
        const auto rank = std::min<std::ptrdiff_t>(qr.rank(), L - static_cast<std::ptrdiff_t>(keep.size()));
        null_extra = (qr.householderQ() * Eigen::MatrixXd::Identity(n, rank));
    }

    const auto nkeep = static_cast<std::ptrdiff_t>(keep.size());
    const auto nnull = null_extra.cols();
    b.vectors.resize(n, nkeep + nnull);
    b.values.resize(nkeep + nnull);
    // Ordering by value: positives, then the null block, then negatives.
    std::ptrdiff_t col = 0;
    std::ptrdiff_t k = 0;
    for (; k < nkeep && all.values[keep[k]] > 0; ++k, ++col) {
        b.vectors.col(col) = all.vectors.col(keep[k]).normalized();
        b.values[col] = all.values[keep[k]];
    }
    for (std::ptrdiff_t z = 0; z < nnull; ++z, ++col) {
        b.vectors.col(col) = null_extra.col(z);
        b.values[col] = 0.0;
    }
    for (; k < nkeep; ++k, ++col) {
        b.vectors.col(col) = all.vectors.col(keep[k]).normalized();
        b.values[col] = all.values[keep[k]];
    }
    detail::pin_signs(b.vectors);
    return b;
}

/// Knots and cross-kernel block for a Nystrom run over an exponential kernel.
struct NystromInputs {
    std::vector<std::ptrdiff_t> knots;  // indices into the full point set, ascending
    SpatialWeights knot_weights;        // m x m exponential weights (zero diagonal)
    Eigen::MatrixXd cross;              // n x m, C[i, knot_j] (zero where i == knot_j)
};

inline NystromInputs nystrom_inputs(const PointSet& ps, double r, std::ptrdiff_t m, std::uint64_t seed) {
    const auto n = ps.size();
    if (m <= 0 || m > n) throw std::invalid_argument("nystrom_inputs: need 0 < m <= n");
    if (!(r > 0)) throw std::invalid_argument("nystrom_inputs: range must be positive");
    NystromInputs in;
    Rng rng(seed, "nystrom_knots");
    in.knots = rng.sample_without_replacement(n, m);
    std::sort(in.knots.begin(), in.knots.end());
    in.cross.resize(n, m);
    for (std::ptrdiff_t j = 0; j < m; ++j) {
        const auto kj = in.knots[j];
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            if (i == kj) {
                in.cross(i, j) = 0.0;
                continue;
            }
            const double d = std::hypot(ps.coords(i, 0) - ps.coords(kj, 0), ps.coords(i, 1) - ps.coords(kj, 1));
            in.cross(i, j) = std::exp(-d / r);
        }
    }
    in.knot_weights.kind = WeightsKind::exponential;
    in.knot_weights.c.resize(m, m);
    for (std::ptrdiff_t j = 0; j < m; ++j) {
        for (std::ptrdiff_t i = 0; i < m; ++i) in.knot_weights.c(i, j) = in.cross(in.knots[i], j);
    }
    in.knot_weights.total_weight = in.knot_weights.c.sum();
    return in;
}

/// Nystrom approximation of the top-L Moran eigenpairs of an exponential
/// kernel matrix. The kernel K = C + I is decomposed on the knots, its
/// eigenvectors are extended to every point through the cross block,
/// re-centred and orthonormalised by modified Gram-Schmidt, and finally
/// rotated by the eigenvectors of the projected Nystrom matrix R diag(mu) R'.
/// Eigenvalues of MCM follow as lambda(MKM) - 1. With all points as knots
/// the result is exact.
inline EigenBasis moran_eigen_nystrom(const SpatialWeights& w_knots, const Eigen::MatrixXd& cross,
                                      const std::vector<std::ptrdiff_t>& knots, std::ptrdiff_t L) {
    const auto m = w_knots.size();
    const auto n = cross.rows();
    if (w_knots.kind != WeightsKind::exponential) {
        throw std::invalid_argument("moran_eigen_nystrom: requires exponential kernel weights");
    }
    if (cross.cols() != m || static_cast<std::ptrdiff_t>(knots.size()) != m) {
        throw std::invalid_argument("moran_eigen_nystrom: cross block / knot list shape mismatch");
    }
    if (m < L) throw std::invalid_argument("moran_eigen_nystrom: fewer knots than requested eigenvectors");
    if (L <= 0) throw std::invalid_argument("moran_eigen_nystrom: L must be positive");

    Eigen::MatrixXd kmm = w_knots.c;
    kmm.diagonal().array() += 1.0;
    Eigen::MatrixXd knm = cross;
    for (std::ptrdiff_t j = 0; j < m; ++j) knm(knots[j], j) += 1.0;

    const SymmetricEigenResult ke = symmetric_eigen(kmm);
    const double tol = 1e-10 * std::max(ke.values[0], 1e-300);
    std::ptrdiff_t r = 0;
    while (r < m && ke.values[r] > tol) ++r;
    if (r == 0) throw std::runtime_error("moran_eigen_nystrom: knot kernel matrix has no positive eigenvalues");

    // Extension and re-centring.
    Eigen::MatrixXd ext = knm * ke.vectors.leftCols(r);
    for (std::ptrdiff_t k = 0; k < r; ++k) ext.col(k) /= ke.values[k];
    ext.rowwise() -= ext.colwise().mean();

    // Modified Gram-Schmidt, two passes; R tracks ext = Q R.
    Eigen::MatrixXd q = ext;
    Eigen::MatrixXd rmat = Eigen::MatrixXd::Zero(r, r);
    std::vector<std::ptrdiff_t> kept;
    for (std::ptrdiff_t k = 0; k < r; ++k) {
        Eigen::VectorXd v = ext.col(k);
        const double before = v.norm();
        for (int pass = 0; pass < 2; ++pass) {
            for (auto j : kept) {
                const double proj = q.col(j).dot(v);
                rmat(j, k) += proj;
                v -= proj * q.col(j);
            }
        }
        const double after = v.norm();
        if (before == 0.0 || after <= 1e-8 * before) continue;
        q.col(k) = v / after;
        rmat(k, k) = after;
        kept.push_back(k);
    }
    const auto rank = static_cast<std::ptrdiff_t>(kept.size());
    Eigen::MatrixXd qk(n, rank), rk(rank, r);
    for (std::ptrdiff_t a = 0; a < rank; ++a) {
        qk.col(a) = q.col(kept[a]);
        rk.row(a) = rmat.row(kept[a]);
    }
    const Eigen::MatrixXd small = rk * ke.values.head(r).asDiagonal() * rk.transpose();
    const SymmetricEigenResult se = symmetric_eigen(0.5 * (small + small.transpose()));

    Eigen::VectorXd lam = se.values.array() - 1.0;
    const auto keep = detail::candidate_indices(lam, L, CandidateRule::top_positive);

    EigenBasis b;
    b.source = EigenSource::nystrom;
    b.rule = CandidateRule::top_positive;
    b.dropped_columns = static_cast<int>(r - rank);
    b.vectors.resize(n, static_cast<std::ptrdiff_t>(keep.size()));
    b.values.resize(static_cast<std::ptrdiff_t>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        Eigen::VectorXd v = qk * se.vectors.col(keep[k]);
        v.array() -= v.mean();
        b.vectors.col(k) = v.normalized();
        b.values[k] = lam[keep[k]];
    }
    detail::pin_signs(b.vectors);
    return b;
}

/// Moran's I = (n / 1'C1) * (z~' C z~) / (z~' z~), z~ = z - mean(z).
inline double morans_i(const Eigen::VectorXd& z, const SpatialWeights& w) {
    const auto n = z.size();
    if (n != w.size()) throw std::invalid_argument("morans_i: length mismatch");
    const Eigen::VectorXd zc = z.array() - z.mean();
    const double ss = zc.squaredNorm();
    if (!(ss > 1e-300)) throw std::invalid_argument("morans_i: z has zero variance");
    const double cross = zc.dot(w.c * zc);
    return (static_cast<double>(n) / w.total_weight) * cross / ss;
}

/// CSV: header `id,<lambda_1>,...,<lambda_L>` (eigenvalues at 17 significant
/// digits) followed by one row of eigenvector entries per point.
inline void save_eigen_basis(const EigenBasis& b, const std::vector<std::string>& ids, const std::string& path) {
    if (static_cast<std::ptrdiff_t>(ids.size()) != b.points()) throw std::invalid_argument("save_eigen_basis: id count");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write eigen basis: " + path);
    out << "id";
    for (std::ptrdiff_t k = 0; k < b.size(); ++k) out << ',' << detail::format_double(b.values[k]);
    out << '\n';
    for (std::ptrdiff_t i = 0; i < b.points(); ++i) {
        out << ids[i];
        for (std::ptrdiff_t k = 0; k < b.size(); ++k) out << ',' << detail::format_double(b.vectors(i, k));
        out << '\n';
    }
}

inline EigenBasis load_eigen_basis(const std::string& path, std::vector<std::string>* ids = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open eigen basis: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path, 1, "empty file");
    auto head = detail::split_csv_line(line);
    if (head.empty() || detail::trim(head[0]) != "id") throw ParseError(path, 1, "expected header starting with 'id'");
    const auto L = static_cast<std::ptrdiff_t>(head.size()) - 1;
    EigenBasis b;
    b.values.resize(L);
    for (std::ptrdiff_t k = 0; k < L; ++k) {
        if (!detail::parse_double(head[k + 1], b.values[k])) throw ParseError(path, 1, "malformed eigenvalue");
    }
    std::vector<std::vector<double>> rows;
    std::vector<std::string> names;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        auto cols = detail::split_csv_line(line);
        if (static_cast<std::ptrdiff_t>(cols.size()) != L + 1) throw ParseError(path, lineno, "wrong field count");
        names.push_back(detail::trim(cols[0]));
        std::vector<double> r(L);
        for (std::ptrdiff_t k = 0; k < L; ++k) {
            if (!detail::parse_double(cols[k + 1], r[k])) throw ParseError(path, lineno, "malformed value");
        }
        rows.push_back(std::move(r));
    }
    b.vectors.resize(static_cast<std::ptrdiff_t>(rows.size()), L);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::ptrdiff_t k = 0; k < L; ++k) b.vectors(i, k) = rows[i][k];
    }
    if (ids) *ids = std::move(names);
    return b;
}

}  // namespace moranml
