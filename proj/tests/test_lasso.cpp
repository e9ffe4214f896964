#include "moranml/eigenmoran.hpp"
#include "moranml/lasso.hpp"
#include "moranml/synthgen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace {

using namespace moranml;

Eigen::MatrixXd random_matrix(std::ptrdiff_t n, std::ptrdiff_t p, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd x(n, p);
    for (std::ptrdiff_t j = 0; j < p; ++j)
        for (std::ptrdiff_t i = 0; i < n; ++i) x(i, j) = rng.normal();
    return x;
}

// Centered columns with X'X / n = I, so standardization is the identity.
Eigen::MatrixXd orthonormal_design(std::ptrdiff_t n, std::ptrdiff_t p, std::uint64_t seed) {
    Eigen::MatrixXd a(n, p + 1);
    a.col(0).setOnes();
    a.rightCols(p) = random_matrix(n, p, seed);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, p + 1);
    return q.rightCols(p) * std::sqrt(static_cast<double>(n));
}

double soft(double b, double g) { return b > g ? b - g : (b < -g ? b + g : 0.0); }

TEST(LassoPath, OrthonormalDesignMatchesSoftThreshold) {
    const std::ptrdiff_t n = 120, p = 6;
    const auto x = orthonormal_design(n, p, 3);
    Rng rng(4);
    Eigen::VectorXd y = 2.5 + 1.7 * x.col(2).array();
    for (std::ptrdiff_t i = 0; i < n; ++i) y[i] += 0.3 * rng.normal();
    const Eigen::VectorXd ols = x.transpose() * (y.array() - y.mean()).matrix() / static_cast<double>(n);

    const auto path = lasso_path(x, y);
    ASSERT_EQ(path.size(), 100u);
    for (std::size_t k = 0; k < path.size(); ++k) {
        for (std::ptrdiff_t j = 0; j < p; ++j) {
            EXPECT_NEAR(path.coefs[k][j], soft(ols[j], path.lambdas[k]), 1e-6) << "k=" << k << " j=" << j;
        }
    }
}

TEST(LassoPath, LambdaMaxGivesAllZero) {
    const auto x = random_matrix(80, 7, 5);
    const Eigen::VectorXd y = x * Eigen::VectorXd::LinSpaced(7, -1, 1) + random_matrix(80, 1, 6).col(0);
    const auto path = lasso_path(x, y);
    EXPECT_TRUE((path.coefs.front().array() == 0.0).all());
    EXPECT_DOUBLE_EQ(path.intercepts.front(), y.mean());
    // just below lambda_max something enters
    EXPECT_GT((path.coefs[1].array() != 0.0).count(), 0);
}

TEST(LassoPath, GridIsGeometricAndDescending) {
    const auto x = random_matrix(60, 4, 7);
    const Eigen::VectorXd y = x.col(0) + random_matrix(60, 1, 8).col(0);
    const auto path = lasso_path(x, y);
    for (std::size_t k = 1; k < path.size(); ++k) {
        EXPECT_LT(path.lambdas[k], path.lambdas[k - 1]);
        EXPECT_NEAR(path.lambdas[k] / path.lambdas[k - 1], path.lambdas[1] / path.lambdas[0], 1e-12);
    }
    EXPECT_NEAR(path.lambdas.back() / path.lambdas.front(), 1e-4, 1e-12);
    for (const auto& c : path.coefs) EXPECT_EQ(c.size(), 4);
}

TEST(LassoPath, SmallLambdaLimitIsOls) {
    const std::ptrdiff_t n = 200, p = 10;
    Eigen::MatrixXd x = random_matrix(n, p, 9);
    x.col(3) = 4.0 * x.col(3).array() + 7.0;  // scale and offset exercise standardization
    Eigen::VectorXd y = 1.5 + (x * Eigen::VectorXd::LinSpaced(p, -2, 2)).array();
    y += random_matrix(n, 1, 10).col(0);

    Eigen::MatrixXd xi(n, p + 1);
    xi.col(0).setOnes();
    xi.rightCols(p) = x;
    const Eigen::VectorXd ols = xi.colPivHouseholderQr().solve(y);

    const auto sp = detail::standardize(x, y);
    const double hi = detail::lambda_max(sp);
    LassoOptions opt;
    opt.tolerance = 1e-10;
    const auto path = lasso_path(x, y, detail::geometric_grid(hi, 60, 1e-9), opt);
    EXPECT_NEAR(path.intercepts.back(), ols[0], 1e-4);
    for (std::ptrdiff_t j = 0; j < p; ++j) EXPECT_NEAR(path.coefs.back()[j], ols[j + 1], 1e-4);
}

TEST(LassoPath, ObjectiveNonIncreasingAcrossSweeps) {
    const std::ptrdiff_t n = 150, p = 30;
    Eigen::MatrixXd x = random_matrix(n, p, 11);
    x.col(1) += 0.9 * x.col(0);  // correlated columns force several sweeps
    x.col(2) += 0.9 * x.col(1);
    const Eigen::VectorXd y = x.leftCols(5).rowwise().sum() + random_matrix(n, 1, 12).col(0);
    const auto sp = detail::standardize(x, y);
    const double hi = detail::lambda_max(sp);
    for (double frac : {0.5, 0.1, 0.01, 0.001}) {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
        std::vector<double> trace;
        const int sweeps = detail::coordinate_descent(sp, frac * hi, b, LassoOptions{}, &trace);
        ASSERT_EQ(trace.size(), static_cast<std::size_t>(sweeps) + 1);
        ASSERT_GT(sweeps, 2);
        for (std::size_t s = 1; s < trace.size(); ++s) {
            EXPECT_LE(trace[s], trace[s - 1] + 1e-14 * std::abs(trace[s - 1])) << "frac=" << frac << " sweep " << s;
        }
    }
}

TEST(LassoPath, WarmStartMatchesColdStart) {
    // eigenvector design as used for selection
    const auto grid = make_grid(12, 12, 1.0);
    const auto basis = moran_eigen_full(queen_weights(grid), 40);
    const auto ds = generate_dataset(grid, 21);
    const auto sp = detail::standardize(basis.vectors, ds.y);
    const auto lambdas = detail::geometric_grid(detail::lambda_max(sp), 100, 1e-4);
    const auto warm = detail::run_path(sp, lambdas, LassoOptions{}, true);
    const auto cold = detail::run_path(sp, lambdas, LassoOptions{}, false);
    double worst = 0;
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        worst = std::max(worst, (warm.coefs[k] - cold.coefs[k]).cwiseAbs().maxCoeff());
        worst = std::max(worst, std::abs(warm.intercepts[k] - cold.intercepts[k]));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(LassoPath, NonConvergenceNamesLambda) {
    Eigen::MatrixXd x = random_matrix(100, 20, 13);
    x.col(1) = x.col(0) + 1e-3 * x.col(1);
    const Eigen::VectorXd y = x.col(0) + x.col(1);
    LassoOptions opt;
    opt.max_sweeps = 1;
    try {
        (void)lasso_path(x, y, opt);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_GT(e.lambda(), 0.0);
        EXPECT_NE(std::string(e.what()).find("lambda"), std::string::npos);
    }
}

TEST(LassoPath, RejectsMismatchedShapes) {
    EXPECT_THROW(lasso_path(Eigen::MatrixXd::Ones(10, 2), Eigen::VectorXd::Ones(9)), std::invalid_argument);
}

TEST(FoldAssignment, BalancedAndDeterministic) {
    const auto a = fold_assignment(103, 5, 77);
    const auto b = fold_assignment(103, 5, 77);
    EXPECT_EQ(a, b);
    std::vector<int> count(5, 0);
    for (int f : a) ++count[f];
    for (int c : count) {
        EXPECT_GE(c, 20);
        EXPECT_LE(c, 21);
    }
    EXPECT_NE(a, fold_assignment(103, 5, 78));
    EXPECT_THROW(fold_assignment(3, 5, 1), std::invalid_argument);
}

TEST(SelectMseCv, RecoversExactLinearCombination) {
    const auto x = random_matrix(200, 40, 15);
    const std::vector<int> truth = {2, 9, 17, 23, 38};
    Eigen::VectorXd y = Eigen::VectorXd::Constant(200, 4.0);
    for (std::size_t k = 0; k < truth.size(); ++k) y += (1.0 + 0.5 * k) * x.col(truth[k]);
    const auto s = select_mse_cv(x, y, 5, 1);
    for (int j : truth) EXPECT_TRUE(std::binary_search(s.indices.begin(), s.indices.end(), j)) << j;
    EXPECT_EQ(s.criterion, SelectionCriterion::mse_cv);
    EXPECT_TRUE(std::is_sorted(s.indices.begin(), s.indices.end()));
}

TEST(SelectMseCv, ThreadCountDoesNotChangeResult) {
    const auto x = random_matrix(150, 25, 16);
    const Eigen::VectorXd y = x.leftCols(3).rowwise().sum() + 2.0 * random_matrix(150, 1, 17).col(0);
    std::vector<double> c1, c4;
    const auto a = select_mse_cv(x, y, 5, 9, {}, 1, &c1);
    const auto b = select_mse_cv(x, y, 5, 9, {}, 4, &c4);
    EXPECT_EQ(a.indices, b.indices);
    EXPECT_EQ(a.chosen_lambda, b.chosen_lambda);
    EXPECT_EQ(c1, c4);
}

TEST(SelectMseCv, PureNoiseSelectsFew) {
    const std::ptrdiff_t n = 300, p = 60;
    const auto x = random_matrix(n, p, 18);
    std::vector<std::size_t> counts;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed, "noise");
        Eigen::VectorXd y(n);
        for (auto& v : y) v = rng.normal();
        counts.push_back(select_mse_cv(x, y, 5, seed).indices.size());
    }
    std::string report;
    for (auto c : counts) report += std::to_string(c) + " ";
    RecordProperty("pure_noise_selected_counts", report);
    std::cout << "pure-noise selected counts (p=" << p << "): " << report << '\n';
    std::sort(counts.begin(), counts.end());
    EXPECT_LT(counts[counts.size() / 2], static_cast<std::size_t>(p));
}

TEST(SelectBic, InterceptOnlySignalSelectsNothing) {
    const auto x = random_matrix(100, 15, 19);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(100, 3.0);
    EXPECT_TRUE(select_bic(x, y).indices.empty());
    // also with independent noise the penalty keeps everything out
    Rng rng(20);
    Eigen::VectorXd noisy(100);
    for (auto& v : noisy) v = 3.0 + 1e-3 * rng.normal();
    EXPECT_LE(select_bic(x, noisy).indices.size(), 1u);
}

TEST(SelectBic, ScoreMatchesIndependentEvaluation) {
    const std::ptrdiff_t n = 180, p = 25;
    const auto x = random_matrix(n, p, 21);
    const Eigen::VectorXd y = 1.0 + (x.leftCols(6).rowwise().sum()).array() + 1.5 * random_matrix(n, 1, 22).col(0).array();
    const auto path = lasso_path(x, y);
    double best = std::numeric_limits<double>::infinity();
    double best_lambda = 0;
    std::size_t best_nnz = 0;
    for (std::size_t k = 0; k < path.size(); ++k) {
        double rss = 0;
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            double pred = path.intercepts[k];
            for (std::ptrdiff_t j = 0; j < p; ++j) pred += x(i, j) * path.coefs[k][j];
            rss += (y[i] - pred) * (y[i] - pred);
        }
        std::size_t nnz = 0;
        for (std::ptrdiff_t j = 0; j < p; ++j) nnz += path.coefs[k][j] != 0.0;
        const double bic = n * std::log(rss / n) + (nnz + 1.0) * std::log(static_cast<double>(n));
        EXPECT_NEAR(bic_scores(path, x, y)[k], bic, 1e-9);
        if (bic < best) {
            best = bic;
            best_lambda = path.lambdas[k];
            best_nnz = nnz;
        }
    }
    const auto s = select_bic(x, y);
    EXPECT_NEAR(s.score, best, 1e-9);
    EXPECT_EQ(s.chosen_lambda, best_lambda);
    EXPECT_EQ(s.indices.size(), best_nnz);
}

TEST(Selection, BicIsSparserThanCvOnGridScenarios) {
    const auto grid = make_grid(30, 30, 1.0);
    const auto basis = moran_eigen_full(queen_weights(grid), 100);
    const auto factors = dgp_factors(grid);
    int sparser = 0;
    std::string report;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto ds = generate_dataset(grid, seed, factors);
        Eigen::MatrixXd x(ds.size(), 2);
        x << ds.x1, ds.x2;
        const auto bic = select_eigenvectors(basis.vectors, x, ds.y, SelectionCriterion::bic,
                                             SelectionDesign::svc_interaction, seed);
        const auto cv = select_eigenvectors(basis.vectors, x, ds.y, SelectionCriterion::mse_cv,
                                            SelectionDesign::svc_interaction, seed);
        sparser += bic.shared.indices.size() < cv.shared.indices.size();
        report += std::to_string(bic.shared.indices.size()) + "/" + std::to_string(cv.shared.indices.size()) + " ";
    }
    std::cout << "bic/cv counts: " << report << '\n';
    EXPECT_GT(sparser, 5);
}

TEST(Selection, EigenOnlyDesignSeesNoSpatialMean) {
    // covariates have mean zero, so y on E alone carries no spatial signal
    const auto grid = make_grid(30, 30, 1.0);
    const auto basis = moran_eigen_full(queen_weights(grid), 100);
    const auto ds = generate_dataset(grid, 3);
    Eigen::MatrixXd x(ds.size(), 2);
    x << ds.x1, ds.x2;
    const auto s = select_eigenvectors(basis.vectors, x, ds.y, SelectionCriterion::bic, SelectionDesign::eigen_only, 3);
    EXPECT_LT(s.shared.indices.size(), 10u);
    for (const auto& pk : s.per_k) EXPECT_EQ(pk.indices, s.shared.indices);
}

TEST(Selection, SvcDesignBlocksMapToCoefficients) {
    const std::ptrdiff_t n = 400;
    const auto e = orthonormal_design(n, 6, 30) / std::sqrt(static_cast<double>(n));
    const auto x = random_matrix(n, 2, 31);
    // intercept varies along e1, x1 coefficient along e4, x2 coefficient along e2
    Eigen::VectorXd y = 1.0 + 10 * e.col(1).array() + x.col(0).cwiseProduct(8 * e.col(4)).array() +
                        x.col(1).cwiseProduct(9 * e.col(2)).array();
    const auto s = select_eigenvectors(e, x, y, SelectionCriterion::bic, SelectionDesign::svc_interaction, 1);
    ASSERT_EQ(s.per_k.size(), 3u);
    EXPECT_TRUE(std::binary_search(s.per_k[0].indices.begin(), s.per_k[0].indices.end(), 1));
    EXPECT_TRUE(std::binary_search(s.per_k[1].indices.begin(), s.per_k[1].indices.end(), 4));
    EXPECT_TRUE(std::binary_search(s.per_k[2].indices.begin(), s.per_k[2].indices.end(), 2));
    for (int l : {1, 2, 4}) EXPECT_TRUE(std::binary_search(s.shared.indices.begin(), s.shared.indices.end(), l));
    const auto none = select_eigenvectors(e, x, y, SelectionCriterion::none, SelectionDesign::svc_interaction, 1);
    EXPECT_EQ(none.shared.indices.size(), 6u);
}

TEST(SelectNone, KeepsAllCandidates) {
    const auto s = select_none(7);
    EXPECT_EQ(s.indices, (std::vector<int>{0, 1, 2, 3, 4, 5, 6}));
    EXPECT_EQ(s.criterion, SelectionCriterion::none);
}

TEST(SaveSelection, WritesAuditCsv) {
    SelectedSubset s;
    s.criterion = SelectionCriterion::bic;
    s.chosen_lambda = 0.125;
    s.indices = {0, 4, 9};
    const auto path = (std::filesystem::temp_directory_path() / "moranml_sel.csv").string();
    save_selection(s, path);
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(header, "criterion,lambda,index_list");
    EXPECT_EQ(row, "bic,0.125,0 4 9");
}

}  // namespace
