#include "invargc/baseline.hpp"
#include "invargc/datagen.hpp"
#include "invargc/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace invargc;

namespace {

MultiEnvDataset var_dataset(std::uint64_t seed, Index n, Index d, Index t) {
    RandomStream rng(seed);
    Matrix a = Matrix::Zero(d, d);
    for (Index i = 0; i < d; ++i) a(i, i) = 0.5;
    if (d > 1) a(1, 0) = 0.4;
    std::vector<Matrix> xs;
    for (Index k = 0; k < n; ++k) {
        Matrix x(d, t);
        for (Index i = 0; i < d; ++i) x(i, 0) = rng.normal();
        for (Index s = 1; s < t; ++s) {
            x.col(s) = a * x.col(s - 1);
            for (Index i = 0; i < d; ++i) x(i, s) += rng.normal();
        }
        xs.push_back(x);
    }
    return MultiEnvDataset(xs);
}

double lasso_objective(const MultiEnvDataset& ds, const Matrix& b, double lambda) {
    double r = 0.0;
    for (Index k = 0; k < ds.n_envs(); ++k) r += (ds.targets(k) - b * ds.inputs(k)).squaredNorm();
    return r + lambda * b.cwiseAbs().sum();
}

}  // namespace

TEST(VarLasso, InfiniteLambdaGivesZero) {
    const auto m = fit_var_lasso(var_dataset(1, 2, 3, 50), std::numeric_limits<double>::infinity());
    EXPECT_EQ(m.coef, Matrix::Zero(3, 3));
}

TEST(VarLasso, LambdaMaxZeroesEverything) {
    const auto ds = var_dataset(2, 2, 3, 60);
    EXPECT_EQ(fit_var_lasso(ds, var_lasso_lambda_max(ds)).coef.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(fit_var_lasso(ds, 0.5 * var_lasso_lambda_max(ds)).coef.cwiseAbs().maxCoeff(), 0.0);
}

TEST(VarLasso, ZeroLambdaScalarIsOls) {
    const auto ds = var_dataset(3, 2, 1, 40);
    double xy = 0.0, xx = 0.0;
    for (Index k = 0; k < 2; ++k) {
        xy += ds.inputs(k).row(0).dot(ds.targets(k).row(0));
        xx += ds.inputs(k).row(0).squaredNorm();
    }
    EXPECT_NEAR(fit_var_lasso(ds, 0.0).coef(0, 0), xy / xx, 1e-9);
}

TEST(VarLasso, OptimalityConditions) {
    // Subgradient check: |2 * x_j^T r| <= lambda at zeros, = lambda * sign at nonzeros.
    const auto ds = var_dataset(4, 3, 4, 80);
    const double lambda = 0.2 * var_lasso_lambda_max(ds);
    const auto m = fit_var_lasso(ds, lambda);
    Matrix corr = Matrix::Zero(4, 4);
    for (Index k = 0; k < 3; ++k) corr += 2.0 * (ds.targets(k) - m.coef * ds.inputs(k)) * ds.inputs(k).transpose();
    for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 4; ++j) {
            if (m.coef(i, j) == 0.0)
                EXPECT_LE(std::abs(corr(i, j)), lambda * (1 + 1e-6) + 1e-6);
            else
                EXPECT_NEAR(corr(i, j), lambda * (m.coef(i, j) > 0 ? 1.0 : -1.0), 1e-4 * lambda);
        }
}

TEST(VarLasso, SweepsDoNotIncreaseObjective) {
    const auto ds = var_dataset(5, 2, 4, 60);
    const auto g = baseline_detail::gram(ds);
    const double lambda = 0.1 * var_lasso_lambda_max(ds);
    for (Index i = 0; i < 4; ++i) {
        RowVector b = RowVector::Zero(4);
        double prev = baseline_detail::target_objective(g, i, b, lambda);
        for (int sweep = 0; sweep < 20; ++sweep) {
            baseline_detail::solve_row(g, i, b, lambda, 1);
            const double cur = baseline_detail::target_objective(g, i, b, lambda);
            EXPECT_LE(cur, prev + 1e-12 * std::max(1.0, std::abs(prev)));
            prev = cur;
        }
    }
    const auto m = fit_var_lasso(ds, lambda);
    EXPECT_NEAR(lasso_objective(ds, m.coef, lambda),
                [&] {
                    double s = 0.0;
                    for (Index i = 0; i < 4; ++i) s += baseline_detail::target_objective(g, i, m.coef.row(i), lambda);
                    return s;
                }(),
                1e-8);
}

TEST(VarLasso, SupportShrinksAlongPath) {
    const auto ds = var_dataset(6, 2, 5, 80);
    const double lmax = var_lasso_lambda_max(ds);
    Index prev = 0;
    for (int s = 0; s < 30; ++s) {
        const double lambda = lmax * std::pow(1e-3, s / 29.0);
        const Index nnz = (fit_var_lasso(ds, lambda).coef.array() != 0.0).count();
        EXPECT_GE(nnz, prev) << "lambda " << lambda;
        prev = nnz;
    }
}

TEST(VarLasso, NegativeLambdaRejected) { EXPECT_THROW(fit_var_lasso(var_dataset(1, 1, 2, 10), -1.0), ValidationError); }

TEST(VarLassoBic, PicksTrueSupportOnEasyProblem) {
    const auto ds = var_dataset(7, 3, 3, 400);
    const auto m = fit_var_lasso_bic(ds);
    Eigen::MatrixXi adj = Eigen::MatrixXi::Zero(3, 3);  // (source, target)
    for (Index i = 0; i < 3; ++i) adj(i, i) = 1;
    adj(0, 1) = 1;
    const auto gm = evaluate_graph(baseline_edge_scores(m).scores, adj);
    EXPECT_DOUBLE_EQ(gm.auroc, 1.0);
    EXPECT_GT(m.lambda, 0.0);
}

TEST(BaselineScores, AbsoluteTransposedCoefficients) {
    BaselineModel m{Matrix::Zero(3, 3), 0.0};
    EXPECT_EQ(baseline_edge_scores(m).scores, Matrix::Zero(3, 3));
    m.coef(2, 0) = -0.4;  // source 0 -> target 2
    const Matrix s = baseline_edge_scores(m).scores;
    EXPECT_DOUBLE_EQ(s(0, 2), 0.4);
    EXPECT_DOUBLE_EQ(s.sum(), 0.4);
    RandomStream rng(1);
    for (Index c = 0; c < 9; ++c) m.coef(c) = rng.normal();
    EXPECT_EQ(baseline_edge_scores(m).scores, m.coef.transpose().cwiseAbs());
}
