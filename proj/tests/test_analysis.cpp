#include "invargc/analysis.hpp"
#include "invargc/linear.hpp"
#include "invargc/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace invargc;

TEST(EdgeScoresTest, ZeroModelScoresZero) {
    EXPECT_EQ(edge_scores(LinearModel::zeros(3, 1, 2, 5)).scores, Matrix::Zero(3, 3));
}

TEST(EdgeScoresTest, PythagoreanGroupNorm) {
    LinearModel m = LinearModel::zeros(2, 0, 1, 3);
    m.w0(1, 0) = 3.0;    // source 0 -> target 1
    m.wk[0](1, 0) = 4.0;
    const Matrix s = edge_scores(m).scores;
    EXPECT_DOUBLE_EQ(s(0, 1), 5.0);
    EXPECT_DOUBLE_EQ(s(1, 0), 0.0);
}

TEST(EdgeScoresTest, LatentColumnsExcluded) {
    LinearModel m = LinearModel::zeros(2, 1, 1, 3);
    m.w0(0, 2) = 9.0;
    EXPECT_EQ(edge_scores(m).scores.rows(), 2);
    EXPECT_EQ(edge_scores(m).scores.maxCoeff(), 0.0);
}

TEST(InterventionScoresTest, SingleEntry) {
    LinearModel m = LinearModel::zeros(3, 0, 2, 3);
    m.wk[1](2, 0) = -0.7;  // source 0 -> target 2 in env 1
    const auto iv = intervention_scores(m);
    ASSERT_EQ(iv.scores.size(), 2u);
    EXPECT_EQ(iv.scores[0].maxCoeff(), 0.0);
    EXPECT_DOUBLE_EQ(iv.scores[1](0, 2), 0.7);
    EXPECT_DOUBLE_EQ(iv.scores[1].sum(), 0.7);
    EXPECT_DOUBLE_EQ(iv.env_total(1), 0.7);
}

TEST(InterventionScoresTest, AllZeroFlagsNothing) {
    const auto iv = intervention_scores(LinearModel::zeros(3, 0, 2, 3));
    for (const auto& b : binarize(iv.scores)) EXPECT_EQ(b.sum(), 0);
    for (const auto& b : binarize(iv.scores, ThresholdRule::absolute(0.0))) EXPECT_EQ(b.sum(), 0);
}

TEST(Binarize, RelativeRuleExample) {
    Matrix s(1, 3);
    s << 0.9, 0.05, 0.5;
    Eigen::MatrixXi want(1, 3);
    want << 1, 0, 1;
    EXPECT_EQ(binarize(s), want);
}

TEST(Binarize, AbsoluteRule) {
    Matrix s(1, 3);
    s << 0.9, 0.05, 0.5;
    Eigen::MatrixXi want(1, 3);
    want << 1, 0, 0;
    EXPECT_EQ(binarize(s, ThresholdRule::absolute(0.5)), want);
}

TEST(Binarize, AllZeroScores) {
    EXPECT_EQ(binarize(Matrix::Zero(3, 3)).sum(), 0);
}

TEST(Binarize, ScaleEquivariance) {
    RandomStream rng(3);
    LinearModel m = LinearModel::zeros(4, 0, 2, 3);
    for (Index c = 0; c < m.w0.size(); ++c) m.w0(c) = rng.normal();
    for (auto& w : m.wk)
        for (Index c = 0; c < w.size(); ++c) w(c) = rng.normal();
    LinearModel scaled = m;
    scaled.w0 *= 3.5;
    for (auto& w : scaled.wk) w *= 3.5;
    EXPECT_LE((edge_scores(scaled).scores - 3.5 * edge_scores(m).scores).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(binarize(edge_scores(scaled).scores), binarize(edge_scores(m).scores));
    const auto a = intervention_scores(m), b = intervention_scores(scaled);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_LE((b.scores[k] - 3.5 * a.scores[k]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(binarize(a.scores), binarize(b.scores));
}

TEST(NodeLevelCalls, Rules) {
    Eigen::MatrixXi graph = Eigen::MatrixXi::Zero(3, 3);
    graph(0, 2) = 1;
    graph(1, 2) = 1;
    std::vector<Eigen::MatrixXi> flagged(2, Eigen::MatrixXi::Zero(3, 3));
    flagged[1](0, 2) = 1;
    flagged[1](1, 2) = 1;
    auto calls = node_level_calls(flagged, graph);
    EXPECT_EQ(calls(1, 2), 1);
    EXPECT_EQ(calls.row(0).sum(), 0);
    EXPECT_EQ(calls.sum(), 1);

    flagged[1](1, 2) = 0;  // only one of two parents flagged
    calls = node_level_calls(flagged, graph);
    EXPECT_EQ(calls.sum(), 0);
}

TEST(NodeLevelCalls, CallImpliesAllIncomingFlagged) {
    RandomStream rng(8);
    for (int inst = 0; inst < 200; ++inst) {
        Eigen::MatrixXi graph(4, 4);
        std::vector<Eigen::MatrixXi> flagged(3, Eigen::MatrixXi(4, 4));
        for (Index c = 0; c < 16; ++c) {
            graph(c) = rng.bernoulli(0.4);
            for (auto& f : flagged) f(c) = rng.bernoulli(0.5);
        }
        const auto calls = node_level_calls(flagged, graph);
        for (Index k = 0; k < 3; ++k)
            for (Index i = 0; i < 4; ++i)
                if (calls(k, i)) {
                    for (Index j = 0; j < 4; ++j)
                        if (graph(j, i)) {
                            EXPECT_EQ(flagged[static_cast<std::size_t>(k)](j, i), 1);
                        }
                }
    }
}

namespace {

Matrix trajectory(std::uint64_t seed, Index rows, Index n) {
    RandomStream rng(seed);
    Matrix z(rows, n);
    for (Index c = 0; c < z.size(); ++c) z(c) = rng.normal();
    return z;
}

}  // namespace

TEST(LatentAlignment, IdenticalSpans) {
    const Matrix z = trajectory(1, 1, 50);
    const auto rep = latent_alignment({z}, {z});
    ASSERT_TRUE(rep.envs[0].principal_angles);
    EXPECT_NEAR(rep.envs[0].principal_angles->front(), 0.0, 1e-6);
    EXPECT_NEAR(*rep.envs[0].best_abs_correlation, 1.0, 1e-12);
}

TEST(LatentAlignment, NegativeRescalingKeepsSpan) {
    const Matrix z = trajectory(2, 1, 50);
    const auto rep = latent_alignment({Matrix(-2.0 * z)}, {z});
    EXPECT_NEAR(rep.envs[0].principal_angles->front(), 0.0, 1e-6);
    EXPECT_NEAR(*rep.envs[0].best_abs_correlation, 1.0, 1e-12);
}

TEST(LatentAlignment, OrthogonalTrajectories) {
    Matrix z = trajectory(3, 1, 60);
    Matrix w = trajectory(4, 1, 60);
    z.array() -= z.mean();
    w.array() -= w.mean();
    w -= (w.row(0).dot(z.row(0)) / z.squaredNorm()) * z;
    const auto rep = latent_alignment({w}, {z});
    EXPECT_NEAR(rep.envs[0].principal_angles->front(), std::numbers::pi / 2.0, 1e-6);
    EXPECT_NEAR(*rep.envs[0].best_abs_correlation, 0.0, 1e-10);
}

TEST(LatentAlignment, ConstantTrajectoryIsUndefined) {
    const Matrix z = trajectory(5, 1, 30);
    const auto rep = latent_alignment({z}, {Matrix::Constant(1, 30, 2.0)});
    EXPECT_FALSE(rep.envs[0].principal_angles);
    EXPECT_FALSE(rep.envs[0].best_abs_correlation);
}

TEST(LatentAlignment, InvariantUnderMixing) {
    const Matrix truth = trajectory(6, 1, 80);
    Matrix learned(2, 80);
    learned.row(0) = 0.5 * truth + 0.3 * trajectory(7, 1, 80);
    learned.row(1) = trajectory(8, 1, 80);
    Matrix mix(2, 2);
    mix << 2.0, -1.0, 0.5, 3.0;
    const auto a = latent_alignment({learned}, {truth});
    const auto b = latent_alignment({Matrix(mix * learned)}, {truth});
    EXPECT_NEAR(*a.envs[0].best_abs_correlation, *b.envs[0].best_abs_correlation, 1e-10);
    EXPECT_NEAR(a.envs[0].principal_angles->front(), b.envs[0].principal_angles->front(), 1e-8);
}

TEST(LatentAlignment, LengthMismatchThrows) {
    EXPECT_THROW(latent_alignment({trajectory(1, 1, 10)}, {trajectory(1, 1, 11)}), ShapeError);
}
