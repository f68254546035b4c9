#include "invargc/analysis.hpp"
#include "invargc/datagen.hpp"
#include "invargc/linear.hpp"
#include "invargc/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace invargc;

namespace {

MultiEnvDataset random_dataset(std::uint64_t seed, Index n, Index d, Index t) {
    RandomStream rng(seed);
    std::vector<Matrix> xs;
    for (Index k = 0; k < n; ++k) {
        Matrix x(d, t);
        for (Index c = 0; c < x.size(); ++c) x(c) = rng.normal();
        xs.push_back(x);
    }
    return MultiEnvDataset(xs);
}

LinearModel random_model(std::uint64_t seed, Index d, Index p, Index n, Index t) {
    RandomStream rng(seed);
    LinearModel m = LinearModel::zeros(d, p, n, t);
    for (Index c = 0; c < m.w0.size(); ++c) m.w0(c) = rng.normal();
    for (auto& w : m.wk)
        for (Index c = 0; c < w.size(); ++c) w(c) = rng.normal();
    for (auto& z : m.z)
        for (Index c = 0; c < z.size(); ++c) z(c) = rng.normal();
    return m;
}

HyperParams params(double lw, double lz, double alpha = 0.5) {
    HyperParams hp;
    hp.lambda_w = lw;
    hp.lambda_z = lz;
    hp.alpha = alpha;
    return hp;
}

}  // namespace

TEST(LinearObjective, ZeroEverythingIsZero) {
    const MultiEnvDataset ds({Matrix::Zero(2, 4), Matrix::Zero(2, 4)});
    EXPECT_EQ(objective(LinearModel::zeros(2, 1, 2, 4), ds, params(1, 1)), 0.0);
}

TEST(LinearObjective, ZeroModelGivesSumOfSquaredTargets) {
    const auto ds = random_dataset(1, 2, 3, 6);
    double want = 0.0;
    for (Index k = 0; k < 2; ++k) want += ds.env(k).rightCols(5).squaredNorm();
    EXPECT_NEAR(objective(LinearModel::zeros(3, 1, 2, 6), ds, params(2, 3)), want, 1e-12);
}

TEST(LinearObjective, TinyInstanceTermByTerm) {
    // d = 1, N = 1, T = 3, one latent: enumerate every term by hand.
    Matrix x(1, 3);
    x << 0.5, -1.0, 2.0;
    const MultiEnvDataset ds({x});
    LinearModel m = LinearModel::zeros(1, 1, 1, 3);
    m.w0 << 0.3, -0.7;
    m.wk[0] << 0.2;
    m.z[0] << 1.5, -0.5;
    const HyperParams hp = params(0.8, 1.3, 0.25);
    double rss_ = 0.0;
    for (int t = 0; t < 2; ++t) {
        const double pred = 0.3 * x(0, t) + (-0.7) * m.z[0](0, t) + 0.2 * x(0, t);
        rss_ += (x(0, t + 1) - pred) * (x(0, t + 1) - pred);
    }
    const double zpen = 1.3 * std::sqrt((1.5 * 1.5 + 0.5 * 0.5) / 2.0);
    const double outer = std::sqrt(0.3 * 0.3 + 0.2 * 0.2) + 0.7;
    const double inner = 0.2;
    const double want = rss_ + zpen + 0.8 * (0.75 * outer + 0.25 * inner);
    EXPECT_NEAR(objective(m, ds, hp), want, 1e-12);
}

TEST(LinearObjective, UnresolvedLambdaRejected) {
    const auto ds = random_dataset(1, 1, 2, 4);
    EXPECT_THROW(objective(LinearModel::zeros(2, 0, 1, 4), ds, HyperParams{}), Error);
}

TEST(LinearGradient, MatchesCentralDifferences) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto ds = random_dataset(s, 2, 3, 7);
        LinearModel m = random_model(100 + s, 3, 2, 2, 7);
        const LinearModel g = smooth_gradient(m, ds);
        auto check = [&](Matrix& param, const Matrix& grad) {
            for (Index c = 0; c < param.size(); ++c) {
                const double keep = param(c);
                param(c) = keep + 1e-6;
                const double up = rss(m, ds);
                param(c) = keep - 1e-6;
                const double down = rss(m, ds);
                param(c) = keep;
                const double fd = (up - down) / 2e-6;
                EXPECT_LE(std::abs(fd - grad(c)), 1e-5 * std::max(1.0, std::abs(fd)));
            }
        };
        check(m.w0, g.w0);
        for (std::size_t k = 0; k < 2; ++k) {
            check(m.wk[k], g.wk[k]);
            check(m.z[k], g.z[k]);
        }
    }
}

TEST(LinearGradient, ZeroResidualGivesZeroGradient) {
    Matrix x(1, 4);
    x << 1.0, 0.5, 0.25, 0.125;
    LinearModel m = LinearModel::zeros(1, 0, 1, 4);
    m.w0 << 0.5;
    const LinearModel g = smooth_gradient(m, MultiEnvDataset({x}));
    EXPECT_NEAR(g.w0.norm() + g.wk[0].norm(), 0.0, 1e-15);
}

TEST(LinearGradient, UnusedLatentHasZeroGradient) {
    const auto ds = random_dataset(2, 2, 3, 8);
    LinearModel m = random_model(3, 3, 2, 2, 8);
    m.w0.col(4).setZero();
    const LinearModel g = smooth_gradient(m, ds);
    for (const auto& z : g.z) {
        EXPECT_EQ(z.row(1).norm(), 0.0);
        EXPECT_GT(z.row(0).norm(), 0.0);
    }
}

TEST(LinearProx, ZeroThresholdsAreIdentity) {
    const LinearModel m = random_model(4, 3, 1, 2, 5);
    const LinearModel out = prox_hierarchical(m, 1.0, params(0.0, 0.0));
    EXPECT_EQ(out.w0, m.w0);
    EXPECT_EQ(out.wk[1], m.wk[1]);
    EXPECT_EQ(out.z[0], m.z[0]);
}

TEST(LinearProx, OuterGroupExample) {
    // Group (3, 4) with outer threshold 2.5 and no inner threshold.
    LinearModel m = LinearModel::zeros(1, 0, 1, 3);
    m.w0 << 3.0;
    m.wk[0] << 4.0;
    HyperParams hp = params(5.0, 0.0, 0.5);
    hp.alpha = 1e-300;  // inner threshold numerically zero
    hp.lambda_w = 2.5;
    const LinearModel out = prox_hierarchical(m, 1.0, hp);
    EXPECT_NEAR(out.w0(0, 0), 1.5, 1e-12);
    EXPECT_NEAR(out.wk[0](0, 0), 2.0, 1e-12);
}

TEST(LinearProx, InnerScalarExamples) {
    LinearModel m = LinearModel::zeros(1, 0, 2, 3);
    m.wk[0] << 2.0;
    m.wk[1] << -0.3;
    HyperParams hp = params(0.5, 0.0, 1.0 - 1e-16);
    const LinearModel out = prox_hierarchical(m, 1.0, hp);
    EXPECT_NEAR(out.wk[0](0, 0), 1.5, 1e-12);
    EXPECT_EQ(out.wk[1](0, 0), 0.0);
}

TEST(LinearProx, LatentThresholdUsesRmsScaling) {
    // lambda_z * sqrt(mean z^2) = (lambda_z / sqrt(n)) * ||z||.
    LinearModel m = LinearModel::zeros(1, 1, 1, 5);
    m.z[0] << 3.0, 0.0, 4.0, 0.0;
    const LinearModel out = prox_hierarchical(m, 1.0, params(0.0, 4.0));
    const double tau = 4.0 / 2.0;
    EXPECT_NEAR(out.z[0](0, 0), 3.0 * (1.0 - tau / 5.0), 1e-12);
    EXPECT_NEAR(out.z[0](0, 2), 4.0 * (1.0 - tau / 5.0), 1e-12);
}

TEST(LinearProx, MatchesBruteForceMinimizer) {
    // One group (w0, w1, w2) minimized over a fine grid refined around the best point.
    RandomStream rng(17);
    for (int inst = 0; inst < 20; ++inst) {
        LinearModel m = LinearModel::zeros(1, 0, 2, 3);
        m.w0(0, 0) = rng.uniform(-3, 3);
        m.wk[0](0, 0) = rng.uniform(-3, 3);
        m.wk[1](0, 0) = rng.uniform(-3, 3);
        const HyperParams hp = params(rng.uniform(0.1, 3.0), 0.0, rng.uniform(0.1, 0.9));
        const LinearModel out = prox_hierarchical(m, 1.0, hp);
        const Vector v(Eigen::Vector3d(m.w0(0, 0), m.wk[0](0, 0), m.wk[1](0, 0)));
        auto f = [&](const Vector& x) {
            return 0.5 * (x - v).squaredNorm() + hp.lambda_w * ((1 - hp.alpha) * x.norm() + hp.alpha * (std::abs(x(1)) + std::abs(x(2))));
        };
        Vector best = Vector::Zero(3);
        double radius = 3.0;
        for (int level = 0; level < 40; ++level) {
            Vector centre = best;
            for (int a = -4; a <= 4; ++a)
                for (int b = -4; b <= 4; ++b)
                    for (int c = -4; c <= 4; ++c) {
                        const Vector x = centre + radius / 4.0 * Vector(Eigen::Vector3d(a, b, c));
                        if (f(x) < f(best)) best = x;
                    }
            radius *= 0.6;
        }
        const Vector got(Eigen::Vector3d(out.w0(0, 0), out.wk[0](0, 0), out.wk[1](0, 0)));
        EXPECT_LE((got - best).cwiseAbs().maxCoeff(), 1e-6) << "instance " << inst;
        EXPECT_LE(f(got), f(best) + 1e-12);
    }
}

TEST(LinearFitTest, TraceIsMonotone) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto ds = random_dataset(s, 2, 3, 30);
        HyperParams hp = params(2.0, 3.0, 0.6);
        hp.max_iters = 300;
        const auto fit = fit_linear(ds, hp, s);
        for (std::size_t t = 1; t < fit.trace.size(); ++t)
            ASSERT_LE(fit.trace[t], fit.trace[t - 1] + 1e-10 * std::max(1.0, std::abs(fit.trace[t - 1]))) << "seed " << s;
    }
}

TEST(LinearFitTest, DeterministicPerSeed) {
    const auto ds = random_dataset(8, 2, 3, 40);
    HyperParams hp = params(1.0, 2.0);
    hp.max_iters = 100;
    const auto a = fit_linear(ds, hp, 5), b = fit_linear(ds, hp, 5);
    EXPECT_EQ(a.trace, b.trace);
    EXPECT_EQ(a.model.z[0], b.model.z[0]);
}

TEST(LinearFitTest, NoSignalShrinksToZero) {
    GenConfig c;
    c.mechanism = Mechanism::Linear;
    c.noise_sd = 1e-6;
    c.n_intervened = 0;
    c.e = 0.0;
    c.p = 0;
    c.T = 200;
    const auto [raw, g] = generate_benchmark(c);
    HyperParams hp;
    hp.n_latents = 0;
    const auto fit = fit_linear(raw, hp, 0);
    EXPECT_LT(edge_scores(fit.model).scores.maxCoeff(), 1e-3);
}

TEST(LinearFitTest, FixedPointAtConvergence) {
    const auto ds = random_dataset(21, 2, 3, 25);
    HyperParams hp = params(3.0, 4.0, 0.6);
    hp.tol = 1e-15;
    hp.max_iters = 20000;
    const auto fit = fit_linear(ds, hp, 1);
    const LinearModel g = smooth_gradient(fit.model, ds);
    LinearModel w = fit.model;
    w.w0 -= fit.step_w * g.w0;
    for (std::size_t k = 0; k < w.wk.size(); ++k) w.wk[k] -= fit.step_w * g.wk[k];
    w = prox_weights(std::move(w), fit.step_w, hp);
    EXPECT_LE((w.w0 - fit.model.w0).cwiseAbs().maxCoeff(), 1e-6);
    for (std::size_t k = 0; k < w.wk.size(); ++k) EXPECT_LE((w.wk[k] - fit.model.wk[k]).cwiseAbs().maxCoeff(), 1e-6);
    std::vector<Matrix> z = fit.model.z;
    for (std::size_t k = 0; k < z.size(); ++k) z[k] -= fit.step_z * g.z[k];
    prox_latents(z, fit.step_z, hp.lambda_z);
    for (std::size_t k = 0; k < z.size(); ++k) EXPECT_LE((z[k] - fit.model.z[k]).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(LinearFitTest, RejectsDegenerateAlpha) {
    const auto ds = random_dataset(1, 1, 2, 5);
    HyperParams hp = params(1, 1, 1.0);
    EXPECT_THROW(fit_linear(ds, hp, 0), ValidationError);
    hp.alpha = 0.0;
    EXPECT_THROW(fit_linear(ds, hp, 0), ValidationError);
}

TEST(LinearFitTest, DefaultsScaleWithLength) {
    const HyperParams hp = resolve_defaults(HyperParams{}, 1001);
    EXPECT_DOUBLE_EQ(hp.lambda_w, kLambdaWPerStep * 1000.0);
    EXPECT_DOUBLE_EQ(hp.lambda_z, kLambdaZPerStep * 1000.0);
    EXPECT_EQ(hp.max_iters, kLinearMaxIters);
}

TEST(LinearFitTest, BenchmarkSeedsRecoverGraph) {
    int exact = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        GenConfig c;
        c.mechanism = Mechanism::Linear;
        c.seed = seed;
        const auto [raw, g] = generate_benchmark(c);
        const auto fit = fit_linear(center_and_rescale(raw), HyperParams{}, seed);
        EXPECT_GE(evaluate_graph(edge_scores(fit.model).scores, g.adjacency).auroc, 0.99) << "seed " << seed;
        if (binarize(edge_scores(fit.model).scores) == g.adjacency) ++exact;
    }
    EXPECT_GE(exact, 4);
}
