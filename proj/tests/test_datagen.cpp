#include "invargc/datagen.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace invargc;

namespace {

GroundTruth skeleton(const GenConfig& cfg) {
    RandomStream rng(cfg.seed);
    RandomStream g_rng = rng.split(1);
    return sample_graph(cfg, g_rng);
}

GroundTruth intervened(const GenConfig& cfg) {
    RandomStream rng(cfg.seed);
    RandomStream g_rng = rng.split(1), i_rng = rng.split(2);
    return apply_interventions(sample_graph(cfg, g_rng), cfg, i_rng);
}

}  // namespace

TEST(GenConfigTest, ValidationNamesField) {
    GenConfig c;
    c.e = 1.5;
    try {
        validate(c);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("'e'"), std::string::npos) << e.what();
    }
    c = GenConfig{};
    c.n_intervened = 4;
    EXPECT_THROW(validate(c), ValidationError);
    c = GenConfig{};
    c.noise_sd = 0.0;
    EXPECT_THROW(validate(c), ValidationError);
    c = GenConfig{};
    c.coef_high = 0.1;
    EXPECT_THROW(validate(c), ValidationError);
}

TEST(GenConfigTest, JsonRoundTripAndUnknownField) {
    GenConfig c;
    c.d = 4;
    c.mechanism = Mechanism::Linear;
    c.intervention_kind = InterventionKind::PerfectNode;
    c.seed = 99;
    const GenConfig back = gen_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    Json j = to_json(c);
    j["bogus"] = 1;
    EXPECT_THROW(gen_config_from_json(j), ValidationError);
    j = to_json(c);
    j["mechanism"] = "cubic";
    EXPECT_THROW(gen_config_from_json(j), ValidationError);
}

TEST(SampleGraph, ZeroProbabilityGivesOnlyLatentEdges) {
    GenConfig c;
    c.e = 0.0;
    const auto g = skeleton(c);
    EXPECT_EQ(g.adjacency.sum(), 0);
    EXPECT_EQ(g.latent_children.size(), 1u);
    EXPECT_EQ((g.latent_to_obs.array() != 0.0).count(), 2);
}

TEST(SampleGraph, UnitProbabilityFillsAdjacency) {
    GenConfig c;
    c.e = 1.0;
    EXPECT_EQ(skeleton(c).adjacency.sum(), 25);
}

TEST(SampleGraph, EdgeFrequencyMatchesProbability) {
    GenConfig c;
    std::int64_t edges = 0;
    const int draws = 10000;
    for (int s = 0; s < draws; ++s) {
        RandomStream rng(static_cast<std::uint64_t>(s));
        edges += sample_graph(c, rng).adjacency.sum();
    }
    const double n = 25.0 * draws;
    const double freq = static_cast<double>(edges) / n;
    EXPECT_NEAR(freq, 0.3, 3.0 * std::sqrt(0.3 * 0.7 / n));
}

TEST(SampleGraph, CoefficientsAndStationarity) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        GenConfig c;
        c.seed = s;
        c.e = 0.6;
        const auto g = skeleton(c);
        const double rho = spectral_radius(transition_matrix(g.base_weights, g.latent_to_obs, g.latent_dynamics));
        EXPECT_LE(rho, kSpectralTarget + 1e-9);
        ASSERT_EQ(g.latent_children[0].size(), 2u);
        EXPECT_NE(g.latent_children[0][0], g.latent_children[0][1]);
        for (Index i = 0; i < g.base_weights.size(); ++i) {
            if (g.adjacency(i)) {
                EXPECT_LE(std::abs(g.base_weights(i)), c.coef_high);
            }
        }
    }
}

TEST(SampleGraph, NeedsTwoObservedForLatent) {
    GenConfig c;
    c.d = 1;
    c.n_intervened = 0;
    RandomStream rng(1);
    EXPECT_THROW(sample_graph(c, rng), ValidationError);
}

TEST(ApplyInterventions, NoneMeansIdenticalEnvironments) {
    GenConfig c;
    c.n_intervened = 0;
    const auto g = intervened(c);
    for (const auto& w : g.obs_weights) EXPECT_EQ(w, g.base_weights);
    for (const auto& m : g.intervention_mask) EXPECT_EQ(m.sum(), 0);
}

TEST(ApplyInterventions, DefaultHitsExactlyOneEnvironment) {
    for (std::uint64_t s = 0; s < 30; ++s) {
        GenConfig c;
        c.seed = s;
        const auto g = intervened(c);
        EXPECT_EQ(g.n_intervened_envs(), 1);
        EXPECT_EQ(check_truth(g), "");
        for (std::size_t k = 0; k < g.obs_weights.size(); ++k) {
            const auto& m = g.intervention_mask[k];
            for (Index e = 0; e < m.size(); ++e) {
                if (m(e)) {
                    EXPECT_EQ(g.adjacency(e), 1);
                    EXPECT_GE(std::abs(g.obs_weights[k](e) - g.base_weights(e)), kMinInterventionShift - 1e-12);
                }
            }
            EXPECT_LE(spectral_radius(transition_matrix(g.obs_weights[k], g.latent_to_obs, g.latent_dynamics)),
                      kSpectralTarget + 1e-9);
        }
    }
}

TEST(ApplyInterventions, PerfectNodeZeroesWholeColumn) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        GenConfig c;
        c.seed = s;
        c.e = 0.5;
        c.intervention_kind = InterventionKind::PerfectNode;
        const auto g = intervened(c);
        for (std::size_t k = 0; k < g.intervention_mask.size(); ++k) {
            const auto& m = g.intervention_mask[k];
            if (!m.any()) continue;
            Index target = -1;
            for (Index i = 0; i < m.cols(); ++i)
                if (m.col(i).any()) target = i;
            EXPECT_EQ(m.col(target), g.adjacency.col(target));
            EXPECT_EQ(g.obs_weights[k].col(target).cwiseAbs().sum(), 0.0);
        }
    }
}

TEST(ApplyInterventions, TooManyEdgesRequested) {
    GenConfig c;
    c.e = 0.0;
    EXPECT_THROW(intervened(c), ValidationError);
}

TEST(Simulate, ScalarRecurrenceMatchesOracle) {
    Matrix w(1, 1);
    w << 0.5;
    RandomStream rng(3);
    const Matrix noise = draw_noise(rng, 1, 20, 1.0);
    const Matrix s = simulate_with_noise(w, Matrix::Zero(0, 1), Vector::Zero(0), Mechanism::Linear, 0.01, noise);
    double x = noise(0, 0);
    EXPECT_EQ(s(0, 0), x);
    for (Index t = 1; t < 20; ++t) {
        x = 0.5 * x + noise(0, t);
        EXPECT_NEAR(s(0, t), x, 1e-15);
    }
}

TEST(Simulate, LeakyNegativeBranch) {
    Matrix w(2, 2);
    w << -0.5, 0, 0, -0.5;
    Matrix noise = Matrix::Zero(2, 3);
    noise.col(0) << 2.0, 4.0;
    const Matrix s = simulate_with_noise(w, Matrix::Zero(0, 2), Vector::Zero(0), Mechanism::LeakyRelu, 0.01, noise);
    EXPECT_NEAR(s(0, 1), 0.01 * -1.0, 1e-15);
    EXPECT_NEAR(s(1, 1), 0.01 * -2.0, 1e-15);
}

TEST(Simulate, ZeroWeightsTinyNoiseStayNearZero) {
    GenConfig c;
    c.noise_sd = 1e-12;
    c.n_intervened = 0;
    GroundTruth g = intervened(c);
    for (auto& w : g.obs_weights) w.setZero();
    g.base_weights.setZero();
    g.latent_to_obs.setZero();
    g.latent_dynamics.setZero();
    const auto [ds, truth] = simulate(g, c, RandomStream(5));
    for (const auto& x : ds.series()) EXPECT_LE(x.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(GenerateBenchmark, PaperDefaultShape) {
    GenConfig c;
    const auto [ds, g] = generate_benchmark(c);
    EXPECT_EQ(ds.n_envs(), 3);
    EXPECT_EQ(ds.n_vars(), 5);
    EXPECT_EQ(ds.n_steps(), 1000);
    EXPECT_EQ(g.n_latents(), 1);
    EXPECT_EQ(g.latent_children[0].size(), 2u);
    ASSERT_EQ(g.latent_series.size(), 3u);
    EXPECT_EQ(g.latent_series[0].cols(), 1000);
}

TEST(GenerateBenchmark, Deterministic) {
    GenConfig c;
    c.T = 100;
    c.seed = 42;
    const auto a = generate_benchmark(c);
    const auto b = generate_benchmark(c);
    for (Index k = 0; k < 3; ++k) EXPECT_EQ(a.first.env(k), b.first.env(k));
    EXPECT_EQ(a.second.adjacency, b.second.adjacency);
    c.seed = 43;
    EXPECT_NE(generate_benchmark(c).first.env(0), a.first.env(0));
}

TEST(GenerateBenchmark, NoLatents) {
    GenConfig c;
    c.p = 0;
    c.T = 50;
    const auto [ds, g] = generate_benchmark(c);
    EXPECT_EQ(g.n_latents(), 0);
    ASSERT_EQ(g.latent_series.size(), 3u);
    EXPECT_EQ(g.latent_series[0].rows(), 0);
    EXPECT_EQ(g.latent_series[0].cols(), 50);
}

TEST(GenerateBenchmark, LatentIsExogenous) {
    // Regress Z_{t+1} on (X_t, Z_t): the X coefficients should be zero within noise.
    GenConfig c;
    c.mechanism = Mechanism::Linear;
    c.T = 4000;
    const auto [ds, g] = generate_benchmark(c);
    for (Index k = 0; k < 3; ++k) {
        const Matrix& x = ds.env(k);
        const Matrix& z = g.latent_series[static_cast<std::size_t>(k)];
        const Index n = x.cols() - 1;
        Matrix a(n, 6);
        a.leftCols(5) = x.leftCols(n).transpose();
        a.col(5) = z.leftCols(n).transpose();
        const Vector y = z.rightCols(n).transpose();
        const Vector beta = a.colPivHouseholderQr().solve(y);
        const Vector resid = y - a * beta;
        const double sigma2 = resid.squaredNorm() / static_cast<double>(n - 6);
        const Matrix cov = sigma2 * (a.transpose() * a).inverse();
        for (Index j = 0; j < 5; ++j) EXPECT_LE(std::abs(beta(j)), 3.0 * std::sqrt(cov(j, j)) + 1e-12) << "env " << k << " var " << j;
    }
}
