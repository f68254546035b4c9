#pragma once

#include "invargc/common.hpp"
#include "invargc/dataset.hpp"
#include "invargc/json_io.hpp"
#include "invargc/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace invargc {

enum class Mechanism { Linear, LeakyRelu };

enum class InterventionKind { ImperfectEdge, PerfectEdge, ImperfectNode, PerfectNode };

inline std::string to_string(Mechanism m) { return m == Mechanism::Linear ? "linear" : "leaky-relu"; }

inline std::string to_string(InterventionKind k) {
    switch (k) {
        case InterventionKind::ImperfectEdge: return "imperfect-edge";
        case InterventionKind::PerfectEdge: return "perfect-edge";
        case InterventionKind::ImperfectNode: return "imperfect-node";
        case InterventionKind::PerfectNode: return "perfect-node";
    }
    return "?";
}

inline Mechanism parse_mechanism(const std::string& s) {
    if (s == "linear") return Mechanism::Linear;
    if (s == "leaky-relu") return Mechanism::LeakyRelu;
    throw ValidationError("field 'mechanism': expected linear or leaky-relu, got '" + s + "'");
}

inline InterventionKind parse_intervention_kind(const std::string& s) {
    if (s == "imperfect-edge") return InterventionKind::ImperfectEdge;
    if (s == "perfect-edge") return InterventionKind::PerfectEdge;
    if (s == "imperfect-node") return InterventionKind::ImperfectNode;
    if (s == "perfect-node") return InterventionKind::PerfectNode;
    throw ValidationError("field 'intervention_kind': unknown value '" + s + "'");
}

/// Generator configuration. Defaults reproduce the five-variable,
/// one-confounder, three-environment protocol with Leaky ReLU dynamics.
struct GenConfig {
    Index d = 5;
    Index p = 1;
    double e = 0.3;
    Index n_envs = 3;
    Index n_intervened = 1;
    Index T = 1000;
    Mechanism mechanism = Mechanism::LeakyRelu;
    double leaky_slope = 0.01;
    InterventionKind intervention_kind = InterventionKind::ImperfectEdge;
    Index n_intervened_edges = 2;
    double coef_low = 0.3;
    double coef_high = 0.9;
    double noise_sd = 1.0;
    Index burn_in = 200;
    std::uint64_t seed = 0;
};

inline constexpr double kSpectralTarget = 0.9;
inline constexpr double kMinInterventionShift = 0.25;
inline constexpr double kLatentDynamicsLow = 0.5;
inline constexpr double kLatentDynamicsHigh = 0.9;

inline void validate(const GenConfig& c) {
    auto field = [](bool ok, const char* name, const std::string& msg) {
        if (!ok) throw ValidationError(std::string("field '") + name + "': " + msg);
    };
    field(c.d >= 1, "d", "must be at least 1");
    field(c.p >= 0, "p", "must be non-negative");
    field(c.e >= 0.0 && c.e <= 1.0, "e", "must lie in [0, 1]");
    field(c.n_envs >= 1, "n_envs", "must be at least 1");
    field(c.n_intervened >= 0 && c.n_intervened <= c.n_envs, "n_intervened", "must lie in [0, n_envs]");
    field(c.T >= 2, "T", "must be at least 2");
    field(std::isfinite(c.leaky_slope), "leaky_slope", "must be finite");
    field(c.n_intervened_edges >= 0, "n_intervened_edges", "must be non-negative");
    field(c.coef_low > 0.0, "coef_low", "must be positive");
    field(c.coef_high >= c.coef_low, "coef_high", "must be >= coef_low");
    field(c.noise_sd > 0.0, "noise_sd", "must be positive");
    field(c.burn_in >= 0, "burn_in", "must be non-negative");
}

inline Json to_json(const GenConfig& c) {
    return Json{{"d", c.d},
                {"p", c.p},
                {"e", c.e},
                {"n_envs", c.n_envs},
                {"n_intervened", c.n_intervened},
                {"T", c.T},
                {"mechanism", to_string(c.mechanism)},
                {"leaky_slope", c.leaky_slope},
                {"intervention_kind", to_string(c.intervention_kind)},
                {"n_intervened_edges", c.n_intervened_edges},
                {"coef_low", c.coef_low},
                {"coef_high", c.coef_high},
                {"noise_sd", c.noise_sd},
                {"burn_in", c.burn_in},
                {"seed", c.seed}};
}

/// Reads a GenConfig; absent fields keep their defaults, unknown fields are
/// rejected. Throws ValidationError naming the offending field.
inline GenConfig gen_config_from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("generator config must be a JSON object");
    GenConfig c;
    static const std::vector<std::string> known = {"d", "p", "e", "n_envs", "n_intervened", "T", "mechanism", "leaky_slope",
                                                   "intervention_kind", "n_intervened_edges", "coef_low", "coef_high",
                                                   "noise_sd", "burn_in", "seed"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ValidationError("field '" + key + "': unknown config field");

    auto get_int = [&](const char* name, Index& out) {
        if (!j.contains(name)) return;
        const Json& v = j.at(name);
        if (!v.is_number_integer()) throw ValidationError(std::string("field '") + name + "': expected an integer");
        out = v.get<Index>();
    };
    auto get_real = [&](const char* name, double& out) {
        if (!j.contains(name)) return;
        const Json& v = j.at(name);
        if (!v.is_number()) throw ValidationError(std::string("field '") + name + "': expected a number");
        out = v.get<double>();
    };
    get_int("d", c.d);
    get_int("p", c.p);
    get_real("e", c.e);
    get_int("n_envs", c.n_envs);
    get_int("n_intervened", c.n_intervened);
    get_int("T", c.T);
    get_real("leaky_slope", c.leaky_slope);
    get_int("n_intervened_edges", c.n_intervened_edges);
    get_real("coef_low", c.coef_low);
    get_real("coef_high", c.coef_high);
    get_real("noise_sd", c.noise_sd);
    get_int("burn_in", c.burn_in);
    if (j.contains("mechanism")) {
        if (!j["mechanism"].is_string()) throw ValidationError("field 'mechanism': expected a string");
        c.mechanism = parse_mechanism(j["mechanism"].get<std::string>());
    }
    if (j.contains("intervention_kind")) {
        if (!j["intervention_kind"].is_string()) throw ValidationError("field 'intervention_kind': expected a string");
        c.intervention_kind = parse_intervention_kind(j["intervention_kind"].get<std::string>());
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
            throw ValidationError("field 'seed': expected an unsigned integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    validate(c);
    return c;
}

/// Full (d+p) x (d+p) transition matrix of the joint state (X_t, Z_t) acting on
/// column vectors: [X_{t+1}; Z_{t+1}] = M [X_t; Z_t].
inline Matrix transition_matrix(const Matrix& obs_weights, const Matrix& latent_to_obs, const Vector& latent_dynamics) {
    const Index d = obs_weights.rows();
    const Index p = latent_dynamics.size();
    Matrix m = Matrix::Zero(d + p, d + p);
    m.topLeftCorner(d, d) = obs_weights.transpose();
    if (p > 0) {
        m.topRightCorner(d, p) = latent_to_obs.transpose();
        m.bottomRightCorner(p, p) = latent_dynamics.asDiagonal();
    }
    return m;
}

inline double spectral_radius(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

namespace detail {

inline double draw_coefficient(RandomStream& rng, const GenConfig& c) { return rng.sign() * rng.uniform(c.coef_low, c.coef_high); }

inline double draw_shifted(RandomStream& rng, const GenConfig& c, double old_value) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        const double v = draw_coefficient(rng, c);
        if (std::abs(v - old_value) >= kMinInterventionShift) return v;
    }
    // Flipping the sign of a magnitude in [coef_low, coef_high] always clears the
    // minimum shift when coef_low >= 0.125; reaching here means the range is too narrow.
    throw ValidationError("field 'coef_low': coefficient range too narrow for the minimum intervention shift");
}

template <class T>
std::vector<T> sample_without_replacement(RandomStream& rng, std::vector<T> pool, std::size_t count) {
    std::shuffle(pool.begin(), pool.end(), rng.engine());
    pool.resize(count);
    return pool;
}

}  // namespace detail

/// Draws the invariant graph, its weights and the latent wiring. The result
/// has base_weights set but no per-environment data yet.
inline GroundTruth sample_graph(const GenConfig& cfg, RandomStream& rng) {
    validate(cfg);
    if (cfg.p >= 1 && cfg.d < 2) throw ValidationError("field 'd': need at least 2 observed variables to attach a latent");
    const Index d = cfg.d, p = cfg.p;
    GroundTruth g;
    g.adjacency = Eigen::MatrixXi::Zero(d, d);
    g.base_weights = Matrix::Zero(d, d);
    for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < d; ++i)
            if (rng.bernoulli(cfg.e)) {
                g.adjacency(j, i) = 1;
                g.base_weights(j, i) = detail::draw_coefficient(rng, cfg);
            }

    g.latent_dynamics = Vector::Zero(p);
    g.latent_to_obs = Matrix::Zero(p, d);
    std::vector<int> all(static_cast<std::size_t>(d));
    std::iota(all.begin(), all.end(), 0);
    for (Index l = 0; l < p; ++l) {
        g.latent_dynamics(l) = rng.uniform(kLatentDynamicsLow, kLatentDynamicsHigh);
        auto children = detail::sample_without_replacement(rng, all, 2);
        std::sort(children.begin(), children.end());
        for (int c : children) g.latent_to_obs(l, c) = detail::draw_coefficient(rng, cfg);
        g.latent_children.push_back(children);
    }

    const double rho = spectral_radius(transition_matrix(g.base_weights, g.latent_to_obs, g.latent_dynamics));
    if (rho > kSpectralTarget) {
        const double s = kSpectralTarget / rho;
        g.base_weights *= s;
        g.latent_to_obs *= s;
        g.latent_dynamics *= s;
    }
    return g;
}

/// Fills obs_weights and intervention_mask. A randomly chosen subset of
/// n_intervened environments is perturbed; the rest copy base_weights.
/// Perturbations that would push an environment's spectral radius above the
/// stationarity target are redrawn.
inline GroundTruth apply_interventions(GroundTruth g, const GenConfig& cfg, RandomStream& rng) {
    validate(cfg);
    const Index d = g.n_vars();
    const Index n = cfg.n_envs;

    std::vector<std::pair<int, int>> edges;
    for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < d; ++i)
            if (g.adjacency(j, i)) edges.emplace_back(static_cast<int>(j), static_cast<int>(i));
    std::vector<int> targets_with_parents;
    for (Index i = 0; i < d; ++i)
        if (g.adjacency.col(i).any()) targets_with_parents.push_back(static_cast<int>(i));

    const bool node_level =
        cfg.intervention_kind == InterventionKind::ImperfectNode || cfg.intervention_kind == InterventionKind::PerfectNode;
    const bool perfect =
        cfg.intervention_kind == InterventionKind::PerfectEdge || cfg.intervention_kind == InterventionKind::PerfectNode;
    if (cfg.n_intervened > 0) {
        if (node_level && targets_with_parents.empty())
            throw ValidationError("field 'intervention_kind': node-level intervention needs a node with parents");
        if (!node_level && static_cast<std::size_t>(cfg.n_intervened_edges) > edges.size())
            throw ValidationError("field 'n_intervened_edges': " + std::to_string(cfg.n_intervened_edges) +
                                  " exceeds the " + std::to_string(edges.size()) + " available edges");
    }

    std::vector<int> env_ids(static_cast<std::size_t>(n));
    std::iota(env_ids.begin(), env_ids.end(), 0);
    auto chosen_envs = detail::sample_without_replacement(rng, env_ids, static_cast<std::size_t>(cfg.n_intervened));

    g.obs_weights.assign(static_cast<std::size_t>(n), g.base_weights);
    g.intervention_mask.assign(static_cast<std::size_t>(n), Eigen::MatrixXi::Zero(d, d));

    constexpr int kMaxSelections = 200;
    constexpr int kMaxRedraws = 50;
    for (int k : chosen_envs) {
        bool done = false;
        for (int sel = 0; sel < kMaxSelections && !done; ++sel) {
            std::vector<std::pair<int, int>> picked;
            if (node_level) {
                const int target = targets_with_parents[rng.index(targets_with_parents.size())];
                for (const auto& e : edges)
                    if (e.second == target) picked.push_back(e);
            } else {
                picked = detail::sample_without_replacement(rng, edges, static_cast<std::size_t>(cfg.n_intervened_edges));
            }
            for (int redraw = 0; redraw < (perfect ? 1 : kMaxRedraws) && !done; ++redraw) {
                Matrix w = g.base_weights;
                for (const auto& [j, i] : picked) w(j, i) = perfect ? 0.0 : detail::draw_shifted(rng, cfg, w(j, i));
                if (spectral_radius(transition_matrix(w, g.latent_to_obs, g.latent_dynamics)) <= kSpectralTarget + 1e-12) {
                    auto& mask = g.intervention_mask[static_cast<std::size_t>(k)];
                    for (const auto& [j, i] : picked) mask(j, i) = w(j, i) != g.base_weights(j, i) ? 1 : 0;
                    g.obs_weights[static_cast<std::size_t>(k)] = std::move(w);
                    done = true;
                }
            }
        }
        if (!done) throw ValidationError("could not find a stationary intervention for environment " + std::to_string(k));
    }
    return g;
}

/// Pre-drawn innovations for one environment: (d + p) x steps, rows ordered
/// as observed variables then latents. Column 0 seeds the initial state.
inline Matrix draw_noise(RandomStream& rng, Index dim, Index steps, double sd) {
    Matrix e(dim, steps);
    for (Index t = 0; t < steps; ++t)
        for (Index r = 0; r < dim; ++r) e(r, t) = rng.normal(0.0, sd);
    return e;
}

/// Iterates the structural recursion for one environment from explicit
/// innovations. Returns the full (d + p) x steps state trajectory.
inline Matrix simulate_with_noise(const Matrix& obs_weights, const Matrix& latent_to_obs, const Vector& latent_dynamics,
                                  Mechanism mech, double slope, const Matrix& noise) {
    const Index d = obs_weights.rows();
    const Index p = latent_dynamics.size();
    const Index steps = noise.cols();
    require_shape(noise.rows() == d + p, "noise rows must equal d + p");
    auto f = [&](double v) { return mech == Mechanism::Linear ? v : leaky_relu(v, slope); };

    Matrix s(d + p, steps);
    s.col(0) = noise.col(0);
    const Matrix wxx_t = obs_weights.transpose();
    const Matrix wxz_t = p > 0 ? Matrix(latent_to_obs.transpose()) : Matrix::Zero(d, 0);
    for (Index t = 0; t + 1 < steps; ++t) {
        Vector pre_x = wxx_t * s.col(t).head(d);
        if (p > 0) pre_x += wxz_t * s.col(t).tail(p);
        for (Index i = 0; i < d; ++i) s(i, t + 1) = f(pre_x(i)) + noise(i, t + 1);
        for (Index l = 0; l < p; ++l) s(d + l, t + 1) = f(latent_dynamics(l) * s(d + l, t)) + noise(d + l, t + 1);
        if (!s.col(t + 1).allFinite()) throw DivergenceError("non-finite state during simulation", static_cast<std::size_t>(t + 1));
    }
    return s;
}

/// Simulates every environment with its own child stream, discards burn-in
/// and returns the dataset with the completed ground truth.
inline std::pair<MultiEnvDataset, GroundTruth> simulate(GroundTruth g, const GenConfig& cfg, const RandomStream& rng) {
    validate(cfg);
    const Index d = g.n_vars(), p = g.n_latents();
    require_shape(g.n_envs() == cfg.n_envs, "ground truth has a different number of environments than the config");
    std::vector<Matrix> series;
    g.latent_series.clear();
    const Index steps = cfg.burn_in + cfg.T;
    for (Index k = 0; k < cfg.n_envs; ++k) {
        RandomStream env_rng = rng.split(static_cast<std::uint64_t>(k));
        const Matrix noise = draw_noise(env_rng, d + p, steps, cfg.noise_sd);
        const Matrix s = simulate_with_noise(g.obs_weights[static_cast<std::size_t>(k)], g.latent_to_obs, g.latent_dynamics,
                                             cfg.mechanism, cfg.leaky_slope, noise);
        series.push_back(s.topRightCorner(d, cfg.T));
        g.latent_series.push_back(s.bottomRightCorner(p, cfg.T));
    }
    return {MultiEnvDataset(std::move(series)), std::move(g)};
}

/// sample_graph -> apply_interventions -> simulate under streams derived from
/// cfg.seed. Equal configs give bit-identical output.
inline std::pair<MultiEnvDataset, GroundTruth> generate_benchmark(const GenConfig& cfg) {
    validate(cfg);
    const RandomStream root(cfg.seed);
    RandomStream graph_rng = root.split(1);
    RandomStream iv_rng = root.split(2);
    const RandomStream sim_rng = root.split(3);
    GroundTruth g = sample_graph(cfg, graph_rng);
    g = apply_interventions(std::move(g), cfg, iv_rng);
    return simulate(std::move(g), cfg, sim_rng);
}

}  // namespace invargc
