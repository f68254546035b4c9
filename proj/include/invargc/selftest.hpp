#pragma once

#include "invargc/datagen.hpp"
#include "invargc/linear.hpp"
#include "invargc/metrics.hpp"
#include "invargc/nonlinear.hpp"
#include "invargc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace invargc::selftest {

struct SuiteResult {
    std::string name;
    bool passed = true;
    std::string summary;  // one line, deterministic
    std::string failure;  // inputs of the first failing case, if any
};

/// Deliberate corruption for negative controls; each flag breaks one suite.
struct Faults {
    bool prox = false;
    bool gradient = false;
    bool metrics = false;
    bool descent = false;
    bool datagen = false;
};

namespace oracle {

/// argmin_x 1/2 ||x - v||^2 + outer ||x|| + inner ||x_S||_1, where S masks the
/// coordinates carrying the l1 term. Solved through the dual: x = v - u - w
/// with (u, w) the projection of v onto {||u|| <= outer} + {|w_s| <= inner on S,
/// 0 off S}, computed by alternating exact block projections.
inline Vector nested_group_prox(const Vector& v, double outer, double inner, const std::vector<bool>& in_s) {
    const Index n = v.size();
    Vector u = Vector::Zero(n), w = Vector::Zero(n);
    for (int it = 0; it < 200000; ++it) {
        const Vector ru = v - w;
        const double nr = ru.norm();
        const Vector u_next = nr <= outer ? ru : Vector(ru * (outer / nr));
        Vector w_next = Vector::Zero(n);
        for (Index c = 0; c < n; ++c)
            if (in_s[static_cast<std::size_t>(c)]) w_next(c) = std::clamp(v(c) - u_next(c), -inner, inner);
        const double change = (u_next - u).cwiseAbs().maxCoeff() + (w_next - w).cwiseAbs().maxCoeff();
        u = u_next;
        w = w_next;
        if (change < 1e-15) break;
    }
    return v - u - w;
}

inline double auroc_pairs(const std::vector<double>& s, const std::vector<int>& l) {
    double num = 0.0, den = 0.0;
    for (std::size_t a = 0; a < s.size(); ++a)
        for (std::size_t b = 0; b < s.size(); ++b)
            if (l[a] == 1 && l[b] == 0) {
                den += 1.0;
                num += s[a] > s[b] ? 1.0 : (s[a] == s[b] ? 0.5 : 0.0);
            }
    return num / den;
}

inline double auprc_thresholds(const std::vector<double>& s, const std::vector<int>& l) {
    std::vector<double> cuts = s;
    std::sort(cuts.begin(), cuts.end(), std::greater<>());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    double n_pos = 0.0;
    for (int v : l) n_pos += v;
    double ap = 0.0, prev_recall = 0.0;
    for (double c : cuts) {
        double tp = 0.0, called = 0.0;
        for (std::size_t a = 0; a < s.size(); ++a)
            if (s[a] >= c) {
                called += 1.0;
                tp += l[a];
            }
        const double recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / called);
        prev_recall = recall;
    }
    return ap;
}

}  // namespace oracle

namespace detail {

inline MultiEnvDataset random_dataset(RandomStream& rng, Index n_envs, Index d, Index steps) {
    std::vector<Matrix> xs;
    for (Index k = 0; k < n_envs; ++k) {
        Matrix x(d, steps);
        for (Index t = 0; t < steps; ++t)
            for (Index i = 0; i < d; ++i) x(i, t) = rng.normal(0.0, 1.0);
        xs.push_back(std::move(x));
    }
    return MultiEnvDataset(std::move(xs));
}

inline void fill_normal(Matrix& m, RandomStream& rng, double sd) {
    for (Index c = 0; c < m.cols(); ++c)
        for (Index r = 0; r < m.rows(); ++r) m(r, c) = rng.normal(0.0, sd);
}

inline LinearModel random_linear_model(RandomStream& rng, Index d, Index p, Index n_envs, Index steps) {
    LinearModel m = LinearModel::zeros(d, p, n_envs, steps);
    fill_normal(m.w0, rng, 1.0);
    for (auto& w : m.wk) fill_normal(w, rng, 1.0);
    for (auto& z : m.z) fill_normal(z, rng, 1.0);
    return m;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

// Relative error between two gradient vectors, scaled by the larger magnitude.
inline double rel_error(const Vector& a, const Vector& b) {
    const double scale = std::max({1e-8, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace detail

/// prox_hierarchical against the dual-projection oracle on 100 random
/// instances, coordinate by coordinate.
inline SuiteResult prox_suite(const Faults& faults = {}) {
    SuiteResult r{"prox", true, "", ""};
    RandomStream rng(20240101);
    double worst = 0.0;
    int failures = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const Index d = 1 + rng.index(3), p = rng.index(2), n_envs = 1 + rng.index(3), steps = 3 + rng.index(5);
        LinearModel m = detail::random_linear_model(rng, d, p, n_envs, steps);
        HyperParams hp;
        hp.alpha = rng.uniform(0.05, 0.95);
        hp.lambda_w = rng.uniform(0.0, 3.0);
        hp.lambda_z = rng.uniform(0.0, 3.0);
        const double step = rng.uniform(0.1, 1.5);
        LinearModel got = prox_hierarchical(m, step, hp);
        if (faults.prox) {
            // The z threshold misread as step * lambda_z * sqrt(T - 1).
            got.z = m.z;
            for (auto& zk : got.z)
                for (Index l = 0; l < zk.rows(); ++l)
                    prox::block_soft_threshold(zk.row(l), step * hp.lambda_z * std::sqrt(static_cast<double>(zk.cols())));
        }
        double err = 0.0;
        const double outer = step * hp.lambda_w * (1.0 - hp.alpha), inner = step * hp.lambda_w * hp.alpha;
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < d + p; ++j) {
                const bool observed = j < d;
                const Index len = observed ? n_envs + 1 : 1;
                Vector v(len), have(len);
                std::vector<bool> in_s(static_cast<std::size_t>(len), false);
                v(0) = m.w0(i, j);
                have(0) = got.w0(i, j);
                if (observed)
                    for (Index k = 0; k < n_envs; ++k) {
                        v(k + 1) = m.wk[static_cast<std::size_t>(k)](i, j);
                        have(k + 1) = got.wk[static_cast<std::size_t>(k)](i, j);
                        in_s[static_cast<std::size_t>(k + 1)] = true;
                    }
                err = std::max(err, (oracle::nested_group_prox(v, outer, inner, in_s) - have).cwiseAbs().maxCoeff());
            }
        for (Index k = 0; k < n_envs; ++k)
            for (Index l = 0; l < p; ++l) {
                const Vector v = m.z[static_cast<std::size_t>(k)].row(l).transpose();
                const Vector have = got.z[static_cast<std::size_t>(k)].row(l).transpose();
                const double tau = step * hp.lambda_z / std::sqrt(static_cast<double>(steps - 1));
                const Vector want = oracle::nested_group_prox(v, tau, 0.0, std::vector<bool>(static_cast<std::size_t>(v.size()), false));
                err = std::max(err, (want - have).cwiseAbs().maxCoeff());
            }
        worst = std::max(worst, err);
        if (err > 1e-6) {
            if (failures++ == 0)
                r.failure = "instance " + std::to_string(inst) + ": d=" + std::to_string(d) + " p=" + std::to_string(p) +
                            " N=" + std::to_string(n_envs) + " T=" + std::to_string(steps) + " alpha=" + detail::fmt(hp.alpha) +
                            " lambda_w=" + detail::fmt(hp.lambda_w) + " lambda_z=" + detail::fmt(hp.lambda_z) +
                            " step=" + detail::fmt(step) + " max error " + detail::fmt(err);
        }
    }
    r.passed = failures == 0;
    r.summary = std::to_string(100 - failures) + "/100 instances within 1e-6, max error " + detail::fmt(worst);
    return r;
}

namespace detail {

template <class Value>
Vector numeric_gradient(const std::vector<double*>& coords, Value value, double h) {
    Vector g(static_cast<Index>(coords.size()));
    for (std::size_t c = 0; c < coords.size(); ++c) {
        const double keep = *coords[c];
        *coords[c] = keep + h;
        const double up = value();
        *coords[c] = keep - h;
        const double down = value();
        *coords[c] = keep;
        g(static_cast<Index>(c)) = (up - down) / (2.0 * h);
    }
    return g;
}

inline std::vector<double*> coordinates(LinearModel& m) {
    std::vector<double*> out;
    for (Index c = 0; c < m.w0.size(); ++c) out.push_back(m.w0.data() + c);
    for (auto& w : m.wk)
        for (Index c = 0; c < w.size(); ++c) out.push_back(w.data() + c);
    for (auto& z : m.z)
        for (Index c = 0; c < z.size(); ++c) out.push_back(z.data() + c);
    return out;
}

inline std::vector<double*> coordinates(NonlinearModel& m) {
    std::vector<double*> out;
    for (auto& net : m.nets)
        for (auto& t : net.t)
            for (Index c = 0; c < t.size(); ++c) out.push_back(t.data() + c);
    for (auto& z : m.z)
        for (Index c = 0; c < z.size(); ++c) out.push_back(z.data() + c);
    return out;
}

}  // namespace detail

/// Analytic gradients against central finite differences (h = 1e-6) for both
/// solvers: relative error <= 1e-5 (linear) and <= 1e-3 (nonlinear).
inline SuiteResult gradient_suite(const Faults& faults = {}) {
    SuiteResult r{"gradient", true, "", ""};
    RandomStream rng(777);
    double worst_lin = 0.0, worst_nl = 0.0;
    int failures = 0;
    for (int inst = 0; inst < 10; ++inst) {
        const Index d = 1 + rng.index(3), p = rng.index(3), n_envs = 1 + rng.index(3), steps = 4 + rng.index(6);
        const auto ds = detail::random_dataset(rng, n_envs, d, steps);
        LinearModel m = detail::random_linear_model(rng, d, p, n_envs, steps);
        LinearModel g = smooth_gradient(m, ds);
        if (faults.gradient) g.w0 *= 1.01;
        const Vector analytic = [&] {
            auto cs = detail::coordinates(g);
            Vector v(static_cast<Index>(cs.size()));
            for (std::size_t c = 0; c < cs.size(); ++c) v(static_cast<Index>(c)) = *cs[c];
            return v;
        }();
        const Vector numeric = detail::numeric_gradient(detail::coordinates(m), [&] { return rss(m, ds); }, 1e-6);
        const double err = detail::rel_error(analytic, numeric);
        worst_lin = std::max(worst_lin, err);
        if (err > 1e-5 && failures++ == 0)
            r.failure = "linear instance " + std::to_string(inst) + ": d=" + std::to_string(d) + " p=" + std::to_string(p) +
                        " N=" + std::to_string(n_envs) + " T=" + std::to_string(steps) + " relative error " + detail::fmt(err);
    }
    for (int inst = 0; inst < 5; ++inst) {
        const Index d = 1 + rng.index(2), p = rng.index(2), n_envs = 1 + rng.index(2), steps = 4 + rng.index(4);
        const auto ds = detail::random_dataset(rng, n_envs, d, steps);
        NonlinearModel m = initial_nonlinear_model(ds, p, Dims{3, 2, 2}, 100 + static_cast<std::uint64_t>(inst));
        for (auto& net : m.nets)
            for (auto& t : net.t) detail::fill_normal(t, rng, 0.7);
        const double ridge = 0.1;
        NonlinearModel g = nonlinear_gradient(m, ds, ridge);
        if (faults.gradient) g.z = std::vector<Matrix>(g.z.size(), Matrix::Zero(p, steps - 1)), g.nets[0].t[0] *= 1.01;
        Vector analytic;
        {
            auto cs = detail::coordinates(g);
            analytic.resize(static_cast<Index>(cs.size()));
            for (std::size_t c = 0; c < cs.size(); ++c) analytic(static_cast<Index>(c)) = *cs[c];
        }
        const Vector numeric =
            detail::numeric_gradient(detail::coordinates(m), [&] { return nonlinear_smooth(m, ds, ridge); }, 1e-6);
        const double err = detail::rel_error(analytic, numeric);
        worst_nl = std::max(worst_nl, err);
        if (err > 1e-3 && failures++ == 0)
            r.failure = "nonlinear instance " + std::to_string(inst) + ": d=" + std::to_string(d) + " p=" + std::to_string(p) +
                        " N=" + std::to_string(n_envs) + " T=" + std::to_string(steps) + " relative error " + detail::fmt(err);
    }
    r.passed = failures == 0;
    r.summary = "linear max relative error " + detail::fmt(worst_lin) + " (<= 1e-5), nonlinear " + detail::fmt(worst_nl) +
                " (<= 1e-3)";
    return r;
}

/// Rank-based AUROC and tie-aware AP against O(n^2) oracles on 1,000 random
/// instances with heavy ties.
inline SuiteResult metrics_suite(const Faults& faults = {}) {
    SuiteResult r{"metrics", true, "", ""};
    RandomStream rng(4242);
    double worst = 0.0;
    int failures = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng.index(40));
        const Index levels = 1 + rng.index(6);
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (std::size_t a = 0; a < n; ++a) {
            s[a] = static_cast<double>(rng.index(levels)) / static_cast<double>(levels);
            l[a] = rng.bernoulli(0.4) ? 1 : 0;
        }
        l[0] = 1;
        l[1] = 0;
        const ScoredLabels sl(s, l);
        double a1 = auroc(sl), p1 = auprc(sl);
        if (faults.metrics) a1 = 1.0 - a1;
        const double err = std::max(std::abs(a1 - oracle::auroc_pairs(s, l)), std::abs(p1 - oracle::auprc_thresholds(s, l)));
        worst = std::max(worst, err);
        if (err > 1e-12 && failures++ == 0) {
            std::ostringstream os;
            os << "instance " << inst << ": scores [";
            for (std::size_t a = 0; a < n; ++a) os << (a ? " " : "") << s[a];
            os << "] labels [";
            for (std::size_t a = 0; a < n; ++a) os << (a ? " " : "") << l[a];
            os << "]";
            r.failure = os.str();
        }
    }
    r.passed = failures == 0;
    r.summary = std::to_string(1000 - failures) + "/1000 instances within 1e-12, max error " + detail::fmt(worst);
    return r;
}

/// Linear solver objective traces are non-increasing on 20 random instances.
inline SuiteResult descent_suite(const Faults& faults = {}) {
    SuiteResult r{"descent", true, "", ""};
    RandomStream rng(99);
    int failures = 0;
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        const Index d = 1 + rng.index(4), n_envs = 1 + rng.index(3), steps = 10 + rng.index(30);
        const auto ds = detail::random_dataset(rng, n_envs, d, steps);
        HyperParams hp;
        hp.n_latents = rng.index(3);
        hp.alpha = rng.uniform(0.1, 0.9);
        hp.lambda_w = rng.uniform(0.0, 5.0);
        hp.lambda_z = rng.uniform(0.0, 5.0);
        hp.max_iters = 200;
        auto fit = fit_linear(ds, hp, static_cast<std::uint64_t>(inst));
        if (faults.descent && fit.trace.size() > 2) fit.trace[2] = fit.trace[1] * 1.5 + 1.0;
        for (std::size_t t = 1; t < fit.trace.size(); ++t) {
            const double rise = fit.trace[t] - fit.trace[t - 1];
            const double rel = rise / std::max(1.0, std::abs(fit.trace[t - 1]));
            worst = std::max(worst, rel);
            if (rel > 1e-10) {
                if (failures++ == 0)
                    r.failure = "instance " + std::to_string(inst) + ": d=" + std::to_string(d) + " N=" + std::to_string(n_envs) +
                                " T=" + std::to_string(steps) + " L=" + std::to_string(hp.n_latents) + " rise " + detail::fmt(rise) +
                                " at iteration " + std::to_string(t);
                break;
            }
        }
    }
    r.passed = failures == 0;
    r.summary = std::to_string(20 - failures) + "/20 traces non-increasing, max relative rise " + detail::fmt(std::max(worst, 0.0));
    return r;
}

/// Every environment's transition matrix has spectral radius <= 0.9 + 1e-9.
inline SuiteResult datagen_suite(const Faults& faults = {}) {
    SuiteResult r{"datagen", true, "", ""};
    double worst = 0.0;
    int failures = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        GenConfig cfg;
        cfg.seed = seed;
        cfg.e = seed % 2 ? 0.3 : 0.8;
        RandomStream root(seed);
        RandomStream g_rng = root.split(1), i_rng = root.split(2);
        GroundTruth g = apply_interventions(sample_graph(cfg, g_rng), cfg, i_rng);
        for (const auto& w : g.obs_weights) {
            const Matrix a = transition_matrix(faults.datagen ? Matrix(w * 3.0) : w, g.latent_to_obs, g.latent_dynamics);
            const double rho = spectral_radius(a);
            worst = std::max(worst, rho);
            if (rho > kSpectralTarget + 1e-9 && failures++ == 0)
                r.failure = "seed " + std::to_string(seed) + " e=" + detail::fmt(cfg.e) + " spectral radius " + detail::fmt(rho);
        }
    }
    r.passed = failures == 0;
    r.summary = std::to_string(20 - std::min(failures, 20)) + "/20 configs stationary, max spectral radius " + detail::fmt(worst);
    return r;
}

inline std::vector<SuiteResult> run_all(const Faults& faults = {}) {
    return {prox_suite(faults), gradient_suite(faults), metrics_suite(faults), descent_suite(faults), datagen_suite(faults)};
}

}  // namespace invargc::selftest
