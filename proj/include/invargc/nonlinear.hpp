#pragma once

#include "invargc/analysis.hpp"
#include "invargc/common.hpp"
#include "invargc/dataset.hpp"
#include "invargc/linear.hpp"
#include "invargc/prox.hpp"
#include "invargc/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace invargc {

inline constexpr double kNetworkSlope = 0.01;   // leaky-relu slope inside f and g
inline constexpr double kNonlinearStep = 1e-3;  // adaptive learning rate
inline constexpr std::size_t kNonlinearMaxIters = 3000;  // used when max_iters is 0
inline constexpr std::size_t kWindow = 100;

inline constexpr double kNonlinearLambdaWPerStep = 0.08;
inline constexpr double kNonlinearLambdaZPerStep = 5.0;

/// Fills unset penalties with the nonlinear defaults (scaled by T - 1) and
/// max_iters 0 with kNonlinearMaxIters.
inline HyperParams resolve_nonlinear_defaults(HyperParams hp, Index n_steps) {
    if (hp.max_iters == 0) hp.max_iters = kNonlinearMaxIters;
    if (std::isnan(hp.lambda_w)) hp.lambda_w = kNonlinearLambdaWPerStep * static_cast<double>(n_steps - 1);
    if (std::isnan(hp.lambda_z)) hp.lambda_z = kNonlinearLambdaZPerStep * static_cast<double>(n_steps - 1);
    return hp;
}

/// Network widths: h (hidden), h_c (representation), h' (embedding).
struct Dims {
    Index hidden = 16;
    Index repr = 8;
    Index embed = 8;
};

inline void validate(const Dims& dims) {
    if (dims.hidden < 1 || dims.repr < 1 || dims.embed < 1) throw ValidationError("network widths must be positive");
}

/// Per-target network. All tensors live in one flat list; the accessors name
/// them. Layout: f1 fb1 f2 fb2 f3 fb3 a1 ab1 a2 ab2, then per environment
/// g1 gb1 g2 gb2.
struct TargetNet {
    enum Slot : Index { F1, FB1, F2, FB2, F3, FB3, A1, AB1, A2, AB2, kShared };
    static constexpr Index kPerEnv = 4;

    std::vector<Matrix> t;

    Index n_envs() const { return (static_cast<Index>(t.size()) - kShared) / kPerEnv; }

    Matrix& at(Index slot) { return t[static_cast<std::size_t>(slot)]; }
    const Matrix& at(Index slot) const { return t[static_cast<std::size_t>(slot)]; }
    static Index g1_slot(Index k) { return kShared + kPerEnv * k; }
    static Index gb1_slot(Index k) { return kShared + kPerEnv * k + 1; }
    static Index g2_slot(Index k) { return kShared + kPerEnv * k + 2; }
    static Index gb2_slot(Index k) { return kShared + kPerEnv * k + 3; }

    Matrix& g1(Index k) { return at(g1_slot(k)); }
    const Matrix& g1(Index k) const { return at(g1_slot(k)); }

    // Weight matrices past the first layer; these carry the ridge decay.
    static bool is_deep(Index slot) {
        if (slot < kShared) return slot == F2 || slot == F3 || slot == A1 || slot == A2;
        return (slot - kShared) % kPerEnv == 2;
    }
};

struct NonlinearModel {
    std::vector<TargetNet> nets;  // one per observed target
    std::vector<Matrix> z;        // N x (p x (T - 1))
    Dims dims;
    Index n_latents = 0;

    Index n_vars() const { return static_cast<Index>(nets.size()); }
    Index n_envs() const { return static_cast<Index>(z.size()); }

    static NonlinearModel zeros(Index d, Index p, Index n_envs, Index n_steps, const Dims& dims) {
        NonlinearModel m;
        m.dims = dims;
        m.n_latents = p;
        const Index h = dims.hidden, hc = dims.repr, he = dims.embed;
        TargetNet net;
        net.t = {Matrix::Zero(h, d + p), Matrix::Zero(h, 1),  Matrix::Zero(h, h), Matrix::Zero(h, 1),
                 Matrix::Zero(hc, h),    Matrix::Zero(hc, 1), Matrix::Zero(he, 2 * hc), Matrix::Zero(he, 1),
                 Matrix::Zero(1, he),    Matrix::Zero(1, 1)};
        for (Index k = 0; k < n_envs; ++k) {
            net.t.push_back(Matrix::Zero(h, d));
            net.t.push_back(Matrix::Zero(h, 1));
            net.t.push_back(Matrix::Zero(hc, h));
            net.t.push_back(Matrix::Zero(hc, 1));
        }
        m.nets.assign(static_cast<std::size_t>(d), net);
        m.z.assign(static_cast<std::size_t>(n_envs), Matrix::Zero(p, n_steps - 1));
        return m;
    }

    bool all_finite() const {
        for (const auto& n : nets)
            for (const auto& x : n.t)
                if (!x.allFinite()) return false;
        for (const auto& x : z)
            if (!x.allFinite()) return false;
        return true;
    }
};

namespace nonlinear_detail {

inline Matrix lrelu(const Matrix& x) {
    return x.unaryExpr([](double v) { return leaky_relu(v, kNetworkSlope); });
}

inline Matrix lrelu_grad(const Matrix& pre, const Matrix& upstream) {
    return upstream.binaryExpr(pre, [](double g, double v) { return v > 0.0 ? g : kNetworkSlope * g; });
}

// Intermediate values of one (target, environment) forward pass over all
// input positions, kept for backpropagation.
struct Pass {
    Matrix u1, h1, u2, h2, c;  // invariant path
    Matrix v1, q1, hh;         // environment path
    Matrix hc, e;              // aggregator
    RowVector y;
};

inline void check_shapes(const NonlinearModel& m, const MultiEnvDataset& ds) {
    require_shape(m.n_vars() == ds.n_vars(), "model and dataset disagree on the number of variables");
    require_shape(m.n_envs() == ds.n_envs(), "model and dataset disagree on the number of environments");
    const Index d = ds.n_vars(), p = m.n_latents;
    for (const auto& net : m.nets) {
        require_shape(net.n_envs() == ds.n_envs(), "every target network needs one path per environment");
        require_shape(net.at(TargetNet::F1).cols() == d + p, "f first layer must take d + p inputs");
        for (Index k = 0; k < net.n_envs(); ++k) require_shape(net.g1(k).cols() == d, "g first layer must take d inputs");
    }
    for (const auto& zk : m.z)
        require_shape(zk.rows() == p && zk.cols() == ds.n_steps() - 1, "z must be p x (T - 1)");
}

inline Matrix stacked(const Matrix& x, const Matrix& z) {
    Matrix p(x.rows() + z.rows(), x.cols());
    p.topRows(x.rows()) = x;
    if (z.rows() > 0) p.bottomRows(z.rows()) = z;
    return p;
}

inline Pass forward_pass(const TargetNet& n, Index k, const Matrix& x, const Matrix& p) {
    using S = TargetNet;
    Pass s;
    s.u1 = (n.at(S::F1) * p).colwise() + n.at(S::FB1).col(0);
    s.h1 = lrelu(s.u1);
    s.u2 = (n.at(S::F2) * s.h1).colwise() + n.at(S::FB2).col(0);
    s.h2 = lrelu(s.u2);
    s.c = (n.at(S::F3) * s.h2).colwise() + n.at(S::FB3).col(0);
    s.v1 = (n.at(S::g1_slot(k)) * x).colwise() + n.at(S::gb1_slot(k)).col(0);
    s.q1 = lrelu(s.v1);
    s.hh = (n.at(S::g2_slot(k)) * s.q1).colwise() + n.at(S::gb2_slot(k)).col(0);
    const Index hc = s.c.rows();
    s.hc.resize(2 * hc, x.cols());
    s.hc.topRows(hc) = s.hh;
    s.hc.bottomRows(hc) = s.c;
    s.e = ((n.at(S::A1) * s.hc).colwise() + n.at(S::AB1).col(0)).array().tanh();
    s.y = (n.at(S::A2) * s.e).array() + n.at(S::AB2)(0, 0);
    return s;
}

// Accumulates d(loss)/d(params) into grad given d(loss)/dy; returns d/dP.
inline Matrix backward_pass(const TargetNet& n, Index k, const Matrix& x, const Matrix& p, const Pass& s,
                            const RowVector& dy, TargetNet& g) {
    using S = TargetNet;
    g.at(S::A2).noalias() += dy * s.e.transpose();
    g.at(S::AB2)(0, 0) += dy.sum();
    const Matrix ds = (n.at(S::A2).transpose() * dy).cwiseProduct((1.0 - s.e.array().square()).matrix());
    g.at(S::A1).noalias() += ds * s.hc.transpose();
    g.at(S::AB1) += ds.rowwise().sum();
    const Matrix dhc = n.at(S::A1).transpose() * ds;
    const Index hc = s.c.rows();
    const Matrix dh = dhc.topRows(hc), dc = dhc.bottomRows(hc);

    g.at(S::g2_slot(k)).noalias() += dh * s.q1.transpose();
    g.at(S::gb2_slot(k)) += dh.rowwise().sum();
    const Matrix dv1 = lrelu_grad(s.v1, n.at(S::g2_slot(k)).transpose() * dh);
    g.at(S::g1_slot(k)).noalias() += dv1 * x.transpose();
    g.at(S::gb1_slot(k)) += dv1.rowwise().sum();

    g.at(S::F3).noalias() += dc * s.h2.transpose();
    g.at(S::FB3) += dc.rowwise().sum();
    const Matrix du2 = lrelu_grad(s.u2, n.at(S::F3).transpose() * dc);
    g.at(S::F2).noalias() += du2 * s.h1.transpose();
    g.at(S::FB2) += du2.rowwise().sum();
    const Matrix du1 = lrelu_grad(s.u1, n.at(S::F2).transpose() * du2);
    g.at(S::F1).noalias() += du1 * p.transpose();
    g.at(S::FB1) += du1.rowwise().sum();
    return n.at(S::F1).transpose() * du1;
}

}  // namespace nonlinear_detail

/// Predictions for every target at input positions of environment k
/// (d x (T - 1)).
inline Matrix predict(const NonlinearModel& m, const MultiEnvDataset& ds, Index k) {
    nonlinear_detail::check_shapes(m, ds);
    const Matrix x = ds.inputs(k);
    const Matrix p = nonlinear_detail::stacked(x, m.z[static_cast<std::size_t>(k)]);
    Matrix out(m.n_vars(), x.cols());
    for (Index i = 0; i < m.n_vars(); ++i)
        out.row(i) = nonlinear_detail::forward_pass(m.nets[static_cast<std::size_t>(i)], k, x, p).y;
    return out;
}

/// Predictions for a single input position t of environment k.
inline Vector forward(const NonlinearModel& m, const MultiEnvDataset& ds, Index k, Index t) {
    require(t >= 0 && t < ds.n_steps() - 1, "time index must be an input position");
    return predict(m, ds, k).col(t);
}

inline double nonlinear_rss(const NonlinearModel& m, const MultiEnvDataset& ds) {
    double total = 0.0;
    for (Index k = 0; k < ds.n_envs(); ++k) total += (ds.targets(k) - predict(m, ds, k)).squaredNorm();
    return total;
}

inline double ridge_penalty(const NonlinearModel& m, double ridge) {
    double total = 0.0;
    for (const auto& net : m.nets)
        for (Index s = 0; s < static_cast<Index>(net.t.size()); ++s)
            if (TargetNet::is_deep(s)) total += net.at(s).squaredNorm();
    return ridge * total;
}

/// Squared error plus ridge decay on deep layers: the part handled by gradients.
inline double nonlinear_smooth(const NonlinearModel& m, const MultiEnvDataset& ds, double ridge) {
    return nonlinear_rss(m, ds) + ridge_penalty(m, ridge);
}

/// Group penalty on first-layer columns plus the latent RMS penalty.
inline double nonlinear_penalty(const NonlinearModel& m, const HyperParams& hp) {
    require(!std::isnan(hp.lambda_w) && !std::isnan(hp.lambda_z), "penalty needs resolved lambda_w and lambda_z");
    double outer = 0.0, inner = 0.0;
    const Index d = m.n_vars();
    for (const auto& net : m.nets) {
        const Matrix& f1 = net.at(TargetNet::F1);
        for (Index j = 0; j < f1.cols(); ++j) {
            double sq = f1.col(j).squaredNorm();
            if (j < d)
                for (Index k = 0; k < net.n_envs(); ++k) {
                    const double c = net.g1(k).col(j).squaredNorm();
                    sq += c;
                    inner += std::sqrt(c);
                }
            outer += std::sqrt(sq);
        }
    }
    return z_penalty(m.z, hp.lambda_z) + hp.lambda_w * ((1.0 - hp.alpha) * outer + hp.alpha * inner);
}

inline double nonlinear_objective(const NonlinearModel& m, const MultiEnvDataset& ds, const HyperParams& hp) {
    return nonlinear_smooth(m, ds, hp.ridge) + nonlinear_penalty(m, hp);
}

/// Value of nonlinear_smooth together with its gradient for every tensor and
/// z (in a model-shaped container), from one forward/backward sweep.
inline double nonlinear_value_and_gradient(const NonlinearModel& m, const MultiEnvDataset& ds, double ridge,
                                           NonlinearModel& g) {
    nonlinear_detail::check_shapes(m, ds);
    g = NonlinearModel::zeros(m.n_vars(), m.n_latents, ds.n_envs(), ds.n_steps(), m.dims);
    const Index d = m.n_vars(), p = m.n_latents;
    double value = 0.0;
    for (Index k = 0; k < ds.n_envs(); ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const Matrix x = ds.inputs(k);
        const Matrix pin = nonlinear_detail::stacked(x, m.z[kk]);
        const Matrix y = ds.targets(k);
        for (Index i = 0; i < d; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const auto pass = nonlinear_detail::forward_pass(m.nets[ii], k, x, pin);
            const RowVector r = y.row(i) - pass.y;
            value += r.squaredNorm();
            const Matrix dp = nonlinear_detail::backward_pass(m.nets[ii], k, x, pin, pass, -2.0 * r, g.nets[ii]);
            if (p > 0) g.z[kk] += dp.bottomRows(p);
        }
    }
    for (std::size_t i = 0; i < m.nets.size(); ++i)
        for (Index s = 0; s < static_cast<Index>(m.nets[i].t.size()); ++s)
            if (TargetNet::is_deep(s)) g.nets[i].at(s) += 2.0 * ridge * m.nets[i].at(s);
    return value + ridge_penalty(m, ridge);
}

inline NonlinearModel nonlinear_gradient(const NonlinearModel& m, const MultiEnvDataset& ds, double ridge) {
    NonlinearModel g;
    nonlinear_value_and_gradient(m, ds, ridge, g);
    return g;
}

/// Exact prox of the first-layer group penalty. step(i, j) is the step used
/// for the group of input j in target i's network: every g column in it is
/// thresholded, then the concatenated (f column, g columns) group.
inline void prox_first_layers(NonlinearModel& m, const Matrix& step, const HyperParams& hp) {
    const Index d = m.n_vars();
    for (Index i = 0; i < d; ++i) {
        auto& net = m.nets[static_cast<std::size_t>(i)];
        Matrix& f1 = net.at(TargetNet::F1);
        for (Index j = 0; j < f1.cols(); ++j) {
            const double inner = step(i, j) * hp.lambda_w * hp.alpha;
            const double outer = step(i, j) * hp.lambda_w * (1.0 - hp.alpha);
            if (j >= d) {
                prox::block_soft_threshold(f1.col(j), outer);
                continue;
            }
            double sq = 0.0;
            for (Index k = 0; k < net.n_envs(); ++k) {
                prox::block_soft_threshold(net.g1(k).col(j), inner);
                sq += net.g1(k).col(j).squaredNorm();
            }
            sq += f1.col(j).squaredNorm();
            const double norm = std::sqrt(sq);
            const double scale = norm <= outer ? 0.0 : 1.0 - outer / norm;
            f1.col(j) *= scale;
            for (Index k = 0; k < net.n_envs(); ++k) net.g1(k).col(j) *= scale;
        }
    }
}

inline void prox_first_layers(NonlinearModel& m, double step, const HyperParams& hp) {
    const Index cols = m.nets.empty() ? 0 : m.nets.front().at(TargetNet::F1).cols();
    prox_first_layers(m, Matrix::Constant(m.n_vars(), cols, step), hp);
}

struct NonlinearFit {
    NonlinearModel model;
    std::vector<double> trace;  // trace[t] is the objective before update t + 1
    std::size_t iterations = 0;
    bool converged = false;
};

inline NonlinearModel initial_nonlinear_model(const MultiEnvDataset& ds, Index p, const Dims& dims, std::uint64_t seed) {
    NonlinearModel m = NonlinearModel::zeros(ds.n_vars(), p, ds.n_envs(), ds.n_steps(), dims);
    RandomStream rng = RandomStream(seed).split(0x6e6c);
    for (auto& net : m.nets)
        for (Index s = 0; s < static_cast<Index>(net.t.size()); ++s) {
            Matrix& w = net.at(s);
            if (w.cols() == 1 && s != TargetNet::A2) continue;  // biases start at zero
            const double fan_in = static_cast<double>(w.cols());
            const bool rectified = s == TargetNet::F1 || s == TargetNet::F2 || s >= TargetNet::kShared;
            const double sd = std::sqrt((rectified ? 2.0 : 1.0) / fan_in);
            for (Index c = 0; c < w.cols(); ++c)
                for (Index r = 0; r < w.rows(); ++r) w(r, c) = rng.normal(0.0, sd);
        }
    m.z = spectral_latent_init(ds, p);
    for (auto& zk : m.z)
        for (Index t = 0; t < zk.cols(); ++t)
            for (Index l = 0; l < zk.rows(); ++l) zk(l, t) += rng.normal(0.0, 0.01);
    return m;
}

namespace nonlinear_detail {

// Adam moment estimates, stored in model-shaped containers.
struct Moments {
    NonlinearModel m, v;
};

// Applies one bias-corrected adaptive step to a tensor and returns the
// per-entry effective step sizes rate / (sqrt(v_hat) + eps).
inline Matrix adaptive_update(Matrix& w, const Matrix& g, Matrix& m1, Matrix& m2, double rate, double c1, double c2) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m1 = b1 * m1 + (1.0 - b1) * g;
    m2 = b2 * m2 + (1.0 - b2) * g.cwiseAbs2();
    const Matrix denom = ((m2 / c2).cwiseSqrt().array() + eps).matrix();
    const Matrix steps = (rate / denom.array()).matrix();
    w -= ((m1 / c1).array() * steps.array()).matrix();
    return steps;
}

}  // namespace nonlinear_detail

/// Proximal adaptive-gradient descent. Each step preconditions the smooth
/// gradient with Adam moment estimates, then applies the exact prox in the
/// metric obtained by averaging the preconditioner over each penalized group
/// (a scalar per group, so the group prox stays exact). The weight penalty is
/// ramped linearly from 0 over the first third of max_iters; convergence is
/// only tested once it is at full strength.
inline NonlinearFit fit_nonlinear(const MultiEnvDataset& ds, HyperParams hp, const Dims& dims, std::uint64_t seed,
                                  const NonlinearModel* warm_start = nullptr) {
    hp = resolve_nonlinear_defaults(hp, ds.n_steps());
    validate(hp);
    validate(dims);
    NonlinearFit fit;
    fit.model = warm_start ? *warm_start : initial_nonlinear_model(ds, hp.n_latents, dims, seed);
    nonlinear_detail::check_shapes(fit.model, ds);
    const Index d = fit.model.n_vars(), p = fit.model.n_latents;

    nonlinear_detail::Moments mom{NonlinearModel::zeros(d, p, ds.n_envs(), ds.n_steps(), fit.model.dims),
                                  NonlinearModel::zeros(d, p, ds.n_envs(), ds.n_steps(), fit.model.dims)};
    const double rate = kNonlinearStep;
    const std::size_t ramp = hp.max_iters / 3;
    NonlinearModel grad;
    Matrix group_steps(d, d + p);

    for (std::size_t it = 1; it <= hp.max_iters + 1; ++it) {
        const double obj = nonlinear_value_and_gradient(fit.model, ds, hp.ridge, grad) + nonlinear_penalty(fit.model, hp);
        if (!std::isfinite(obj)) throw DivergenceError("non-finite objective", it - 1);
        fit.trace.push_back(obj);
        const std::size_t n = fit.trace.size();
        if (n > kWindow + ramp) {
            const double old = fit.trace[n - 1 - kWindow];
            if (std::abs(old - obj) / std::max(1.0, std::abs(old)) < hp.tol * static_cast<double>(kWindow)) {
                fit.converged = true;
                break;
            }
        }
        if (it > hp.max_iters) break;
        fit.iterations = it;

        const double c1 = 1.0 - std::pow(0.9, static_cast<double>(it));
        const double c2 = 1.0 - std::pow(0.999, static_cast<double>(it));
        for (Index i = 0; i < d; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            auto& net = fit.model.nets[ii];
            std::vector<Matrix> steps(net.t.size());
            for (std::size_t s = 0; s < net.t.size(); ++s)
                steps[s] = nonlinear_detail::adaptive_update(net.t[s], grad.nets[ii].t[s], mom.m.nets[ii].t[s],
                                                             mom.v.nets[ii].t[s], rate, c1, c2);
            // One step per penalized group: the mean effective step over its entries.
            for (Index j = 0; j < d + p; ++j) {
                double sum = steps[TargetNet::F1].col(j).sum();
                Index count = steps[TargetNet::F1].rows();
                if (j < d)
                    for (Index k = 0; k < net.n_envs(); ++k) {
                        sum += steps[static_cast<std::size_t>(TargetNet::g1_slot(k))].col(j).sum();
                        count += steps[static_cast<std::size_t>(TargetNet::g1_slot(k))].rows();
                    }
                group_steps(i, j) = sum / static_cast<double>(count);
            }
        }
        HyperParams ramped = hp;
        if (it < ramp) ramped.lambda_w *= static_cast<double>(it) / static_cast<double>(ramp);
        prox_first_layers(fit.model, group_steps, ramped);
        for (std::size_t k = 0; k < fit.model.z.size(); ++k) {
            Matrix& zk = fit.model.z[k];
            const Matrix steps = nonlinear_detail::adaptive_update(zk, grad.z[k], mom.m.z[k], mom.v.z[k], rate, c1, c2);
            const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(zk.cols(), 1)));
            for (Index l = 0; l < zk.rows(); ++l)
                prox::block_soft_threshold(zk.row(l), steps.row(l).mean() * hp.lambda_z * scale);
        }
    }
    return fit;
}

/// Norm of the concatenated first-layer group for each observed (j, i).
inline EdgeScores edge_scores(const NonlinearModel& m) {
    const Index d = m.n_vars();
    Matrix s(d, d);
    for (Index i = 0; i < d; ++i) {
        const auto& net = m.nets[static_cast<std::size_t>(i)];
        for (Index j = 0; j < d; ++j) {
            double sq = net.at(TargetNet::F1).col(j).squaredNorm();
            for (Index k = 0; k < net.n_envs(); ++k) sq += net.g1(k).col(j).squaredNorm();
            s(j, i) = std::sqrt(sq);
        }
    }
    return {s};
}

inline InterventionScores intervention_scores(const NonlinearModel& m) {
    const Index d = m.n_vars();
    InterventionScores out;
    for (Index k = 0; k < m.n_envs(); ++k) {
        Matrix s(d, d);
        for (Index i = 0; i < d; ++i)
            for (Index j = 0; j < d; ++j) s(j, i) = m.nets[static_cast<std::size_t>(i)].g1(k).col(j).norm();
        out.scores.push_back(std::move(s));
    }
    return out;
}

}  // namespace invargc
