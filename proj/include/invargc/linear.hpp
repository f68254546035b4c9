#pragma once

#include "invargc/common.hpp"
#include "invargc/dataset.hpp"
#include "invargc/prox.hpp"
#include "invargc/rng.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace invargc {

/// Regularization and optimizer settings shared by both solvers.
struct HyperParams {
    // Penalty scales. NaN means "resolve from the data" as a per-step constant
    // times (T - 1); see resolve_defaults().
    double lambda_z = std::numeric_limits<double>::quiet_NaN();  // latent trajectory penalty
    double alpha = 0.7;  // within-environment share of the weight penalty
    double lambda_w = std::numeric_limits<double>::quiet_NaN();
    Index n_latents = 1;
    std::size_t max_iters = 0;  // 0 means the solver's own default
    double tol = 1e-8;
    double step_init = 1.0;
    double backtrack = 0.5;
    double ridge = 1e-4;  // nonlinear solver only: decay on deep layers
};

inline constexpr double kLambdaWPerStep = 0.05;
inline constexpr double kLambdaZPerStep = 0.6;
inline constexpr std::size_t kLinearMaxIters = 20000;

inline void validate(const HyperParams& hp) {
    if (!(hp.alpha > 0.0 && hp.alpha < 1.0)) throw ValidationError("alpha must lie strictly inside (0, 1)");
    if (!(hp.tol > 0.0)) throw ValidationError("tol must be positive");
    if (!std::isnan(hp.lambda_z) && (!(hp.lambda_z >= 0.0) || !std::isfinite(hp.lambda_z)))
        throw ValidationError("lambda_z must be a finite value >= 0");
    if (!std::isnan(hp.lambda_w) && (!(hp.lambda_w >= 0.0) || !std::isfinite(hp.lambda_w)))
        throw ValidationError("lambda_w must be a finite value >= 0");
    if (hp.n_latents < 0) throw ValidationError("latents must be non-negative");
    if (!(hp.step_init > 0.0)) throw ValidationError("step_init must be positive");
    if (!(hp.backtrack > 0.0 && hp.backtrack < 1.0)) throw ValidationError("backtrack must lie in (0, 1)");
    if (!(hp.ridge >= 0.0)) throw ValidationError("ridge must be non-negative");
}

inline HyperParams resolve_defaults(HyperParams hp, Index n_steps, std::size_t default_max_iters = kLinearMaxIters) {
    if (hp.max_iters == 0) hp.max_iters = default_max_iters;
    if (std::isnan(hp.lambda_w)) hp.lambda_w = kLambdaWPerStep * static_cast<double>(n_steps - 1);
    if (std::isnan(hp.lambda_z)) hp.lambda_z = kLambdaZPerStep * static_cast<double>(n_steps - 1);
    return hp;
}

/// Parameters of the linear predictor
///   X_{k,t+1}^i ~ w0.row(i) * [X_{k,t}; Z_{k,t}] + wk[k].row(i) * X_{k,t}.
/// Note wk[k](i, j) is indexed (target, source), unlike GroundTruth.
struct LinearModel {
    Matrix w0;               // d x (d + p)
    std::vector<Matrix> wk;  // N x (d x d)
    std::vector<Matrix> z;   // N x (p x (T - 1))

    Index n_vars() const noexcept { return w0.rows(); }
    Index n_latents() const noexcept { return w0.cols() - w0.rows(); }
    Index n_envs() const noexcept { return static_cast<Index>(wk.size()); }
    Index n_inputs() const noexcept { return z.empty() ? 0 : z.front().cols(); }

    static LinearModel zeros(Index d, Index p, Index n_envs, Index n_steps) {
        LinearModel m;
        m.w0 = Matrix::Zero(d, d + p);
        m.wk.assign(static_cast<std::size_t>(n_envs), Matrix::Zero(d, d));
        m.z.assign(static_cast<std::size_t>(n_envs), Matrix::Zero(p, n_steps - 1));
        return m;
    }

    bool all_finite() const {
        if (!w0.allFinite()) return false;
        for (const auto& m : wk)
            if (!m.allFinite()) return false;
        for (const auto& m : z)
            if (!m.allFinite()) return false;
        return true;
    }
};

namespace linear_detail {

inline void check_shapes(const LinearModel& m, const MultiEnvDataset& ds) {
    require_shape(m.n_vars() == ds.n_vars(), "model and dataset disagree on the number of variables");
    require_shape(m.n_latents() >= 0, "w0 must have at least d columns");
    require_shape(m.n_envs() == ds.n_envs(), "model and dataset disagree on the number of environments");
    require_shape(static_cast<Index>(m.z.size()) == ds.n_envs(), "z must hold one matrix per environment");
    for (Index k = 0; k < m.n_envs(); ++k) {
        require_shape(m.wk[static_cast<std::size_t>(k)].rows() == m.n_vars() &&
                          m.wk[static_cast<std::size_t>(k)].cols() == m.n_vars(),
                      "wk must be d x d");
        require_shape(m.z[static_cast<std::size_t>(k)].rows() == m.n_latents() &&
                          m.z[static_cast<std::size_t>(k)].cols() == ds.n_steps() - 1,
                      "z must be p x (T - 1)");
    }
}

inline Matrix stacked_inputs(const MultiEnvDataset& ds, const Matrix& z, Index k) {
    const Index d = ds.n_vars();
    Matrix p(d + z.rows(), ds.n_steps() - 1);
    p.topRows(d) = ds.inputs(k);
    if (z.rows() > 0) p.bottomRows(z.rows()) = z;
    return p;
}

inline Matrix residual(const LinearModel& m, const MultiEnvDataset& ds, Index k) {
    const auto kk = static_cast<std::size_t>(k);
    const Index d = m.n_vars();
    Matrix r = ds.targets(k);
    r.noalias() -= m.w0.leftCols(d) * ds.inputs(k);
    if (m.n_latents() > 0) r.noalias() -= m.w0.rightCols(m.n_latents()) * m.z[kk];
    r.noalias() -= m.wk[kk] * ds.inputs(k);
    return r;
}

}  // namespace linear_detail

/// Residual sum of squares over all environments, targets and input positions.
inline double rss(const LinearModel& m, const MultiEnvDataset& ds) {
    linear_detail::check_shapes(m, ds);
    double total = 0.0;
    for (Index k = 0; k < ds.n_envs(); ++k) total += linear_detail::residual(m, ds, k).squaredNorm();
    return total;
}

inline double z_penalty(const std::vector<Matrix>& z, double lambda_z) {
    double total = 0.0;
    for (const auto& zk : z) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(zk.cols(), 1)));
        for (Index l = 0; l < zk.rows(); ++l) total += zk.row(l).norm() * scale;
    }
    return lambda_z * total;
}

/// Non-smooth part: latent RMS penalty plus the two-level weight penalty.
inline double penalty(const LinearModel& m, const HyperParams& hp) {
    require(!std::isnan(hp.lambda_w) && !std::isnan(hp.lambda_z), "penalty needs resolved lambda_w and lambda_z");
    const Index d = m.n_vars();
    double outer = 0.0, inner = 0.0;
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < m.w0.cols(); ++j) {
            double sq = m.w0(i, j) * m.w0(i, j);
            if (j < d)
                for (const auto& w : m.wk) sq += w(i, j) * w(i, j);
            outer += std::sqrt(sq);
        }
    for (const auto& w : m.wk) inner += w.cwiseAbs().sum();
    return z_penalty(m.z, hp.lambda_z) + hp.lambda_w * ((1.0 - hp.alpha) * outer + hp.alpha * inner);
}

inline double objective(const LinearModel& m, const MultiEnvDataset& ds, const HyperParams& hp) {
    return rss(m, ds) + penalty(m, hp);
}

/// Gradient of the residual sum of squares with respect to every block,
/// returned in a LinearModel-shaped container.
inline LinearModel smooth_gradient(const LinearModel& m, const MultiEnvDataset& ds) {
    linear_detail::check_shapes(m, ds);
    const Index d = m.n_vars(), p = m.n_latents();
    LinearModel g = LinearModel::zeros(d, p, ds.n_envs(), ds.n_steps());
    for (Index k = 0; k < ds.n_envs(); ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const Matrix r = linear_detail::residual(m, ds, k);
        const Matrix xr = -2.0 * r * ds.inputs(k).transpose();
        g.w0.leftCols(d) += xr;
        g.wk[kk] = xr;
        if (p > 0) {
            g.w0.rightCols(p).noalias() += -2.0 * r * m.z[kk].transpose();
            g.z[kk].noalias() = -2.0 * m.w0.rightCols(p).transpose() * r;
        }
    }
    return g;
}

/// Exact proximal operator of step * penalty. Leaf groups (single wk entries)
/// are thresholded before the cross-environment groups that contain them.
inline LinearModel prox_weights(LinearModel m, double step, const HyperParams& hp) {
    const Index d = m.n_vars();
    const double inner = step * hp.lambda_w * hp.alpha;
    const double outer = step * hp.lambda_w * (1.0 - hp.alpha);
    for (auto& w : m.wk) w = w.unaryExpr([inner](double v) { return prox::soft_threshold(v, inner); });
    const Index n = m.n_envs();
    Vector group(n + 1);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < m.w0.cols(); ++j) {
            if (j >= d) {
                m.w0(i, j) = prox::soft_threshold(m.w0(i, j), outer);
                continue;
            }
            group(0) = m.w0(i, j);
            for (Index k = 0; k < n; ++k) group(k + 1) = m.wk[static_cast<std::size_t>(k)](i, j);
            prox::block_soft_threshold(group, outer);
            m.w0(i, j) = group(0);
            for (Index k = 0; k < n; ++k) m.wk[static_cast<std::size_t>(k)](i, j) = group(k + 1);
        }
    return m;
}

/// Latent part of the prox: each trajectory Z_{k,l,.} is block-thresholded.
/// The penalty lambda_z * sqrt(mean(z^2)) equals (lambda_z / sqrt(T-1)) ||z||.
inline void prox_latents(std::vector<Matrix>& z, double step, double lambda_z) {
    for (auto& zk : z) {
        const double tau = step * lambda_z / std::sqrt(static_cast<double>(std::max<Index>(zk.cols(), 1)));
        for (Index l = 0; l < zk.rows(); ++l) prox::block_soft_threshold(zk.row(l), tau);
    }
}

inline LinearModel prox_hierarchical(LinearModel m, double step, const HyperParams& hp) {
    require(step > 0.0, "prox step must be positive");
    m = prox_weights(std::move(m), step, hp);
    prox_latents(m.z, step, hp.lambda_z);
    return m;
}

struct LinearFit {
    LinearModel model;
    std::vector<double> trace;  // objective after each iteration; trace[0] is the initial value
    std::size_t iterations = 0;
    bool converged = false;
    double step_w = 0.0;
    double step_z = 0.0;
};

/// Leading principal directions of pooled VAR(1) least-squares residuals,
/// projected per environment. Used to start Z away from the Z = 0 stationary
/// point, where the penalties make the origin locally optimal.
inline std::vector<Matrix> spectral_latent_init(const MultiEnvDataset& ds, Index p) {
    const Index d = ds.n_vars(), n = ds.n_steps() - 1;
    std::vector<Matrix> z(static_cast<std::size_t>(ds.n_envs()), Matrix::Zero(p, n));
    if (p == 0) return z;
    Matrix xx = Matrix::Zero(d, d), yx = Matrix::Zero(d, d);
    for (Index k = 0; k < ds.n_envs(); ++k) {
        xx.noalias() += ds.inputs(k) * ds.inputs(k).transpose();
        yx.noalias() += ds.targets(k) * ds.inputs(k).transpose();
    }
    xx.diagonal().array() += 1e-8 * (xx.trace() / static_cast<double>(d) + 1.0);
    const Matrix b = xx.ldlt().solve(yx.transpose()).transpose();  // d x d, targets on rows
    Matrix cov = Matrix::Zero(d, d);
    std::vector<Matrix> res;
    for (Index k = 0; k < ds.n_envs(); ++k) {
        res.push_back(ds.targets(k) - b * ds.inputs(k));
        cov.noalias() += res.back() * res.back().transpose();
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    const Index use = std::min(p, d);
    for (Index l = 0; l < use; ++l) {
        const Vector u = es.eigenvectors().col(d - 1 - l);
        for (Index k = 0; k < ds.n_envs(); ++k) z[static_cast<std::size_t>(k)].row(l) = u.transpose() * res[static_cast<std::size_t>(k)];
    }
    return z;
}

inline LinearModel initial_linear_model(const MultiEnvDataset& ds, Index p, std::uint64_t seed) {
    LinearModel m = LinearModel::zeros(ds.n_vars(), p, ds.n_envs(), ds.n_steps());
    m.z = spectral_latent_init(ds, p);
    RandomStream rng = RandomStream(seed).split(0x2a);
    for (auto& zk : m.z)
        for (Index t = 0; t < zk.cols(); ++t)
            for (Index l = 0; l < zk.rows(); ++l) zk(l, t) += rng.normal(0.0, 0.01);
    return m;
}

namespace linear_detail {

inline double inner(const LinearModel& a, const LinearModel& b, bool weights, bool latents) {
    double s = 0.0;
    if (weights) {
        s += (a.w0.array() * b.w0.array()).sum();
        for (std::size_t k = 0; k < a.wk.size(); ++k) s += (a.wk[k].array() * b.wk[k].array()).sum();
    }
    if (latents)
        for (std::size_t k = 0; k < a.z.size(); ++k) s += (a.z[k].array() * b.z[k].array()).sum();
    return s;
}

inline LinearModel difference(const LinearModel& a, const LinearModel& b) {
    LinearModel d = a;
    d.w0 -= b.w0;
    for (std::size_t k = 0; k < d.wk.size(); ++k) d.wk[k] -= b.wk[k];
    for (std::size_t k = 0; k < d.z.size(); ++k) d.z[k] -= b.z[k];
    return d;
}

}  // namespace linear_detail

/// Monotone proximal gradient with backtracking, alternating between the
/// weight block (w0, wk) and the latent block z, each with its own step.
/// A trial step is accepted once the quadratic upper bound on the smooth part
/// holds, which makes every block update non-increasing in the objective.
inline LinearFit fit_linear(const MultiEnvDataset& ds, HyperParams hp, std::uint64_t seed,
                            const LinearModel* warm_start = nullptr) {
    hp = resolve_defaults(hp, ds.n_steps());
    validate(hp);
    LinearFit fit;
    fit.model = warm_start ? *warm_start : initial_linear_model(ds, hp.n_latents, seed);
    linear_detail::check_shapes(fit.model, ds);

    double f_cur = rss(fit.model, ds);
    double obj = f_cur + penalty(fit.model, hp);
    if (!std::isfinite(obj)) throw DivergenceError("non-finite initial objective", 0);
    fit.trace.push_back(obj);

    double step_w = hp.step_init, step_z = hp.step_init;
    constexpr int kMaxBacktracks = 200;

    // One backtracked prox-gradient step on the selected block.
    auto block_step = [&](bool weights, double& step, std::size_t iter) {
        const LinearModel grad = smooth_gradient(fit.model, ds);
        const bool has_block = weights || fit.model.n_latents() > 0;
        if (!has_block) return;
        step = std::min(step / hp.backtrack, 1e12);
        for (int bt = 0; bt <= kMaxBacktracks; ++bt) {
            LinearModel trial = fit.model;
            if (weights) {
                trial.w0 -= step * grad.w0;
                for (std::size_t k = 0; k < trial.wk.size(); ++k) trial.wk[k] -= step * grad.wk[k];
                trial = prox_weights(std::move(trial), step, hp);
            } else {
                for (std::size_t k = 0; k < trial.z.size(); ++k) trial.z[k] -= step * grad.z[k];
                prox_latents(trial.z, step, hp.lambda_z);
            }
            const double f_trial = rss(trial, ds);
            if (!std::isfinite(f_trial)) {
                step *= hp.backtrack;
                continue;
            }
            const LinearModel delta = linear_detail::difference(trial, fit.model);
            const double lin = linear_detail::inner(grad, delta, weights, !weights);
            const double quad = linear_detail::inner(delta, delta, weights, !weights) / (2.0 * step);
            const double slack = 1e-13 * std::abs(f_cur);
            if (f_trial <= f_cur + lin + quad + slack) {
                fit.model = std::move(trial);
                f_cur = f_trial;
                return;
            }
            step *= hp.backtrack;
        }
        throw DivergenceError(std::string("no decrease within ") + std::to_string(kMaxBacktracks) + " backtracks on the " +
                                  (weights ? "weight" : "latent") + " block",
                              iter);
    };

    for (std::size_t it = 1; it <= hp.max_iters; ++it) {
        block_step(true, step_w, it);
        block_step(false, step_z, it);
        const double next = f_cur + penalty(fit.model, hp);
        if (!std::isfinite(next)) throw DivergenceError("non-finite objective", it);
        fit.trace.push_back(next);
        fit.iterations = it;
        const double change = std::abs(obj - next) / std::max(1.0, std::abs(obj));
        obj = next;
        if (change < hp.tol) {
            fit.converged = true;
            break;
        }
    }
    fit.step_w = step_w;
    fit.step_z = step_z;
    return fit;
}

}  // namespace invargc
