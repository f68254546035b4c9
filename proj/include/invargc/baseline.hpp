#pragma once

#include "invargc/analysis.hpp"
#include "invargc/common.hpp"
#include "invargc/dataset.hpp"
#include "invargc/prox.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace invargc {

/// Pooled lasso VAR(1): coef(i, j) is the coefficient of X^j_t for X^i_{t+1}.
struct BaselineModel {
    Matrix coef;
    double lambda = 0.0;
};

namespace baseline_detail {

// Sufficient statistics pooled over environments: G = sum X X^T, C = sum Y X^T.
struct Gram {
    Matrix xx;
    Matrix yx;
    Vector yy;
    double n = 0.0;
};

inline Gram gram(const MultiEnvDataset& ds) {
    const Index d = ds.n_vars();
    Gram g{Matrix::Zero(d, d), Matrix::Zero(d, d), Vector::Zero(d), 0.0};
    for (Index k = 0; k < ds.n_envs(); ++k) {
        g.xx.noalias() += ds.inputs(k) * ds.inputs(k).transpose();
        g.yx.noalias() += ds.targets(k) * ds.inputs(k).transpose();
        g.yy += ds.targets(k).rowwise().squaredNorm();
    }
    g.n = static_cast<double>(ds.n_envs() * (ds.n_steps() - 1));
    return g;
}

inline double target_objective(const Gram& g, Index i, const RowVector& b, double lambda) {
    const double rss = g.yy(i) - 2.0 * b.dot(g.yx.row(i)) + (b * g.xx * b.transpose())(0, 0);
    return rss + lambda * b.cwiseAbs().sum();
}

inline double target_rss(const Gram& g, Index i, const RowVector& b) {
    return std::max(0.0, g.yy(i) - 2.0 * b.dot(g.yx.row(i)) + (b * g.xx * b.transpose())(0, 0));
}

// Cyclic coordinate descent for one target row, in place.
inline void solve_row(const Gram& g, Index i, RowVector& b, double lambda, std::size_t max_sweeps = 100000) {
    const Index d = b.size();
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Index j = 0; j < d; ++j) {
            const double a = g.xx(j, j);
            if (a <= 0.0) {
                b(j) = 0.0;
                continue;
            }
            // Partial residual correlation excluding coordinate j.
            const double rho = g.yx(i, j) - b.dot(g.xx.row(j)) + b(j) * a;
            const double next = prox::soft_threshold(rho, 0.5 * lambda) / a;
            max_change = std::max(max_change, std::abs(next - b(j)));
            b(j) = next;
        }
        if (max_change < 1e-8) return;
    }
}

}  // namespace baseline_detail

/// Minimizes sum (X_{t+1}^i - B^i X_t)^2 + lambda * sum |B| over all
/// environments pooled, by cyclic coordinate descent.
inline BaselineModel fit_var_lasso(const MultiEnvDataset& ds, double lambda) {
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
    const auto g = baseline_detail::gram(ds);
    BaselineModel m{Matrix::Zero(ds.n_vars(), ds.n_vars()), lambda};
    for (Index i = 0; i < ds.n_vars(); ++i) {
        RowVector b = RowVector::Zero(ds.n_vars());
        if (std::isfinite(lambda)) baseline_detail::solve_row(g, i, b, lambda);
        m.coef.row(i) = b;
    }
    return m;
}

/// Smallest lambda that zeroes every coefficient.
inline double var_lasso_lambda_max(const MultiEnvDataset& ds) {
    const auto g = baseline_detail::gram(ds);
    return 2.0 * g.yx.cwiseAbs().maxCoeff();
}

/// Picks lambda per target row by BIC over a geometric path from lambda_max
/// down to 1e-4 * lambda_max, warm-starting each point from the previous one.
inline BaselineModel fit_var_lasso_bic(const MultiEnvDataset& ds, int path_length = 50) {
    require(path_length >= 2, "path_length must be at least 2");
    const auto g = baseline_detail::gram(ds);
    const Index d = ds.n_vars();
    const double lmax = 2.0 * g.yx.cwiseAbs().maxCoeff();
    BaselineModel best{Matrix::Zero(d, d), lmax};
    if (!(lmax > 0.0)) return best;
    double chosen_sum = 0.0;
    for (Index i = 0; i < d; ++i) {
        RowVector b = RowVector::Zero(d);
        RowVector best_b = b;
        double best_bic = std::numeric_limits<double>::infinity(), best_lambda = lmax;
        for (int s = 0; s < path_length; ++s) {
            const double lambda = lmax * std::pow(1e-4, static_cast<double>(s) / (path_length - 1));
            baseline_detail::solve_row(g, i, b, lambda);
            const double rss = baseline_detail::target_rss(g, i, b);
            const double df = static_cast<double>((b.array() != 0.0).count());
            const double bic = g.n * std::log(std::max(rss, 1e-300) / g.n) + df * std::log(g.n);
            if (bic < best_bic) {
                best_bic = bic;
                best_b = b;
                best_lambda = lambda;
            }
        }
        best.coef.row(i) = best_b;
        chosen_sum += best_lambda;
    }
    best.lambda = chosen_sum / static_cast<double>(d);
    return best;
}

inline EdgeScores baseline_edge_scores(const BaselineModel& m) { return {m.coef.transpose().cwiseAbs()}; }

}  // namespace invargc
