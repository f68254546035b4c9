#pragma once

#include "invargc/common.hpp"
#include "invargc/linear.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>
#include <optional>
#include <variant>
#include <vector>

namespace invargc {

/// d x d non-negative matrix; entry (j, i) is the strength of j -> i.
struct EdgeScores {
    Matrix scores;
};

/// N x (d x d) non-negative tensor; entry [k](j, i) scores an intervention on
/// j -> i in environment k.
struct InterventionScores {
    std::vector<Matrix> scores;

    double env_total(Index k) const { return scores.at(static_cast<std::size_t>(k)).sum(); }
};

/// Group-norm edge statistic ||(w0(i,j), wk[0](i,j), ..., wk[N-1](i,j))||_2.
inline EdgeScores edge_scores(const LinearModel& m) {
    const Index d = m.n_vars();
    Matrix s(d, d);
    for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < d; ++i) {
            double sq = m.w0(i, j) * m.w0(i, j);
            for (const auto& w : m.wk) sq += w(i, j) * w(i, j);
            s(j, i) = std::sqrt(sq);
        }
    return {s};
}

inline InterventionScores intervention_scores(const LinearModel& m) {
    InterventionScores out;
    for (const auto& w : m.wk) out.scores.push_back(w.transpose().cwiseAbs());
    return out;
}

/// Threshold rule: absolute (score > tau) or relative (score > c * max).
struct ThresholdRule {
    enum class Kind { Absolute, Relative } kind = Kind::Relative;
    double value = 0.1;

    static ThresholdRule absolute(double tau) { return {Kind::Absolute, tau}; }
    static ThresholdRule relative(double c) { return {Kind::Relative, c}; }
};

namespace analysis_detail {

inline double cutoff(double max_score, const ThresholdRule& rule) {
    return rule.kind == ThresholdRule::Kind::Absolute ? rule.value : rule.value * max_score;
}

}  // namespace analysis_detail

inline Eigen::MatrixXi binarize(const Matrix& scores, const ThresholdRule& rule = {}) {
    const double cut = analysis_detail::cutoff(scores.size() ? scores.maxCoeff() : 0.0, rule);
    Eigen::MatrixXi out = (scores.array() > cut).cast<int>();
    if (rule.kind == ThresholdRule::Kind::Relative && !(scores.size() && scores.maxCoeff() > 0.0)) out.setZero();
    return out;
}

/// Binarizes a tensor with one cutoff computed over all of its entries, so a
/// quiet environment is compared against the loudest one.
inline std::vector<Eigen::MatrixXi> binarize(const std::vector<Matrix>& scores, const ThresholdRule& rule = {}) {
    double mx = 0.0;
    for (const auto& s : scores)
        if (s.size()) mx = std::max(mx, s.maxCoeff());
    const double cut = analysis_detail::cutoff(mx, rule);
    std::vector<Eigen::MatrixXi> out;
    for (const auto& s : scores) {
        Eigen::MatrixXi b = (s.array() > cut).cast<int>();
        if (rule.kind == ThresholdRule::Kind::Relative && !(mx > 0.0)) b.setZero();
        out.push_back(std::move(b));
    }
    return out;
}

/// N x d matrix: (k, i) = 1 iff the flagged intervened parents of i in
/// environment k equal its full (non-empty) discovered parent set.
inline Eigen::MatrixXi node_level_calls(const std::vector<Eigen::MatrixXi>& flagged, const Eigen::MatrixXi& graph) {
    const Index d = graph.rows();
    Eigen::MatrixXi calls = Eigen::MatrixXi::Zero(static_cast<Index>(flagged.size()), d);
    for (std::size_t k = 0; k < flagged.size(); ++k) {
        require_shape(flagged[k].rows() == d && flagged[k].cols() == d, "intervention flags must be d x d");
        for (Index i = 0; i < d; ++i) {
            const auto parents = graph.col(i);
            if (!parents.any()) continue;
            bool same = true;
            for (Index j = 0; j < d && same; ++j) same = (parents(j) != 0) == (flagged[k](j, i) != 0);
            calls(static_cast<Index>(k), i) = same ? 1 : 0;
        }
    }
    return calls;
}

inline Eigen::MatrixXi node_level_calls(const InterventionScores& iv, const Eigen::MatrixXi& graph,
                                        const ThresholdRule& rule = {}) {
    return node_level_calls(binarize(iv.scores, rule), graph);
}

struct EnvAlignment {
    std::optional<std::vector<double>> principal_angles;  // radians, ascending; nullopt when undefined
    std::optional<double> best_abs_correlation;           // only when the true latent dimension is 1
};

struct AlignmentReport {
    std::vector<EnvAlignment> envs;
};

namespace analysis_detail {

// Centered trajectory matrix (time x latent) with zero-variance columns dropped.
inline Matrix centered_columns(const Matrix& latent_by_time) {
    Matrix x = latent_by_time.transpose();
    std::vector<Index> keep;
    for (Index c = 0; c < x.cols(); ++c) {
        x.col(c).array() -= x.col(c).mean();
        if (x.col(c).norm() > 1e-12 * std::sqrt(static_cast<double>(x.rows()))) keep.push_back(c);
    }
    Matrix out(x.rows(), static_cast<Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) out.col(static_cast<Index>(c)) = x.col(keep[c]);
    return out;
}

inline Matrix orthonormal_basis(const Matrix& x) {
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    const Index rank = qr.rank();
    Matrix q = qr.householderQ() * Matrix::Identity(x.rows(), rank);
    return q;
}

}  // namespace analysis_detail

/// Compares learned and true latent trajectories per environment by the
/// principal angles between their (mean-removed) column spans. For a single
/// true latent, also reports |corr| between it and its least-squares fit from
/// the learned trajectories. Degenerate (zero-variance) inputs give nullopt.
inline AlignmentReport latent_alignment(const std::vector<Matrix>& model_z, const std::vector<Matrix>& true_z) {
    require_shape(model_z.size() == true_z.size(), "latent alignment: environment counts differ");
    AlignmentReport rep;
    for (std::size_t k = 0; k < model_z.size(); ++k) {
        require_shape(model_z[k].cols() == true_z[k].cols(), "latent alignment: trajectory lengths differ");
        EnvAlignment env;
        const Matrix a = analysis_detail::centered_columns(model_z[k]);
        const Matrix b = analysis_detail::centered_columns(true_z[k]);
        const bool true_degenerate = b.cols() < true_z[k].rows() || b.cols() == 0;
        if (a.cols() > 0 && !true_degenerate) {
            const Matrix qa = analysis_detail::orthonormal_basis(a);
            const Matrix qb = analysis_detail::orthonormal_basis(b);
            Eigen::JacobiSVD<Matrix> svd(qa.transpose() * qb);
            std::vector<double> angles;
            const Vector sv = svd.singularValues();
            for (Index s = 0; s < sv.size(); ++s) angles.push_back(std::acos(std::clamp(sv(s), -1.0, 1.0)));
            std::sort(angles.begin(), angles.end());
            env.principal_angles = angles;
            if (true_z[k].rows() == 1) {
                const Vector y = b.col(0);
                const Vector fitted = qa * (qa.transpose() * y);
                const double denom = fitted.norm() * y.norm();
                if (denom > 0.0) env.best_abs_correlation = std::abs(fitted.dot(y)) / denom;
                else env.best_abs_correlation = 0.0;
            }
        }
        rep.envs.push_back(std::move(env));
    }
    return rep;
}

}  // namespace invargc
