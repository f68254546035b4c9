#pragma once

#include "invargc/analysis.hpp"
#include "invargc/baseline.hpp"
#include "invargc/dataset.hpp"
#include "invargc/json_io.hpp"
#include "invargc/metrics.hpp"
#include "invargc/serialize.hpp"

#include <algorithm>
#include <optional>
#include <vector>

namespace invargc {

/// Everything the eval command reports for one fitted model against its truth.
struct EvalReport {
    EdgeScores edges;
    GraphMetrics graph;
    std::optional<InterventionScores> interventions;
    std::optional<double> intervention_auroc;
    std::optional<AlignmentReport> alignment;
    std::optional<double> latent_correlation;  // median over environments
    ThresholdRule rule;
};

namespace report_detail {

inline std::optional<double> intervention_auroc(const InterventionScores& iv, const GroundTruth& truth) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t k = 0; k < iv.scores.size(); ++k)
        for (Index j = 0; j < iv.scores[k].rows(); ++j)
            for (Index i = 0; i < iv.scores[k].cols(); ++i) {
                s.push_back(iv.scores[k](j, i));
                l.push_back(truth.intervention_mask[k](j, i) != 0 ? 1 : 0);
            }
    try {
        return auroc(ScoredLabels(std::move(s), std::move(l)));
    } catch (const UndefinedMetricError&) {
        return std::nullopt;
    }
}

inline std::optional<double> median(std::vector<double> v) {
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void check_truth_shapes(Index d, Index n_envs, Index n_inputs, const GroundTruth& truth) {
    require_shape(truth.n_vars() == d, "model and truth disagree on the number of variables");
    require_shape(truth.n_envs() == n_envs, "model and truth disagree on the number of environments");
    for (const auto& zs : truth.latent_series)
        require_shape(zs.cols() == 0 || zs.cols() >= n_inputs, "truth latent series is shorter than the model's");
}

}  // namespace report_detail

template <class Model>
EvalReport evaluate_model(const Model& m, const GroundTruth& truth, const ThresholdRule& rule = {}) {
    report_detail::check_truth_shapes(m.n_vars(), m.n_envs(), m.z.empty() ? 0 : m.z.front().cols(), truth);
    EvalReport r;
    r.rule = rule;
    r.edges = edge_scores(m);
    r.graph = evaluate_graph(r.edges.scores, truth.adjacency);
    r.interventions = intervention_scores(m);
    r.intervention_auroc = report_detail::intervention_auroc(*r.interventions, truth);
    const Index p = m.z.empty() ? 0 : m.z.front().rows();
    if (p > 0 && truth.n_latents() > 0) {
        std::vector<Matrix> tz;
        for (const auto& zs : truth.latent_series) tz.push_back(zs.leftCols(m.z.front().cols()));
        r.alignment = latent_alignment(m.z, tz);
        std::vector<double> corr;
        for (const auto& e : r.alignment->envs)
            if (e.best_abs_correlation) corr.push_back(*e.best_abs_correlation);
        r.latent_correlation = report_detail::median(corr);
    }
    return r;
}

inline EvalReport evaluate_model(const AnyModel& m, const GroundTruth& truth, const ThresholdRule& rule = {}) {
    return std::visit([&](const auto& model) { return evaluate_model(model, truth, rule); }, m);
}

inline EvalReport evaluate_baseline(const BaselineModel& m, const GroundTruth& truth, const ThresholdRule& rule = {}) {
    require_shape(truth.n_vars() == m.coef.rows(), "model and truth disagree on the number of variables");
    EvalReport r;
    r.rule = rule;
    r.edges = baseline_edge_scores(m);
    r.graph = evaluate_graph(r.edges.scores, truth.adjacency);
    return r;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const EvalReport& r, const GroundTruth& truth) {
    Json j;
    j["version"] = kVersion;
    j["edge_scores"] = json_io::matrix_to_json(r.edges.scores);
    j["auroc"] = r.graph.auroc;
    j["auprc"] = r.graph.auprc;
    j["thresholds"] = Json{{"rule", r.rule.kind == ThresholdRule::Kind::Relative ? "relative" : "absolute"},
                           {"value", r.rule.value}};
    const Eigen::MatrixXi graph = binarize(r.edges.scores, r.rule);
    j["binarized_graph"] = json_io::matrix_to_json(graph);
    if (r.interventions) {
        j["intervention_scores"] = json_io::stack_to_json(r.interventions->scores);
        Json totals = Json::array();
        for (Index k = 0; k < static_cast<Index>(r.interventions->scores.size()); ++k) totals.push_back(r.interventions->env_total(k));
        j["intervention_env_totals"] = std::move(totals);
        j["intervention_auroc"] = optional_json(r.intervention_auroc);
        const auto flagged = binarize(r.interventions->scores, r.rule);
        j["binarized_interventions"] = json_io::stack_to_json(flagged);
        j["node_level_calls"] = json_io::matrix_to_json(node_level_calls(flagged, graph));
    }
    if (r.alignment) {
        Json envs = Json::array();
        for (const auto& e : r.alignment->envs) {
            Json ej;
            ej["principal_angles"] = e.principal_angles ? Json(*e.principal_angles) : Json(nullptr);
            ej["best_abs_correlation"] = optional_json(e.best_abs_correlation);
            envs.push_back(std::move(ej));
        }
        j["latent_alignment"] = Json{{"envs", std::move(envs)}, {"median_best_abs_correlation", optional_json(r.latent_correlation)}};
    } else {
        j["latent_alignment"] = nullptr;
    }
    j["truth"] = Json{{"n_vars", truth.n_vars()}, {"n_envs", truth.n_envs()}, {"n_latents", truth.n_latents()},
                      {"n_edges", truth.adjacency.sum()}};
    return j;
}

}  // namespace invargc
