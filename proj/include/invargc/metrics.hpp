#pragma once

#include "invargc/common.hpp"

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

namespace invargc {

/// Scores paired with binary labels, as produced by flattening an edge-score
/// matrix and the matching adjacency.
struct ScoredLabels {
    std::vector<double> scores;
    std::vector<int> labels;

    ScoredLabels() = default;
    ScoredLabels(std::vector<double> s, std::vector<int> l) : scores(std::move(s)), labels(std::move(l)) {
        require(scores.size() == labels.size(), "scores and labels differ in length");
        require(!scores.empty(), "need at least one scored label");
        for (int v : labels) require(v == 0 || v == 1, "labels must be 0 or 1");
    }

    std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }
    std::size_t negatives() const { return labels.size() - positives(); }
};

namespace metrics_detail {

// Indices sorted by descending score.
inline std::vector<std::size_t> order_desc(const std::vector<double>& s) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    return idx;
}

}  // namespace metrics_detail

/// Mann-Whitney AUROC via midranks: P(pos > neg) + 0.5 P(tie).
inline double auroc(const ScoredLabels& sl) {
    const std::size_t n_pos = sl.positives(), n_neg = sl.negatives();
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUROC needs both positive and negative labels");
    const std::size_t n = sl.scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sl.scores[a] < sl.scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && sl.scores[idx[j + 1]] == sl.scores[idx[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t m = i; m <= j; ++m)
            if (sl.labels[idx[m]] == 1) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Average precision (step-wise, no interpolation). Tied scores form one
/// threshold, so a tie group contributes its precision once.
inline double auprc(const ScoredLabels& sl) {
    const std::size_t n_pos = sl.positives();
    if (n_pos == 0) throw UndefinedMetricError("AUPRC needs at least one positive label");
    const auto idx = metrics_detail::order_desc(sl.scores);
    double ap = 0.0;
    std::size_t tp = 0, seen = 0, i = 0;
    while (i < idx.size()) {
        std::size_t j = i, group_pos = 0;
        while (j < idx.size() && sl.scores[idx[j]] == sl.scores[idx[i]]) {
            group_pos += sl.labels[idx[j]] == 1 ? 1 : 0;
            ++j;
        }
        tp += group_pos;
        seen = j;
        if (group_pos > 0)
            ap += (static_cast<double>(tp) / static_cast<double>(seen)) * (static_cast<double>(group_pos) / static_cast<double>(n_pos));
        i = j;
    }
    return ap;
}

/// Row-major flattening of a score matrix against a same-shaped 0/1 matrix.
template <class ScoreDerived, class LabelDerived>
ScoredLabels flatten(const Eigen::MatrixBase<ScoreDerived>& scores, const Eigen::MatrixBase<LabelDerived>& labels) {
    require_shape(scores.rows() == labels.rows() && scores.cols() == labels.cols(), "score and label shapes differ");
    std::vector<double> s;
    std::vector<int> l;
    for (Index r = 0; r < scores.rows(); ++r)
        for (Index c = 0; c < scores.cols(); ++c) {
            s.push_back(static_cast<double>(scores(r, c)));
            l.push_back(labels(r, c) != 0 ? 1 : 0);
        }
    return ScoredLabels(std::move(s), std::move(l));
}

struct GraphMetrics {
    double auroc = 0.0;
    double auprc = 0.0;
};

inline GraphMetrics evaluate_graph(const Matrix& scores, const Eigen::MatrixXi& adjacency) {
    const ScoredLabels sl = flatten(scores, adjacency);
    return {auroc(sl), auprc(sl)};
}

}  // namespace invargc
