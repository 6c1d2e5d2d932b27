#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ecg2cxr/boosting.hpp"
#include "ecg2cxr/common.hpp"
#include "ecg2cxr/features.hpp"

namespace ecg2cxr {

// ---------------------------------------------------------------------------
// Exact Shapley attributions for stump ensembles.
//
// Every stump reads exactly one feature, so the ensemble is additive across
// features and the exact Shapley value of feature j (with background-mean
// marginalization) collapses to
//   sum over stumps on j of [leaf(row) - mean over background of leaf(b)].
// Attributions are on the logit (margin) scale, which keeps them exactly
// additive. Missing values route through default_side in both terms.
// ---------------------------------------------------------------------------

struct ShapExplanation {
    double base_value = 0.0;             // expected margin over the background
    std::vector<double> contributions;   // one per model feature
    double margin = 0.0;                 // base_value + sum(contributions)
};

// Per-stump background mean leaf values, precomputed once per (model,
// background) and shared across rows.
struct ShapBackground {
    std::vector<double> mean_leaf;  // aligned with model.stumps
    double base_value = 0.0;

    ShapBackground(const StumpEnsemble& model, const FeatureMatrix& background) {
        if (background.n_rows == 0) throw DataError("SHAP background must be non-empty");
        if (background.feature_names != model.feature_names)
            throw DataError("SHAP background columns do not match model feature_names");
        mean_leaf.reserve(model.stumps.size());
        for (const Stump& s : model.stumps) {
            double sum = 0.0;
            for (std::size_t r = 0; r < background.n_rows; ++r)
                sum += model.stump_contribution(s, background.row(r));
            mean_leaf.push_back(sum / static_cast<double>(background.n_rows));
        }
        base_value = model.base_margin();
        for (double v : mean_leaf) base_value += v;
    }
};

inline ShapExplanation explain_row(const StumpEnsemble& model, std::span<const double> row,
                                   const ShapBackground& background) {
    if (row.size() != model.feature_names.size())
        throw DataError("explanation row arity does not match model");
    ShapExplanation out;
    out.base_value = background.base_value;
    out.contributions.assign(model.feature_names.size(), 0.0);
    double margin = model.base_margin();
    for (std::size_t s = 0; s < model.stumps.size(); ++s) {
        const Stump& stump = model.stumps[s];
        const double leaf = model.stump_contribution(stump, row);
        out.contributions[static_cast<std::size_t>(stump.feature)] += leaf - background.mean_leaf[s];
        margin += leaf;
    }
    out.margin = margin;
    return out;
}

inline ShapExplanation explain_row(const StumpEnsemble& model, std::span<const double> row,
                                   const FeatureMatrix& background) {
    return explain_row(model, row, ShapBackground(model, background));
}

// ---------------------------------------------------------------------------
// Population summary (plot-ready records for beeswarm-style figures)
// ---------------------------------------------------------------------------

struct ShapRecord {
    std::size_t row = 0;
    int feature = 0;
    double value = 0.0;  // NaN when the feature was missing
    double contribution = 0.0;
};

struct ShapSummary {
    std::vector<std::string> feature_names;
    std::vector<double> mean_abs;     // per feature
    std::vector<int> rank;            // rank[f] = position, 0 = most important
    std::vector<ShapRecord> records;  // one per (row, feature)
};

inline ShapSummary summarize(const StumpEnsemble& model, const FeatureMatrix& dataset,
                             const ShapBackground& background) {
    if (dataset.n_rows == 0) throw DataError("SHAP summary dataset must be non-empty");
    if (dataset.feature_names != model.feature_names)
        throw DataError("SHAP summary columns do not match model feature_names");

    const std::size_t d = model.feature_names.size();
    ShapSummary out;
    out.feature_names = model.feature_names;
    out.mean_abs.assign(d, 0.0);
    out.records.reserve(dataset.n_rows * d);
    for (std::size_t r = 0; r < dataset.n_rows; ++r) {
        const auto ex = explain_row(model, dataset.row(r), background);
        for (std::size_t f = 0; f < d; ++f) {
            out.mean_abs[f] += std::fabs(ex.contributions[f]);
            out.records.push_back({r, static_cast<int>(f), dataset.at(r, f), ex.contributions[f]});
        }
    }
    for (double& v : out.mean_abs) v /= static_cast<double>(dataset.n_rows);

    // Rank by mean |contribution| descending, ties by feature name.
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (out.mean_abs[a] != out.mean_abs[b]) return out.mean_abs[a] > out.mean_abs[b];
        return out.feature_names[a] < out.feature_names[b];
    });
    out.rank.assign(d, 0);
    for (std::size_t pos = 0; pos < d; ++pos) out.rank[order[pos]] = static_cast<int>(pos);
    return out;
}

inline ShapSummary summarize(const StumpEnsemble& model, const FeatureMatrix& dataset,
                             const FeatureMatrix& background) {
    return summarize(model, dataset, ShapBackground(model, background));
}

}  // namespace ecg2cxr
