#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "ecg2cxr/boosting.hpp"
#include "ecg2cxr/common.hpp"
#include "ecg2cxr/features.hpp"
#include "ecg2cxr/metrics.hpp"

namespace ecg2cxr {

// ---------------------------------------------------------------------------
// Recursive feature elimination, one feature per step.
// ---------------------------------------------------------------------------

struct RfeStep {
    std::vector<std::string> active;  // features trained at this step
    double validation_auroc = 0.0;
    std::string dropped;  // empty on the final step
};

struct RfeTrace {
    std::vector<RfeStep> steps;
    std::vector<std::string> selected;
    double selected_auroc = 0.0;
};

// Loop: train on the active set, record validation AUROC, drop the feature
// with minimal total-gain importance (ties drop the later column, keeping
// earlier-listed features), until min_features remain. The selected set is
// the step with maximal validation AUROC; on ties the smaller set wins.
// Deterministic: a pure function of the inputs and config.
inline RfeTrace run_rfe(const FeatureMatrix& train_matrix, std::span<const std::uint8_t> y_train,
                        const FeatureMatrix& valid_matrix, std::span<const std::uint8_t> y_valid,
                        const BoostConfig& cfg, int min_features = 1) {
    if (min_features < 1) throw ConfigError("min_features must be >= 1");
    if (static_cast<std::size_t>(min_features) > train_matrix.n_cols())
        throw ConfigError("min_features exceeds the number of features");
    auto has_both = [](std::span<const std::uint8_t> y) {
        bool p = false, n = false;
        for (auto v : y) (v ? p : n) = true;
        return p && n;
    };
    if (!has_both(y_train) || !has_both(y_valid))
        throw DataError("degenerate fold labels: RFE needs both classes in train and validation");

    RfeTrace trace;
    std::vector<std::string> active = train_matrix.feature_names;
    while (true) {
        const FeatureMatrix tr = select_columns(train_matrix, active);
        const FeatureMatrix va = select_columns(valid_matrix, active);
        const StumpEnsemble model = train(tr, y_train, cfg);
        const auto scores = predict_margins(model, va);
        const auto val_auroc = auroc(scores, y_valid);
        if (!val_auroc) throw DataError("degenerate fold labels: undefined validation AUROC");

        RfeStep step;
        step.active = active;
        step.validation_auroc = *val_auroc;

        if (active.size() == static_cast<std::size_t>(min_features)) {
            trace.steps.push_back(std::move(step));
            break;
        }
        const auto importance = model.feature_importance();
        std::size_t drop = 0;
        for (std::size_t f = 1; f < active.size(); ++f)
            if (importance[f] <= importance[drop]) drop = f;  // <= keeps the later column on ties
        step.dropped = active[drop];
        trace.steps.push_back(std::move(step));
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(drop));
    }

    std::size_t best = 0;
    for (std::size_t s = 1; s < trace.steps.size(); ++s)
        if (trace.steps[s].validation_auroc >= trace.steps[best].validation_auroc)
            best = s;  // >= prefers the later (smaller) set on exact ties
    trace.selected = trace.steps[best].active;
    trace.selected_auroc = trace.steps[best].validation_auroc;
    return trace;
}

}  // namespace ecg2cxr
