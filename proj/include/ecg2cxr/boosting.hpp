#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecg2cxr/common.hpp"
#include "ecg2cxr/features.hpp"

namespace ecg2cxr {

// ---------------------------------------------------------------------------
// Configuration and model types
// ---------------------------------------------------------------------------

struct BoostConfig {
    int rounds = 1000;
    double learning_rate = 0.3;
    double l2_reg = 1.0;           // lambda
    double min_split_gain = 0.0;   // gamma
    double min_child_hessian = 1.0;
    // With exact greedy splits and the fixed tie order (lowest feature index,
    // then lowest threshold, default left first) training is deterministic;
    // the seed is retained for config fidelity.
    std::uint64_t seed = 42;
};

// Depth-1 regression tree. Rows with the feature present go left iff
// value < threshold; rows with it missing follow default_left.
struct Stump {
    int feature = -1;
    double threshold = 0.0;
    double left_value = 0.0;   // logit contribution, learning rate folded in
    double right_value = 0.0;
    bool default_left = true;
    double gain = 0.0;
};

struct StumpEnsemble {
    double base_score = 0.5;  // probability; its logit seeds the margin
    std::vector<Stump> stumps;
    std::vector<std::string> feature_names;
    BoostConfig config;

    double base_margin() const { return logit(base_score); }

    double stump_contribution(const Stump& s, std::span<const double> row) const {
        const double x = row[static_cast<std::size_t>(s.feature)];
        if (is_missing(x)) return s.default_left ? s.left_value : s.right_value;
        return x < s.threshold ? s.left_value : s.right_value;
    }

    double margin(std::span<const double> row) const {
        if (row.size() != feature_names.size())
            throw DataError("prediction row arity " + std::to_string(row.size()) +
                            " does not match model arity " + std::to_string(feature_names.size()));
        double m = base_margin();
        for (const Stump& s : stumps) m += stump_contribution(s, row);
        return m;
    }

    double predict_proba(std::span<const double> row) const { return sigmoid(margin(row)); }

    // Total realized split gain per feature; zero for features never split.
    std::vector<double> feature_importance() const {
        std::vector<double> imp(feature_names.size(), 0.0);
        for (const Stump& s : stumps) imp[static_cast<std::size_t>(s.feature)] += s.gain;
        return imp;
    }
};

inline std::vector<double> predict_margins(const StumpEnsemble& model, const FeatureMatrix& m) {
    if (m.feature_names != model.feature_names)
        throw DataError("feature matrix columns do not match model feature_names");
    std::vector<double> out;
    out.reserve(m.n_rows);
    for (std::size_t r = 0; r < m.n_rows; ++r) out.push_back(model.margin(m.row(r)));
    return out;
}

inline std::vector<double> predict_probas(const StumpEnsemble& model, const FeatureMatrix& m) {
    auto out = predict_margins(model, m);
    for (double& v : out) v = sigmoid(v);
    return out;
}

// ---------------------------------------------------------------------------
// Exact greedy split search
// ---------------------------------------------------------------------------

// Per-column presorted view, built once per matrix and reused every round.
struct SortedColumns {
    struct Column {
        std::vector<std::uint32_t> rows;   // rows with the value present, ascending by value
        std::vector<double> values;        // aligned with rows
        std::vector<std::uint32_t> missing_rows;
    };
    std::vector<Column> columns;
    std::size_t n_rows = 0;

    explicit SortedColumns(const FeatureMatrix& m) : n_rows(m.n_rows) {
        columns.resize(m.n_cols());
        for (std::size_t c = 0; c < m.n_cols(); ++c) {
            Column& col = columns[c];
            for (std::size_t r = 0; r < m.n_rows; ++r) {
                const double v = m.at(r, c);
                if (is_missing(v))
                    col.missing_rows.push_back(static_cast<std::uint32_t>(r));
                else
                    col.rows.push_back(static_cast<std::uint32_t>(r));
            }
            std::stable_sort(col.rows.begin(), col.rows.end(),
                             [&](std::uint32_t a, std::uint32_t b) { return m.at(a, c) < m.at(b, c); });
            col.values.reserve(col.rows.size());
            for (std::uint32_t r : col.rows) col.values.push_back(m.at(r, c));
        }
    }
};

namespace detail {

inline double split_gain(double gl, double hl, double gr, double hr, const BoostConfig& cfg) {
    return 0.5 * (gl * gl / (hl + cfg.l2_reg) + gr * gr / (hr + cfg.l2_reg) -
                  (gl + gr) * (gl + gr) / (hl + hr + cfg.l2_reg)) -
           cfg.min_split_gain;
}

}  // namespace detail

// Second-order best-stump search: every feature, every threshold midway
// between consecutive distinct observed values, both default sides for the
// missing rows. Candidates where either side's hessian sum falls below
// min_child_hessian are infeasible. Ties keep the first candidate in scan
// order (lowest feature, lowest threshold, default left before right).
// Returns nothing when no feasible candidate has positive gain.
inline std::optional<Stump> fit_best_stump(const SortedColumns& sorted, std::span<const double> g,
                                           std::span<const double> h, const BoostConfig& cfg) {
    double g_total = 0.0, h_total = 0.0;
    for (std::size_t r = 0; r < sorted.n_rows; ++r) {
        g_total += g[r];
        h_total += h[r];
    }

    std::optional<Stump> best;
    double best_gain = 0.0;
    for (std::size_t c = 0; c < sorted.columns.size(); ++c) {
        const auto& col = sorted.columns[c];
        if (col.rows.size() < 2) continue;
        double g_miss = 0.0, h_miss = 0.0;
        for (std::uint32_t r : col.missing_rows) {
            g_miss += g[r];
            h_miss += h[r];
        }
        const double g_present = g_total - g_miss;
        const double h_present = h_total - h_miss;

        double g_left = 0.0, h_left = 0.0;
        for (std::size_t i = 0; i + 1 < col.rows.size(); ++i) {
            g_left += g[col.rows[i]];
            h_left += h[col.rows[i]];
            if (col.values[i] == col.values[i + 1]) continue;
            double threshold = col.values[i] + (col.values[i + 1] - col.values[i]) / 2.0;
            // Adjacent representable values can round the midpoint onto the
            // lower value; keep the threshold strictly above it so the sorted
            // partition and the "x < threshold goes left" rule agree.
            if (!(threshold > col.values[i])) threshold = col.values[i + 1];
            const double g_right = g_present - g_left;
            const double h_right = h_present - h_left;
            for (int side = 0; side < 2; ++side) {
                const bool default_left = side == 0;
                const double gl = g_left + (default_left ? g_miss : 0.0);
                const double hl = h_left + (default_left ? h_miss : 0.0);
                const double gr = g_right + (default_left ? 0.0 : g_miss);
                const double hr = h_right + (default_left ? 0.0 : h_miss);
                if (hl < cfg.min_child_hessian || hr < cfg.min_child_hessian) continue;
                if (!(hl + cfg.l2_reg > 0.0) || !(hr + cfg.l2_reg > 0.0)) continue;
                const double gain = detail::split_gain(gl, hl, gr, hr, cfg);
                if (gain > best_gain) {
                    best_gain = gain;
                    Stump s;
                    s.feature = static_cast<int>(c);
                    s.threshold = threshold;
                    s.left_value = -gl / (hl + cfg.l2_reg) * cfg.learning_rate;
                    s.right_value = -gr / (hr + cfg.l2_reg) * cfg.learning_rate;
                    s.default_left = default_left;
                    s.gain = gain;
                    best = s;
                }
            }
        }
    }
    return best;
}

inline std::optional<Stump> fit_best_stump(const FeatureMatrix& m, std::span<const double> g,
                                           std::span<const double> h, const BoostConfig& cfg) {
    if (g.size() != m.n_rows || h.size() != m.n_rows)
        throw DataError("gradient/hessian length does not match matrix rows");
    return fit_best_stump(SortedColumns(m), g, h, cfg);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Per-round log-loss; index 0 is the base-score model, index r the model
// after r rounds. Rounds with no admissible split still count.
struct TrainTrace {
    std::vector<double> train_loss;
    std::vector<double> valid_loss;  // empty when no watch set was given
};

namespace detail {

inline double log_loss(std::span<const double> margins, std::span<const std::uint8_t> y) {
    double sum = 0.0;
    for (std::size_t i = 0; i < margins.size(); ++i) {
        double p = sigmoid(margins[i]);
        p = std::min(1.0 - 1e-15, std::max(1e-15, p));
        sum += y[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return sum / static_cast<double>(margins.size());
}

}  // namespace detail

struct WatchSet {
    const FeatureMatrix* matrix = nullptr;
    std::span<const std::uint8_t> labels;
};

inline StumpEnsemble train(const FeatureMatrix& m, std::span<const std::uint8_t> labels,
                           const BoostConfig& cfg, const WatchSet* watch = nullptr,
                           TrainTrace* trace = nullptr) {
    if (labels.size() != m.n_rows) throw DataError("label vector length does not match matrix rows");
    if (cfg.rounds < 1) throw ConfigError("boosting rounds must be >= 1");
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");

    std::size_t n_pos = 0;
    for (std::uint8_t y : labels) {
        if (y > 1) throw DataError("labels must be 0 or 1");
        n_pos += y;
    }
    if (n_pos == 0 || n_pos == labels.size()) throw DataError("degenerate target: single-class labels");

    StumpEnsemble model;
    model.base_score = static_cast<double>(n_pos) / static_cast<double>(labels.size());
    model.feature_names = m.feature_names;
    model.config = cfg;

    const SortedColumns sorted(m);
    const double base = model.base_margin();
    std::vector<double> margins(m.n_rows, base);
    std::vector<double> watch_margins;
    if (watch) {
        if (watch->matrix->feature_names != m.feature_names)
            throw DataError("watch set columns do not match training columns");
        watch_margins.assign(watch->matrix->n_rows, base);
    }

    if (trace) {
        trace->train_loss.clear();
        trace->valid_loss.clear();
        trace->train_loss.push_back(detail::log_loss(margins, labels));
        if (watch) trace->valid_loss.push_back(detail::log_loss(watch_margins, watch->labels));
    }

    std::vector<double> g(m.n_rows), h(m.n_rows);
    for (int round = 0; round < cfg.rounds; ++round) {
        for (std::size_t i = 0; i < m.n_rows; ++i) {
            const double p = sigmoid(margins[i]);
            g[i] = p - static_cast<double>(labels[i]);
            h[i] = p * (1.0 - p);
        }
        auto stump = fit_best_stump(sorted, g, h, cfg);
        if (!stump) {
            // Margins are now fixed, so no later round can split either; the
            // remaining rounds only repeat the current loss.
            if (trace) {
                const double tl = trace->train_loss.back();
                const double vl = watch ? trace->valid_loss.back() : 0.0;
                for (int r = round; r < cfg.rounds; ++r) {
                    trace->train_loss.push_back(tl);
                    if (watch) trace->valid_loss.push_back(vl);
                }
            }
            break;
        }
        model.stumps.push_back(*stump);
        for (std::size_t i = 0; i < m.n_rows; ++i)
            margins[i] += model.stump_contribution(*stump, m.row(i));
        if (watch)
            for (std::size_t i = 0; i < watch_margins.size(); ++i)
                watch_margins[i] += model.stump_contribution(*stump, watch->matrix->row(i));
        if (trace) {
            trace->train_loss.push_back(detail::log_loss(margins, labels));
            if (watch) trace->valid_loss.push_back(detail::log_loss(watch_margins, watch->labels));
        }
    }
    return model;
}

}  // namespace ecg2cxr
