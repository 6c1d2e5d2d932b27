#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecg2cxr/common.hpp"
#include "ecg2cxr/rng.hpp"

namespace ecg2cxr {

// ---------------------------------------------------------------------------
// AUROC (Mann-Whitney, tie-aware, O(n log n))
// ---------------------------------------------------------------------------

// Fraction of (positive, negative) pairs with score_pos > score_neg, ties
// counted 1/2, via midranks. nullopt when only one class is present.
inline std::optional<double> auroc(std::span<const double> scores,
                                   std::span<const std::uint8_t> labels) {
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (std::uint8_t y : labels) n_pos += y;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        // Midrank of the tie run [i, j): ranks are 1-based.
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum_pos += midrank;
        i = j;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Bootstrap confidence interval
// ---------------------------------------------------------------------------

struct AurocResult {
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int n_boot = 0;
    int n_degenerate_resamples = 0;
};

namespace detail {

// Quantile with linear interpolation between order statistics (q in [0,1]).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    const std::size_t m = sorted.size();
    if (m == 1) return sorted[0];
    const double pos = q * static_cast<double>(m - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= m) return sorted[m - 1];
    const double w = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - w) + sorted[lo + 1] * w;
}

}  // namespace detail

// Percentile bootstrap over seeded per-iteration RNG streams; resamples
// missing a class are skipped and counted. Reproducible for a fixed seed
// regardless of execution order.
inline AurocResult bootstrap_auroc(std::span<const double> scores,
                                   std::span<const std::uint8_t> labels, int n_boot = 1000,
                                   double alpha = 0.05, std::uint64_t seed = 42) {
    const auto point = auroc(scores, labels);
    if (!point) throw DataError("undefined AUROC: single-class labels");
    if (n_boot < 1) throw ConfigError("bootstrap iterations must be >= 1");

    const std::size_t n = scores.size();
    std::vector<double> stats;
    stats.reserve(static_cast<std::size_t>(n_boot));
    std::vector<double> rs(n);
    std::vector<std::uint8_t> rl(n);
    int degenerate = 0;
    for (int it = 0; it < n_boot; ++it) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(it));
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = static_cast<std::size_t>(rng.uniform_index(n));
            rs[i] = scores[k];
            rl[i] = labels[k];
        }
        const auto a = auroc(rs, rl);
        if (a)
            stats.push_back(*a);
        else
            ++degenerate;
    }
    if (degenerate * 2 > n_boot)
        throw DataError("unstable bootstrap: more than half of the resamples were single-class");

    std::sort(stats.begin(), stats.end());
    AurocResult out;
    out.point = *point;
    out.ci_low = detail::quantile_sorted(stats, alpha / 2.0);
    out.ci_high = detail::quantile_sorted(stats, 1.0 - alpha / 2.0);
    out.n_boot = n_boot;
    out.n_degenerate_resamples = degenerate;
    return out;
}

// ---------------------------------------------------------------------------
// Isotonic regression (pool-adjacent-violators)
// ---------------------------------------------------------------------------

// Least-squares monotone fit of labels on scores. Applied as a step function:
// the value of the largest breakpoint <= score, clamped at the ends.
struct IsotonicModel {
    std::vector<double> breakpoints;  // ascending distinct scores
    std::vector<double> values;       // non-decreasing, in [0,1]

    double apply(double score) const {
        if (breakpoints.empty()) throw DataError("empty isotonic model");
        auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), score);
        if (it == breakpoints.begin()) return values.front();
        return values[static_cast<std::size_t>(it - breakpoints.begin()) - 1];
    }

    std::vector<double> apply(std::span<const double> scores) const {
        std::vector<double> out;
        out.reserve(scores.size());
        for (double s : scores) out.push_back(apply(s));
        return out;
    }
};

inline IsotonicModel fit_isotonic(std::span<const double> scores,
                                  std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw DataError("isotonic inputs differ in length");
    if (scores.size() < 2) throw DataError("isotonic regression needs at least 2 points");

    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });

    // Pre-pool exact score ties by averaging.
    std::vector<double> xs, ys, ws;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        double sum = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            sum += static_cast<double>(labels[order[j]]);
            ++j;
        }
        xs.push_back(scores[order[i]]);
        ys.push_back(sum / static_cast<double>(j - i));
        ws.push_back(static_cast<double>(j - i));
        i = j;
    }

    // PAVA over the pooled points.
    struct Block {
        double value, weight;
        std::size_t count;
    };
    std::vector<Block> blocks;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        blocks.push_back({ys[k], ws[k], 1});
        while (blocks.size() >= 2 && blocks[blocks.size() - 2].value >= blocks.back().value) {
            const Block b = blocks.back();
            blocks.pop_back();
            Block& a = blocks.back();
            a.value = (a.value * a.weight + b.value * b.weight) / (a.weight + b.weight);
            a.weight += b.weight;
            a.count += b.count;
        }
    }

    IsotonicModel model;
    model.breakpoints = xs;
    model.values.reserve(xs.size());
    for (const Block& b : blocks)
        for (std::size_t k = 0; k < b.count; ++k) model.values.push_back(b.value);
    return model;
}

// ---------------------------------------------------------------------------
// Calibration curve
// ---------------------------------------------------------------------------

struct CalibrationBin {
    double lo = 0.0, hi = 0.0;
    double mean_pred = 0.0;
    double obs_freq = 0.0;
    std::size_t count = 0;
};

struct CalibrationCurve {
    int n_bins = 10;  // fixed equal-width edges on [0,1]; empty bins omitted
    std::vector<CalibrationBin> bins;

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& b : bins) n += b.count;
        return n;
    }
};

inline CalibrationCurve calibration_curve(std::span<const double> probs,
                                          std::span<const std::uint8_t> labels, int n_bins = 10) {
    if (n_bins < 1) throw ConfigError("calibration bins must be >= 1");
    if (probs.size() != labels.size()) throw DataError("calibration inputs differ in length");
    std::vector<double> pred_sum(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<double> label_sum(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(n_bins), 0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        if (p < 0.0 || p > 1.0) throw DataError("calibration probabilities must lie in [0,1]");
        std::size_t b = static_cast<std::size_t>(p * n_bins);
        if (b >= static_cast<std::size_t>(n_bins)) b = static_cast<std::size_t>(n_bins) - 1;
        pred_sum[b] += p;
        label_sum[b] += static_cast<double>(labels[i]);
        ++count[b];
    }
    CalibrationCurve out;
    out.n_bins = n_bins;
    for (std::size_t b = 0; b < static_cast<std::size_t>(n_bins); ++b) {
        if (count[b] == 0) continue;
        CalibrationBin bin;
        bin.lo = static_cast<double>(b) / n_bins;
        bin.hi = static_cast<double>(b + 1) / n_bins;
        bin.mean_pred = pred_sum[b] / static_cast<double>(count[b]);
        bin.obs_freq = label_sum[b] / static_cast<double>(count[b]);
        bin.count = count[b];
        out.bins.push_back(bin);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decision curve analysis
// ---------------------------------------------------------------------------

struct DecisionCurve {
    std::vector<double> thresholds;
    std::vector<double> nb_model;
    std::vector<double> nb_all;
    std::vector<double> nb_none;  // identically zero
};

inline std::vector<double> threshold_grid(double start, double stop, double step) {
    if (!(step > 0.0) || !(start > 0.0) || !(stop < 1.0) || start > stop)
        throw ConfigError("decision-curve grid must lie inside (0,1) with positive step");
    std::vector<double> out;
    for (int k = 0;; ++k) {
        const double t = start + step * k;
        if (t > stop + step * 1e-9) break;
        out.push_back(t);
    }
    return out;
}

// NB(t) = TP/n - FP/n * t/(1-t), calling prob >= t positive. Treat-all uses
// TP = all positives, FP = all negatives; treat-none is zero.
inline DecisionCurve decision_curve(std::span<const double> probs,
                                    std::span<const std::uint8_t> labels,
                                    std::span<const double> thresholds) {
    if (probs.size() != labels.size()) throw DataError("decision curve inputs differ in length");
    const std::size_t n = probs.size();
    if (n == 0) throw DataError("decision curve needs at least one sample");
    for (double t : thresholds)
        if (!(t > 0.0 && t < 1.0)) throw ConfigError("decision thresholds must lie in (0,1)");

    // Ascending probs with positive-count suffix via prefix sums.
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return probs[a] < probs[b]; });
    std::vector<double> sorted_probs(n);
    std::vector<std::size_t> pos_prefix(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        sorted_probs[i] = probs[order[i]];
        pos_prefix[i + 1] = pos_prefix[i] + labels[order[i]];
    }
    const std::size_t total_pos = pos_prefix[n];
    const double nd = static_cast<double>(n);
    const double prevalence = static_cast<double>(total_pos) / nd;

    DecisionCurve out;
    out.thresholds.assign(thresholds.begin(), thresholds.end());
    for (double t : thresholds) {
        const std::size_t idx = static_cast<std::size_t>(
            std::lower_bound(sorted_probs.begin(), sorted_probs.end(), t) - sorted_probs.begin());
        const std::size_t tp = total_pos - pos_prefix[idx];
        const std::size_t fp = (n - idx) - tp;
        const double w = t / (1.0 - t);
        out.nb_model.push_back(static_cast<double>(tp) / nd - static_cast<double>(fp) / nd * w);
        out.nb_all.push_back(prevalence - (1.0 - prevalence) * w);
        out.nb_none.push_back(0.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-label evaluation report
// ---------------------------------------------------------------------------

struct EvalConfig {
    int n_boot = 1000;
    double alpha = 0.05;
    int calibration_bins = 10;
    double grid_start = 0.01;
    double grid_stop = 0.50;
    double grid_step = 0.01;
    std::uint64_t seed = 42;
};

struct EvaluationReport {
    std::string label;
    AurocResult auroc;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    CalibrationCurve calibration;  // on calibrated probabilities
    DecisionCurve dca;             // on calibrated probabilities
};

// Raw scores drive AUROC (rank metrics are calibration-invariant); calibrated
// probabilities drive the calibration and decision curves.
inline EvaluationReport evaluate_label(const std::string& label, std::span<const double> raw_scores,
                                       const IsotonicModel& calibrator,
                                       std::span<const std::uint8_t> test_labels,
                                       const EvalConfig& cfg) {
    EvaluationReport report;
    report.label = label;
    report.auroc = bootstrap_auroc(raw_scores, test_labels, cfg.n_boot, cfg.alpha, cfg.seed);
    for (std::uint8_t y : test_labels) (y ? report.n_pos : report.n_neg) += 1;
    const std::vector<double> calibrated = calibrator.apply(raw_scores);
    report.calibration = calibration_curve(calibrated, test_labels, cfg.calibration_bins);
    const auto grid = threshold_grid(cfg.grid_start, cfg.grid_stop, cfg.grid_step);
    report.dca = decision_curve(calibrated, test_labels, grid);
    return report;
}

inline nlohmann::json report_to_json(const EvaluationReport& r) {
    nlohmann::json j;
    j["label"] = r.label;
    j["auroc"] = {{"point", r.auroc.point},
                  {"ci_low", r.auroc.ci_low},
                  {"ci_high", r.auroc.ci_high},
                  {"n_boot", r.auroc.n_boot},
                  {"n_degenerate_resamples", r.auroc.n_degenerate_resamples}};
    j["n_pos"] = r.n_pos;
    j["n_neg"] = r.n_neg;
    j["calibration"] = nlohmann::json::array();
    for (const auto& b : r.calibration.bins)
        j["calibration"].push_back(
            {{"lo", b.lo}, {"hi", b.hi}, {"mean_pred", b.mean_pred}, {"obs_freq", b.obs_freq}, {"count", b.count}});
    j["calibration_bins"] = r.calibration.n_bins;
    j["dca"] = {{"thresholds", r.dca.thresholds},
                {"nb_model", r.dca.nb_model},
                {"nb_all", r.dca.nb_all},
                {"nb_none", r.dca.nb_none}};
    return j;
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
    EvaluationReport r;
    r.label = j.at("label").get<std::string>();
    r.auroc.point = j.at("auroc").at("point").get<double>();
    r.auroc.ci_low = j.at("auroc").at("ci_low").get<double>();
    r.auroc.ci_high = j.at("auroc").at("ci_high").get<double>();
    r.auroc.n_boot = j.at("auroc").at("n_boot").get<int>();
    r.auroc.n_degenerate_resamples = j.at("auroc").at("n_degenerate_resamples").get<int>();
    r.n_pos = j.at("n_pos").get<std::size_t>();
    r.n_neg = j.at("n_neg").get<std::size_t>();
    r.calibration.n_bins = j.at("calibration_bins").get<int>();
    for (const auto& jb : j.at("calibration")) {
        CalibrationBin b;
        b.lo = jb.at("lo").get<double>();
        b.hi = jb.at("hi").get<double>();
        b.mean_pred = jb.at("mean_pred").get<double>();
        b.obs_freq = jb.at("obs_freq").get<double>();
        b.count = jb.at("count").get<std::size_t>();
        r.calibration.bins.push_back(b);
    }
    r.dca.thresholds = j.at("dca").at("thresholds").get<std::vector<double>>();
    r.dca.nb_model = j.at("dca").at("nb_model").get<std::vector<double>>();
    r.dca.nb_all = j.at("dca").at("nb_all").get<std::vector<double>>();
    r.dca.nb_none = j.at("dca").at("nb_none").get<std::vector<double>>();
    return r;
}

// Isotonic model (de)serialization for the calibrator artifact.
inline std::string serialize_isotonic(const IsotonicModel& m) {
    std::ostringstream out;
    out << "{\n  \"schema\": \"ecg2cxr.isotonic\",\n  \"version\": 1,\n  \"breakpoints\": [";
    for (std::size_t i = 0; i < m.breakpoints.size(); ++i)
        out << (i ? ", " : "") << fmt_g17(m.breakpoints[i]);
    out << "],\n  \"values\": [";
    for (std::size_t i = 0; i < m.values.size(); ++i) out << (i ? ", " : "") << fmt_g17(m.values[i]);
    out << "]\n}\n";
    return out.str();
}

inline IsotonicModel parse_isotonic(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    IsotonicModel m;
    m.breakpoints = j.at("breakpoints").get<std::vector<double>>();
    m.values = j.at("values").get<std::vector<double>>();
    if (m.breakpoints.size() != m.values.size())
        throw DataError("isotonic model: breakpoints/values length mismatch");
    return m;
}

}  // namespace ecg2cxr
