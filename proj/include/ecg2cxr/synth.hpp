#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecg2cxr/common.hpp"
#include "ecg2cxr/csv.hpp"
#include "ecg2cxr/features.hpp"
#include "ecg2cxr/rng.hpp"

namespace ecg2cxr {

// ---------------------------------------------------------------------------
// Synthetic cohort generator. Raw fiducials are drawn from lognormal/normal
// families whose derived-feature medians sit inside the reference cohort's
// interquartile ranges. Each patient carries one latent fiducial set; every
// ECG observes it with small jitter, so whichever ECG pairs with a CXR still
// carries the planted signal. Labels are logistic in the standardized latent
// derived features. Fully deterministic per seed via per-patient RNG streams.
// ---------------------------------------------------------------------------

struct SynthLabelSpec {
    std::string name;
    bool is_noise = false;
    double prevalence = 0.15;                    // noise labels only
    std::map<std::string, double> coefficients;  // feature -> beta, planted labels
    double intercept = 0.0;
};

struct SynthConfig {
    int n_patients = 2000;
    double mean_ecgs_per_patient = 2.0;  // realized as 1 + Poisson(mean - 1)
    double mean_cxrs_per_patient = 1.5;  // Poisson
    double paired_fraction = 0.9;        // CXRs given a preceding ECG within tolerance
    double missingness_rate = 0.10;      // per emitted fiducial cell, MCAR
    double implausible_rate = 0.01;      // per emitted fiducial cell, masked later by cleaning
    std::int64_t pairing_tolerance_seconds = 86400;
    std::uint64_t seed = 42;
    std::vector<SynthLabelSpec> labels;
};

// Robust centers/scales of the generator's derived-feature marginals, used to
// standardize the planted logistic mechanisms (and recorded in the manifest).
inline const std::map<std::string, std::pair<double, double>>& synth_standardization() {
    static const std::map<std::string, std::pair<double, double>> table = {
        {"rr_interval", {740.0, 190.0}}, {"p_axis", {52.0, 23.0}},
        {"qrs_axis", {14.0, 46.0}},      {"t_axis", {43.0, 40.0}},
        {"p_duration", {110.0, 18.0}},   {"qrs_duration", {93.0, 16.0}},
        {"pr_interval", {156.0, 28.0}},  {"qt_interval", {384.0, 55.0}},
        {"qrst_interval", {291.0, 55.0}},{"pt_interval", {540.0, 60.0}},
        {"qtc", {446.0, 36.0}},          {"p_rr_ratio", {0.149, 0.045}},
        {"qrs_rr_ratio", {0.126, 0.039}},{"qt_rr_ratio", {0.519, 0.08}},
        {"pr_qt_ratio", {0.406, 0.09}},  {"p_qrs_axis_diff", {45.0, 35.0}},
        {"qrs_t_axis_diff", {46.0, 40.0}},{"p_t_axis_diff", {31.0, 25.0}},
        {"age", {66.0, 20.0}},           {"age_bin", {1.5, 1.1}},
        {"sex", {0.5, 0.5}},
    };
    return table;
}

// Two strong planted mechanisms and one pure-noise label.
inline std::vector<SynthLabelSpec> default_synth_labels() {
    std::vector<SynthLabelSpec> labels(3);
    labels[0].name = "planted_a";
    labels[0].coefficients = {{"qt_rr_ratio", 1.6}, {"qtc", -1.1}, {"p_qrs_axis_diff", 0.9},
                              {"p_duration", 1.2}};
    labels[0].intercept = -0.8;
    labels[1].name = "planted_b";
    labels[1].coefficients = {{"p_duration", 1.5}, {"pr_qt_ratio", -1.2}, {"qrs_t_axis_diff", 1.0},
                              {"age", 0.7}};
    labels[1].intercept = -1.0;
    labels[2].name = "noise_a";
    labels[2].is_noise = true;
    labels[2].prevalence = 0.15;
    return labels;
}

struct SynthSummary {
    std::size_t n_patients = 0;
    std::size_t n_ecgs = 0;
    std::size_t n_cxrs = 0;
    std::size_t n_cxrs_intended_paired = 0;
};

namespace detail {

// Latent per-patient physiology; everything else derives from it.
struct Latent {
    double log_rr, p_onset, p_duration, pr_interval, qrs_duration, qtc;
    double p_axis, qrs_axis, t_axis;
    double age;
    int sex;
};

inline Latent draw_latent(Rng& rng) {
    Latent l;
    l.log_rr = rng.normal(std::log(740.0), 0.26);
    l.p_onset = rng.normal(40.0, 8.0);
    l.p_duration = rng.normal(110.0, 18.0);
    l.pr_interval = rng.normal(156.0, 28.0);
    l.qrs_duration = rng.normal(93.0, 16.0);
    l.qtc = rng.normal(446.0, 36.0);
    l.p_axis = rng.normal(52.0, 23.0);
    l.qrs_axis = rng.normal(14.0, 46.0);
    l.t_axis = rng.normal(43.0, 40.0);
    const int bin = static_cast<int>(rng.uniform_index(4));
    const double lo[4] = {18.0, 53.0, 66.0, 78.0};
    const double hi[4] = {53.0, 66.0, 78.0, 100.0};
    l.age = std::floor(rng.uniform(lo[bin], hi[bin]));
    l.sex = rng.bernoulli(0.528) ? 1 : 0;
    return l;
}

inline RawEcgMeasurement latent_to_raw(const Latent& l) {
    RawEcgMeasurement raw;
    const double rr = std::exp(l.log_rr);
    raw.rr_interval = rr;
    raw.p_onset = l.p_onset;
    raw.p_end = l.p_onset + l.p_duration;
    raw.qrs_onset = l.p_onset + l.pr_interval;
    raw.qrs_end = l.p_onset + l.pr_interval + l.qrs_duration;
    raw.t_end = l.p_onset + l.pr_interval + l.qtc * std::sqrt(rr / 1000.0);
    raw.p_axis = l.p_axis;
    raw.qrs_axis = l.qrs_axis;
    raw.t_axis = l.t_axis;
    return raw;
}

// Observation = latent + fractional jitter of each family scale.
inline RawEcgMeasurement observe(const Latent& l, Rng& rng, double jitter = 0.15) {
    Latent o = l;
    o.log_rr += rng.normal(0.0, 0.26 * jitter);
    o.p_onset += rng.normal(0.0, 8.0 * jitter);
    o.p_duration += rng.normal(0.0, 18.0 * jitter);
    o.pr_interval += rng.normal(0.0, 28.0 * jitter);
    o.qrs_duration += rng.normal(0.0, 16.0 * jitter);
    o.qtc += rng.normal(0.0, 36.0 * jitter);
    o.p_axis += rng.normal(0.0, 23.0 * jitter);
    o.qrs_axis += rng.normal(0.0, 46.0 * jitter);
    o.t_axis += rng.normal(0.0, 40.0 * jitter);
    return latent_to_raw(o);
}

inline std::string cell_or_mask(double value, bool axis, Rng& rng, const SynthConfig& cfg) {
    if (rng.bernoulli(cfg.missingness_rate)) return {};
    if (rng.bernoulli(cfg.implausible_rate)) {
        if (axis) {
            const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
            return std::to_string(static_cast<long long>(sign * (361 + rng.uniform_index(360))));
        }
        return rng.bernoulli(0.5)
                   ? std::to_string(static_cast<long long>(5001 + rng.uniform_index(5000)))
                   : std::to_string(-static_cast<long long>(1 + rng.uniform_index(500)));
    }
    return std::to_string(static_cast<long long>(std::llround(value)));
}

}  // namespace detail

inline void validate(const SynthConfig& cfg) {
    if (cfg.n_patients < 20) throw ConfigError("synth.n_patients must be >= 20");
    if (cfg.mean_ecgs_per_patient < 1.0) throw ConfigError("synth.mean_ecgs_per_patient must be >= 1");
    if (!(cfg.mean_cxrs_per_patient > 0.0)) throw ConfigError("synth.mean_cxrs_per_patient must be > 0");
    if (cfg.paired_fraction < 0.0 || cfg.paired_fraction > 1.0)
        throw ConfigError("synth.paired_fraction must lie in [0,1]");
    if (cfg.missingness_rate < 0.0 || cfg.missingness_rate >= 1.0)
        throw ConfigError("synth.missingness_rate must lie in [0,1)");
    if (cfg.implausible_rate < 0.0 || cfg.implausible_rate >= 1.0)
        throw ConfigError("synth.implausible_rate must lie in [0,1)");
    if (cfg.pairing_tolerance_seconds <= 0) throw ConfigError("synth.pairing_tolerance_seconds must be > 0");
    if (cfg.labels.empty()) throw ConfigError("synth.labels must be non-empty");
    const auto& standardization = synth_standardization();
    for (const auto& spec : cfg.labels) {
        if (spec.name.empty()) throw ConfigError("synth label with empty name");
        if (spec.is_noise) {
            if (!(spec.prevalence > 0.0 && spec.prevalence < 1.0))
                throw ConfigError("synth label \"" + spec.name + "\": prevalence must lie in (0,1)");
        } else {
            if (spec.coefficients.empty())
                throw ConfigError("synth label \"" + spec.name + "\": planted label needs coefficients");
            for (const auto& [feature, beta] : spec.coefficients) {
                if (!standardization.count(feature))
                    throw ConfigError("synth label \"" + spec.name + "\": unknown feature \"" + feature + "\"");
                if (!std::isfinite(beta))
                    throw ConfigError("synth label \"" + spec.name + "\": non-finite coefficient");
            }
        }
    }
}

// Writes ecg.csv, cxr.csv, demographics.csv (the exact formats the ingestion
// module consumes), latent.csv (the ground-truth features behind the labels)
// and truth.json (the planted mechanisms).
inline SynthSummary generate(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    validate(cfg);
    std::filesystem::create_directories(out_dir);

    const auto& standardization = synth_standardization();
    const std::int64_t epoch_2024 = days_from_civil(2024, 1, 1) * 86400;

    std::vector<std::vector<std::string>> ecg_rows, cxr_rows, demo_rows;
    std::vector<std::string> latent_ids;
    std::vector<FeatureVector> latent_features;
    SynthSummary summary;
    summary.n_patients = static_cast<std::size_t>(cfg.n_patients);

    for (int pi = 0; pi < cfg.n_patients; ++pi) {
        Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(pi));
        char pid[16];
        std::snprintf(pid, sizeof(pid), "P%06d", pi);

        const detail::Latent latent = detail::draw_latent(rng);
        const FeatureVector latent_fv =
            derive_features(detail::latent_to_raw(latent), latent.age, latent.sex);
        latent_ids.emplace_back(pid);
        latent_features.push_back(latent_fv);

        demo_rows.push_back({pid, std::to_string(static_cast<long long>(latent.age)),
                             latent.sex ? "M" : "F"});

        // Per-label linear predictor from the standardized latent features.
        std::vector<double> label_prob(cfg.labels.size());
        for (std::size_t li = 0; li < cfg.labels.size(); ++li) {
            const auto& spec = cfg.labels[li];
            if (spec.is_noise) {
                label_prob[li] = spec.prevalence;
                continue;
            }
            double lin = spec.intercept;
            for (const auto& [feature, beta] : spec.coefficients) {
                const auto& [center, scale] = standardization.at(feature);
                const auto v = latent_fv.values[static_cast<std::size_t>(
                    std::find(kFeatureNames.begin(), kFeatureNames.end(), feature) -
                    kFeatureNames.begin())];
                if (v) lin += beta * (*v - center) / scale;
            }
            label_prob[li] = sigmoid(lin);
        }

        const std::int64_t base_time = epoch_2024 + static_cast<std::int64_t>(rng.uniform_index(365 * 86400));
        const int n_ecgs = 1 + rng.poisson(cfg.mean_ecgs_per_patient - 1.0);
        std::vector<std::int64_t> ecg_times;
        for (int e = 0; e < n_ecgs; ++e)
            ecg_times.push_back(base_time + static_cast<std::int64_t>(rng.uniform_index(30 * 86400)));
        std::sort(ecg_times.begin(), ecg_times.end());

        for (int e = 0; e < n_ecgs; ++e) {
            const RawEcgMeasurement obs = detail::observe(latent, rng);
            char sid[24];
            std::snprintf(sid, sizeof(sid), "E%06d_%02d", pi, e);
            ecg_rows.push_back({pid, sid, format_timestamp_utc(ecg_times[e]),
                                detail::cell_or_mask(*obs.rr_interval, false, rng, cfg),
                                detail::cell_or_mask(*obs.p_onset, false, rng, cfg),
                                detail::cell_or_mask(*obs.p_end, false, rng, cfg),
                                detail::cell_or_mask(*obs.qrs_onset, false, rng, cfg),
                                detail::cell_or_mask(*obs.qrs_end, false, rng, cfg),
                                detail::cell_or_mask(*obs.t_end, false, rng, cfg),
                                detail::cell_or_mask(*obs.p_axis, true, rng, cfg),
                                detail::cell_or_mask(*obs.qrs_axis, true, rng, cfg),
                                detail::cell_or_mask(*obs.t_axis, true, rng, cfg)});
        }
        summary.n_ecgs += static_cast<std::size_t>(n_ecgs);

        const int n_cxrs = rng.poisson(cfg.mean_cxrs_per_patient);
        for (int x = 0; x < n_cxrs; ++x) {
            const bool paired = rng.bernoulli(cfg.paired_fraction);
            std::int64_t when;
            if (paired) {
                const std::size_t u = static_cast<std::size_t>(rng.uniform_index(ecg_times.size()));
                const std::uint64_t span =
                    cfg.pairing_tolerance_seconds > 1
                        ? static_cast<std::uint64_t>(cfg.pairing_tolerance_seconds - 1)
                        : 1;
                when = ecg_times[u] + 1 + static_cast<std::int64_t>(rng.uniform_index(span));
                ++summary.n_cxrs_intended_paired;
            } else {
                when = ecg_times.front() - 86400 - static_cast<std::int64_t>(rng.uniform_index(10 * 86400));
            }
            char sid[24];
            std::snprintf(sid, sizeof(sid), "X%06d_%02d", pi, x);
            std::vector<std::string> row = {pid, sid, format_timestamp_utc(when)};
            for (std::size_t li = 0; li < cfg.labels.size(); ++li)
                row.push_back(rng.bernoulli(label_prob[li]) ? "1" : "0");
            cxr_rows.push_back(std::move(row));
        }
        summary.n_cxrs += static_cast<std::size_t>(n_cxrs);
    }

    write_csv(out_dir / "ecg.csv",
              {"patient_id", "study_id", "acquired_at", "rr_interval", "p_onset", "p_end",
               "qrs_onset", "qrs_end", "t_end", "p_axis", "qrs_axis", "t_axis"},
              ecg_rows);
    std::vector<std::string> cxr_header = {"patient_id", "study_id", "reported_at"};
    for (const auto& spec : cfg.labels) cxr_header.push_back(spec.name);
    write_csv(out_dir / "cxr.csv", cxr_header, cxr_rows);
    write_csv(out_dir / "demographics.csv", {"patient_id", "age", "sex"}, demo_rows);
    write_feature_csv(out_dir / "latent.csv", build_matrix(latent_ids, latent_features));

    nlohmann::json truth;
    truth["schema"] = "ecg2cxr.synth_truth";
    truth["version"] = 1;
    truth["seed"] = cfg.seed;
    truth["n_patients"] = cfg.n_patients;
    truth["labels"] = nlohmann::json::array();
    for (const auto& spec : cfg.labels) {
        nlohmann::json js;
        js["name"] = spec.name;
        js["kind"] = spec.is_noise ? "noise" : "planted";
        if (spec.is_noise) {
            js["prevalence"] = spec.prevalence;
        } else {
            js["intercept"] = spec.intercept;
            js["coefficients"] = spec.coefficients;
        }
        truth["labels"].push_back(js);
    }
    truth["standardization"] = nlohmann::json::object();
    for (const auto& [feature, cs] : standardization)
        truth["standardization"][feature] = {{"center", cs.first}, {"scale", cs.second}};
    std::ofstream out(out_dir / "truth.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (out_dir / "truth.json").string());
    out << truth.dump(2) << "\n";
    return summary;
}

}  // namespace ecg2cxr
