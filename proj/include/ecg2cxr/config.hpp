#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecg2cxr/boosting.hpp"
#include "ecg2cxr/common.hpp"
#include "ecg2cxr/ingest.hpp"
#include "ecg2cxr/metrics.hpp"
#include "ecg2cxr/synth.hpp"

namespace ecg2cxr {

inline constexpr int kConfigVersion = 1;

struct DataConfig {
    std::string source = "synth";  // "synth" | "files"
    std::string ecg_csv;           // files mode
    std::string cxr_csv;
    std::string demographics_csv;
    char delimiter = ',';
    EcgColumnMap ecg_columns;
    CxrColumnMap cxr_columns;
};

struct PairingConfig {
    double tolerance_hours = 24.0;

    std::int64_t tolerance_seconds() const {
        return static_cast<std::int64_t>(tolerance_hours * 3600.0);
    }
};

struct SplitConfig {
    SplitRatios ratios;
    std::uint64_t seed = 42;
};

struct RfeConfig {
    bool enabled = true;
    int min_features = 1;
};

struct ExplainStageConfig {
    std::size_t background_max_rows = 10000;
    std::uint64_t seed = 42;
};

struct PipelineConfig {
    std::filesystem::path output_dir = "out";
    std::vector<std::string> labels;  // label schema; defaults to synth label names
    int jobs = 1;
    DataConfig data;
    SynthConfig synth;
    PairingConfig pairing;
    SplitConfig split;
    BoostConfig boosting;
    RfeConfig rfe;
    EvalConfig evaluation;
    ExplainStageConfig explain;
};

// ---------------------------------------------------------------------------
// Strict JSON parsing with field-path errors
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError("config: unknown field \"" + path + it.key() + "\"");
    }
}

template <typename T>
T get_field(const nlohmann::json& j, const std::string& path, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: field \"" + path + key + "\" has the wrong type");
    }
}

inline const nlohmann::json& get_object(const nlohmann::json& j, const std::string& path,
                                        const char* key) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!j.contains(key)) return empty;
    if (!j.at(key).is_object())
        throw ConfigError("config: field \"" + path + key + "\" must be an object");
    return j.at(key);
}

}  // namespace detail

inline PipelineConfig parse_config(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::get_field;
    using detail::get_object;

    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    check_keys(j, "", {"version", "output_dir", "labels", "jobs", "data", "synth", "pairing",
                       "split", "boosting", "rfe", "evaluation", "explain"});
    const int version = get_field<int>(j, "", "version", kConfigVersion);
    if (version != kConfigVersion)
        throw ConfigError("config: field \"version\" must be " + std::to_string(kConfigVersion));

    PipelineConfig cfg;
    cfg.output_dir = get_field<std::string>(j, "", "output_dir", "out");
    cfg.labels = get_field<std::vector<std::string>>(j, "", "labels", {});
    cfg.jobs = get_field<int>(j, "", "jobs", 1);
    if (cfg.jobs < 1) throw ConfigError("config: field \"jobs\" must be >= 1");

    {
        const auto& d = get_object(j, "", "data");
        check_keys(d, "data.", {"source", "ecg_csv", "cxr_csv", "demographics_csv", "delimiter",
                                "ecg_columns", "cxr_columns"});
        cfg.data.source = get_field<std::string>(d, "data.", "source", "synth");
        if (cfg.data.source != "synth" && cfg.data.source != "files")
            throw ConfigError("config: field \"data.source\" must be \"synth\" or \"files\"");
        cfg.data.ecg_csv = get_field<std::string>(d, "data.", "ecg_csv", "");
        cfg.data.cxr_csv = get_field<std::string>(d, "data.", "cxr_csv", "");
        cfg.data.demographics_csv = get_field<std::string>(d, "data.", "demographics_csv", "");
        const std::string delim = get_field<std::string>(d, "data.", "delimiter", ",");
        if (delim == ",") cfg.data.delimiter = ',';
        else if (delim == "\t" || delim == "tab") cfg.data.delimiter = '\t';
        else throw ConfigError("config: field \"data.delimiter\" must be \",\" or \"tab\"");

        const auto& ec = get_object(d, "data.", "ecg_columns");
        check_keys(ec, "data.ecg_columns.",
                   {"patient_id", "study_id", "acquired_at", "rr_interval", "p_onset", "p_end",
                    "qrs_onset", "qrs_end", "t_end", "p_axis", "qrs_axis", "t_axis"});
        auto& m = cfg.data.ecg_columns;
        m.patient_id = get_field<std::string>(ec, "data.ecg_columns.", "patient_id", m.patient_id);
        m.study_id = get_field<std::string>(ec, "data.ecg_columns.", "study_id", m.study_id);
        m.acquired_at = get_field<std::string>(ec, "data.ecg_columns.", "acquired_at", m.acquired_at);
        m.rr_interval = get_field<std::string>(ec, "data.ecg_columns.", "rr_interval", m.rr_interval);
        m.p_onset = get_field<std::string>(ec, "data.ecg_columns.", "p_onset", m.p_onset);
        m.p_end = get_field<std::string>(ec, "data.ecg_columns.", "p_end", m.p_end);
        m.qrs_onset = get_field<std::string>(ec, "data.ecg_columns.", "qrs_onset", m.qrs_onset);
        m.qrs_end = get_field<std::string>(ec, "data.ecg_columns.", "qrs_end", m.qrs_end);
        m.t_end = get_field<std::string>(ec, "data.ecg_columns.", "t_end", m.t_end);
        m.p_axis = get_field<std::string>(ec, "data.ecg_columns.", "p_axis", m.p_axis);
        m.qrs_axis = get_field<std::string>(ec, "data.ecg_columns.", "qrs_axis", m.qrs_axis);
        m.t_axis = get_field<std::string>(ec, "data.ecg_columns.", "t_axis", m.t_axis);

        const auto& xc = get_object(d, "data.", "cxr_columns");
        check_keys(xc, "data.cxr_columns.", {"patient_id", "study_id", "reported_at"});
        auto& x = cfg.data.cxr_columns;
        x.patient_id = get_field<std::string>(xc, "data.cxr_columns.", "patient_id", x.patient_id);
        x.study_id = get_field<std::string>(xc, "data.cxr_columns.", "study_id", x.study_id);
        x.reported_at = get_field<std::string>(xc, "data.cxr_columns.", "reported_at", x.reported_at);
    }

    {
        const auto& s = get_object(j, "", "synth");
        check_keys(s, "synth.",
                   {"n_patients", "mean_ecgs_per_patient", "mean_cxrs_per_patient",
                    "paired_fraction", "missingness_rate", "implausible_rate", "seed", "labels"});
        cfg.synth.n_patients = get_field<int>(s, "synth.", "n_patients", 2000);
        cfg.synth.mean_ecgs_per_patient =
            get_field<double>(s, "synth.", "mean_ecgs_per_patient", 2.0);
        cfg.synth.mean_cxrs_per_patient =
            get_field<double>(s, "synth.", "mean_cxrs_per_patient", 1.5);
        cfg.synth.paired_fraction = get_field<double>(s, "synth.", "paired_fraction", 0.9);
        cfg.synth.missingness_rate = get_field<double>(s, "synth.", "missingness_rate", 0.10);
        cfg.synth.implausible_rate = get_field<double>(s, "synth.", "implausible_rate", 0.01);
        cfg.synth.seed = get_field<std::uint64_t>(s, "synth.", "seed", 42);
        if (s.contains("labels")) {
            if (!s.at("labels").is_array())
                throw ConfigError("config: field \"synth.labels\" must be an array");
            cfg.synth.labels.clear();
            std::size_t idx = 0;
            for (const auto& jl : s.at("labels")) {
                const std::string path = "synth.labels[" + std::to_string(idx++) + "].";
                if (!jl.is_object())
                    throw ConfigError("config: field \"" + path + "\" must be an object");
                check_keys(jl, path, {"name", "kind", "prevalence", "coefficients", "intercept"});
                SynthLabelSpec spec;
                spec.name = get_field<std::string>(jl, path, "name", "");
                if (spec.name.empty())
                    throw ConfigError("config: field \"" + path + "name\" is required");
                const std::string kind = get_field<std::string>(jl, path, "kind", "planted");
                if (kind == "noise") {
                    spec.is_noise = true;
                    spec.prevalence = get_field<double>(jl, path, "prevalence", 0.15);
                } else if (kind == "planted") {
                    spec.intercept = get_field<double>(jl, path, "intercept", 0.0);
                    spec.coefficients =
                        get_field<std::map<std::string, double>>(jl, path, "coefficients", {});
                } else {
                    throw ConfigError("config: field \"" + path +
                                      "kind\" must be \"planted\" or \"noise\"");
                }
                cfg.synth.labels.push_back(std::move(spec));
            }
        } else {
            cfg.synth.labels = default_synth_labels();
        }
    }

    {
        const auto& p = get_object(j, "", "pairing");
        check_keys(p, "pairing.", {"tolerance_hours"});
        cfg.pairing.tolerance_hours = get_field<double>(p, "pairing.", "tolerance_hours", 24.0);
        if (!(cfg.pairing.tolerance_hours > 0.0))
            throw ConfigError("config: field \"pairing.tolerance_hours\" must be > 0");
        cfg.synth.pairing_tolerance_seconds = cfg.pairing.tolerance_seconds();
    }

    {
        const auto& s = get_object(j, "", "split");
        check_keys(s, "split.", {"ratios", "seed"});
        const auto ratios = get_field<std::vector<int>>(s, "split.", "ratios", {18, 1, 1});
        if (ratios.size() != 3 || ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0)
            throw ConfigError("config: field \"split.ratios\" must be three positive integers");
        cfg.split.ratios = {ratios[0], ratios[1], ratios[2]};
        cfg.split.seed = get_field<std::uint64_t>(s, "split.", "seed", 42);
    }

    {
        const auto& b = get_object(j, "", "boosting");
        check_keys(b, "boosting.",
                   {"rounds", "learning_rate", "l2_reg", "min_split_gain", "min_child_hessian",
                    "seed"});
        cfg.boosting.rounds = get_field<int>(b, "boosting.", "rounds", 1000);
        cfg.boosting.learning_rate = get_field<double>(b, "boosting.", "learning_rate", 0.3);
        cfg.boosting.l2_reg = get_field<double>(b, "boosting.", "l2_reg", 1.0);
        cfg.boosting.min_split_gain = get_field<double>(b, "boosting.", "min_split_gain", 0.0);
        cfg.boosting.min_child_hessian = get_field<double>(b, "boosting.", "min_child_hessian", 1.0);
        cfg.boosting.seed = get_field<std::uint64_t>(b, "boosting.", "seed", 42);
        if (cfg.boosting.rounds < 1) throw ConfigError("config: field \"boosting.rounds\" must be >= 1");
        if (!(cfg.boosting.learning_rate > 0.0))
            throw ConfigError("config: field \"boosting.learning_rate\" must be > 0");
        if (cfg.boosting.l2_reg < 0.0 || cfg.boosting.min_split_gain < 0.0 ||
            cfg.boosting.min_child_hessian < 0.0)
            throw ConfigError("config: boosting regularization fields must be >= 0");
    }

    {
        const auto& r = get_object(j, "", "rfe");
        check_keys(r, "rfe.", {"enabled", "min_features"});
        cfg.rfe.enabled = get_field<bool>(r, "rfe.", "enabled", true);
        cfg.rfe.min_features = get_field<int>(r, "rfe.", "min_features", 1);
        if (cfg.rfe.min_features < 1)
            throw ConfigError("config: field \"rfe.min_features\" must be >= 1");
    }

    {
        const auto& e = get_object(j, "", "evaluation");
        check_keys(e, "evaluation.",
                   {"n_boot", "alpha", "calibration_bins", "dca_grid_start", "dca_grid_stop",
                    "dca_grid_step", "seed"});
        cfg.evaluation.n_boot = get_field<int>(e, "evaluation.", "n_boot", 1000);
        cfg.evaluation.alpha = get_field<double>(e, "evaluation.", "alpha", 0.05);
        cfg.evaluation.calibration_bins = get_field<int>(e, "evaluation.", "calibration_bins", 10);
        cfg.evaluation.grid_start = get_field<double>(e, "evaluation.", "dca_grid_start", 0.01);
        cfg.evaluation.grid_stop = get_field<double>(e, "evaluation.", "dca_grid_stop", 0.50);
        cfg.evaluation.grid_step = get_field<double>(e, "evaluation.", "dca_grid_step", 0.01);
        cfg.evaluation.seed = get_field<std::uint64_t>(e, "evaluation.", "seed", 42);
        if (cfg.evaluation.n_boot < 1)
            throw ConfigError("config: field \"evaluation.n_boot\" must be >= 1");
        if (!(cfg.evaluation.alpha > 0.0 && cfg.evaluation.alpha < 1.0))
            throw ConfigError("config: field \"evaluation.alpha\" must lie in (0,1)");
    }

    {
        const auto& x = get_object(j, "", "explain");
        check_keys(x, "explain.", {"background_max_rows", "seed"});
        cfg.explain.background_max_rows =
            get_field<std::size_t>(x, "explain.", "background_max_rows", 10000);
        cfg.explain.seed = get_field<std::uint64_t>(x, "explain.", "seed", 42);
        if (cfg.explain.background_max_rows < 1)
            throw ConfigError("config: field \"explain.background_max_rows\" must be >= 1");
    }

    // Resolve the label schema.
    auto check_label_name = [](const std::string& name) {
        if (name.empty() || name.find('\n') != std::string::npos ||
            name.find('"') != std::string::npos)
            throw ConfigError("config: label name \"" + name +
                              "\" must be non-empty and free of newlines and quotes");
    };
    for (const auto& l : cfg.labels) check_label_name(l);
    for (const auto& spec : cfg.synth.labels) check_label_name(spec.name);
    if (cfg.data.source == "synth") {
        std::vector<std::string> synth_names;
        for (const auto& spec : cfg.synth.labels) synth_names.push_back(spec.name);
        if (cfg.labels.empty()) {
            cfg.labels = synth_names;
        } else {
            for (const auto& l : cfg.labels)
                if (std::find(synth_names.begin(), synth_names.end(), l) == synth_names.end())
                    throw ConfigError("config: label \"" + l + "\" is not generated by synth.labels");
        }
    } else {
        if (cfg.labels.empty())
            throw ConfigError("config: field \"labels\" is required when data.source is \"files\"");
        if (cfg.data.ecg_csv.empty() || cfg.data.cxr_csv.empty() || cfg.data.demographics_csv.empty())
            throw ConfigError(
                "config: data.ecg_csv, data.cxr_csv and data.demographics_csv are required when "
                "data.source is \"files\"");
    }
    return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

// Canonical JSON rendering of an effective config; doubles are exact, keys
// sorted. Used both for the generated template and the manifest config hash.
inline nlohmann::json config_to_json(const PipelineConfig& cfg) {
    nlohmann::json j;
    j["version"] = kConfigVersion;
    j["output_dir"] = cfg.output_dir.string();
    j["labels"] = cfg.labels;
    j["jobs"] = cfg.jobs;
    j["data"] = {{"source", cfg.data.source},
                 {"ecg_csv", cfg.data.ecg_csv},
                 {"cxr_csv", cfg.data.cxr_csv},
                 {"demographics_csv", cfg.data.demographics_csv},
                 {"delimiter", cfg.data.delimiter == '\t' ? "tab" : ","}};
    j["data"]["ecg_columns"] = {{"patient_id", cfg.data.ecg_columns.patient_id},
                                {"study_id", cfg.data.ecg_columns.study_id},
                                {"acquired_at", cfg.data.ecg_columns.acquired_at},
                                {"rr_interval", cfg.data.ecg_columns.rr_interval},
                                {"p_onset", cfg.data.ecg_columns.p_onset},
                                {"p_end", cfg.data.ecg_columns.p_end},
                                {"qrs_onset", cfg.data.ecg_columns.qrs_onset},
                                {"qrs_end", cfg.data.ecg_columns.qrs_end},
                                {"t_end", cfg.data.ecg_columns.t_end},
                                {"p_axis", cfg.data.ecg_columns.p_axis},
                                {"qrs_axis", cfg.data.ecg_columns.qrs_axis},
                                {"t_axis", cfg.data.ecg_columns.t_axis}};
    j["data"]["cxr_columns"] = {{"patient_id", cfg.data.cxr_columns.patient_id},
                                {"study_id", cfg.data.cxr_columns.study_id},
                                {"reported_at", cfg.data.cxr_columns.reported_at}};
    j["synth"] = {{"n_patients", cfg.synth.n_patients},
                  {"mean_ecgs_per_patient", cfg.synth.mean_ecgs_per_patient},
                  {"mean_cxrs_per_patient", cfg.synth.mean_cxrs_per_patient},
                  {"paired_fraction", cfg.synth.paired_fraction},
                  {"missingness_rate", cfg.synth.missingness_rate},
                  {"implausible_rate", cfg.synth.implausible_rate},
                  {"seed", cfg.synth.seed}};
    j["synth"]["labels"] = nlohmann::json::array();
    for (const auto& spec : cfg.synth.labels) {
        nlohmann::json jl;
        jl["name"] = spec.name;
        jl["kind"] = spec.is_noise ? "noise" : "planted";
        if (spec.is_noise) {
            jl["prevalence"] = spec.prevalence;
        } else {
            jl["intercept"] = spec.intercept;
            jl["coefficients"] = spec.coefficients;
        }
        j["synth"]["labels"].push_back(jl);
    }
    j["pairing"] = {{"tolerance_hours", cfg.pairing.tolerance_hours}};
    j["split"] = {{"ratios", std::vector<int>{cfg.split.ratios.train, cfg.split.ratios.validation,
                                              cfg.split.ratios.test}},
                  {"seed", cfg.split.seed}};
    j["boosting"] = {{"rounds", cfg.boosting.rounds},
                     {"learning_rate", cfg.boosting.learning_rate},
                     {"l2_reg", cfg.boosting.l2_reg},
                     {"min_split_gain", cfg.boosting.min_split_gain},
                     {"min_child_hessian", cfg.boosting.min_child_hessian},
                     {"seed", cfg.boosting.seed}};
    j["rfe"] = {{"enabled", cfg.rfe.enabled}, {"min_features", cfg.rfe.min_features}};
    j["evaluation"] = {{"n_boot", cfg.evaluation.n_boot},
                       {"alpha", cfg.evaluation.alpha},
                       {"calibration_bins", cfg.evaluation.calibration_bins},
                       {"dca_grid_start", cfg.evaluation.grid_start},
                       {"dca_grid_stop", cfg.evaluation.grid_stop},
                       {"dca_grid_step", cfg.evaluation.grid_step},
                       {"seed", cfg.evaluation.seed}};
    j["explain"] = {{"background_max_rows", cfg.explain.background_max_rows},
                    {"seed", cfg.explain.seed}};
    return j;
}

// The generated template: every default explicit, demo synthetic cohort.
inline std::string default_config_text() {
    PipelineConfig cfg;
    cfg.synth.labels = default_synth_labels();
    std::vector<std::string> names;
    for (const auto& s : cfg.synth.labels) names.push_back(s.name);
    cfg.labels = names;
    return config_to_json(cfg).dump(2) + "\n";
}

}  // namespace ecg2cxr
