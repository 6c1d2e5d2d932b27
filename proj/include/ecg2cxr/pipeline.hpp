#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ecg2cxr/boosting.hpp"
#include "ecg2cxr/common.hpp"
#include "ecg2cxr/config.hpp"
#include "ecg2cxr/csv.hpp"
#include "ecg2cxr/explain.hpp"
#include "ecg2cxr/features.hpp"
#include "ecg2cxr/ingest.hpp"
#include "ecg2cxr/metrics.hpp"
#include "ecg2cxr/model_io.hpp"
#include "ecg2cxr/selection.hpp"
#include "ecg2cxr/synth.hpp"

namespace ecg2cxr {

inline constexpr const char* kToolVersion = "1.0.0";

enum class Stage { synth, pair, split, featurize, train, evaluate, explain, report, all };

inline std::optional<Stage> stage_from_name(std::string_view s) {
    if (s == "synth") return Stage::synth;
    if (s == "pair") return Stage::pair;
    if (s == "split") return Stage::split;
    if (s == "featurize") return Stage::featurize;
    if (s == "train") return Stage::train;
    if (s == "evaluate") return Stage::evaluate;
    if (s == "explain") return Stage::explain;
    if (s == "report") return Stage::report;
    if (s == "all") return Stage::all;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Artifact layout
// ---------------------------------------------------------------------------

inline std::string sanitize_label(std::string_view label) {
    std::string out;
    for (char c : label)
        out.push_back((std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_');
    return out;
}

struct ArtifactPaths {
    std::filesystem::path root;

    std::filesystem::path synth_dir() const { return root / "synth"; }
    std::filesystem::path synth_ecg() const { return synth_dir() / "ecg.csv"; }
    std::filesystem::path synth_cxr() const { return synth_dir() / "cxr.csv"; }
    std::filesystem::path synth_demographics() const { return synth_dir() / "demographics.csv"; }
    std::filesystem::path pair_dir() const { return root / "pair"; }
    std::filesystem::path pairs_csv() const { return pair_dir() / "pairs.csv"; }
    std::filesystem::path split_dir() const { return root / "split"; }
    std::filesystem::path samples_csv() const { return split_dir() / "samples.csv"; }
    std::filesystem::path features_dir() const { return root / "features"; }
    std::filesystem::path features_csv() const { return features_dir() / "features.csv"; }
    std::filesystem::path labels_csv() const { return features_dir() / "labels.csv"; }
    std::filesystem::path models_dir() const { return root / "models"; }
    std::filesystem::path model_file(std::string_view label) const {
        return models_dir() / (sanitize_label(label) + ".json");
    }
    std::filesystem::path rfe_trace_csv(std::string_view label) const {
        return models_dir() / ("rfe_" + sanitize_label(label) + ".csv");
    }
    std::filesystem::path loss_trace_csv(std::string_view label) const {
        return models_dir() / ("loss_" + sanitize_label(label) + ".csv");
    }
    std::filesystem::path evaluate_dir() const { return root / "evaluate"; }
    std::filesystem::path metrics_csv() const { return evaluate_dir() / "metrics.csv"; }
    std::filesystem::path calibration_csv(std::string_view label) const {
        return evaluate_dir() / ("calibration_" + sanitize_label(label) + ".csv");
    }
    std::filesystem::path dca_csv(std::string_view label) const {
        return evaluate_dir() / ("dca_" + sanitize_label(label) + ".csv");
    }
    std::filesystem::path calibrator_json(std::string_view label) const {
        return evaluate_dir() / ("calibrator_" + sanitize_label(label) + ".json");
    }
    std::filesystem::path report_json(std::string_view label) const {
        return evaluate_dir() / ("report_" + sanitize_label(label) + ".json");
    }
    std::filesystem::path explain_dir() const { return root / "explain"; }
    std::filesystem::path shap_summary_csv(std::string_view label) const {
        return explain_dir() / ("shap_summary_" + sanitize_label(label) + ".csv");
    }
    std::filesystem::path shap_values_csv(std::string_view label) const {
        return explain_dir() / ("shap_values_" + sanitize_label(label) + ".csv");
    }
    std::filesystem::path report_dir() const { return root / "report"; }
    std::filesystem::path report_csv() const { return report_dir() / "report.csv"; }
    std::filesystem::path summary_txt() const { return report_dir() / "summary.txt"; }
};

struct RunOptions {
    std::vector<std::string> label_subset;  // empty = all schema labels
    int jobs_override = 0;                  // 0 = use config
    std::filesystem::path out_override;     // empty = use config
};

namespace pipe_detail {

inline PipelineConfig effective_config(PipelineConfig cfg, const RunOptions& opt) {
    if (!opt.out_override.empty()) cfg.output_dir = opt.out_override;
    if (opt.jobs_override > 0) cfg.jobs = opt.jobs_override;
    return cfg;
}

inline std::vector<std::string> effective_labels(const PipelineConfig& cfg, const RunOptions& opt) {
    // Per-label artifact files are keyed by the sanitized name; collisions
    // would silently overwrite each other.
    std::set<std::string> sanitized;
    for (const auto& l : cfg.labels)
        if (!sanitized.insert(sanitize_label(l)).second)
            throw ConfigError("label \"" + l + "\" collides with another label after filename "
                              "sanitization");
    if (opt.label_subset.empty()) return cfg.labels;
    for (const auto& l : opt.label_subset)
        if (std::find(cfg.labels.begin(), cfg.labels.end(), l) == cfg.labels.end())
            throw ConfigError("--labels: \"" + l + "\" is not in the configured label schema");
    return opt.label_subset;
}

inline void require_artifact(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw DataError("missing upstream artifact: " + p.string());
}

inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

class StageTimer {
  public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    long long elapsed_ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

inline void write_manifest(const std::filesystem::path& dir, const char* stage,
                           const PipelineConfig& cfg, const std::vector<std::string>& labels,
                           const std::vector<std::filesystem::path>& inputs,
                           const std::vector<std::filesystem::path>& outputs, long long wall_ms) {
    nlohmann::json j;
    j["schema"] = "ecg2cxr.manifest";
    j["version"] = 1;
    j["tool_version"] = kToolVersion;
    j["stage"] = stage;
    j["config_hash"] = hash_hex(fnv1a64(config_to_json(cfg).dump()));
    j["labels"] = labels;
    j["inputs"] = nlohmann::json::object();
    for (const auto& p : inputs) j["inputs"][p.string()] = hash_file_hex(p);
    j["outputs"] = nlohmann::json::object();
    for (const auto& p : outputs) j["outputs"][p.string()] = hash_file_hex(p);
    j["wall_ms"] = wall_ms;
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write manifest in " + dir.string());
    out << j.dump(2) << "\n";
}

}  // namespace pipe_detail

// ---------------------------------------------------------------------------
// Artifact readers (the written CSV formats are part of the contract)
// ---------------------------------------------------------------------------

struct SampleRow {
    std::string sample_id, patient_id, ecg_study_id, cxr_study_id;
    std::int64_t delta_seconds = 0;
    Fold fold = Fold::train;
};

inline std::vector<SampleRow> read_sample_rows(const std::filesystem::path& path, bool with_fold) {
    const CsvTable csv = read_csv(path);
    const std::size_t c_sid = csv.require_column("sample_id");
    const std::size_t c_pid = csv.require_column("patient_id");
    const std::size_t c_ecg = csv.require_column("ecg_study_id");
    const std::size_t c_cxr = csv.require_column("cxr_study_id");
    const std::size_t c_delta = csv.require_column("delta_seconds");
    const std::size_t c_fold = with_fold ? csv.require_column("fold") : 0;
    std::vector<SampleRow> out;
    out.reserve(csv.rows.size());
    for (const auto& row : csv.rows) {
        SampleRow s;
        s.sample_id = row.at(c_sid);
        s.patient_id = row.at(c_pid);
        s.ecg_study_id = row.at(c_ecg);
        s.cxr_study_id = row.at(c_cxr);
        const auto delta = parse_int(row.at(c_delta));
        if (!delta) throw DataError(path.string() + ": bad delta_seconds value");
        s.delta_seconds = *delta;
        if (with_fold) {
            const auto f = fold_from_name(row.at(c_fold));
            if (!f) throw DataError(path.string() + ": bad fold value \"" + row.at(c_fold) + "\"");
            s.fold = *f;
        }
        out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError(path.string() + ": zero samples");
    return out;
}

struct FoldRows {
    std::vector<std::size_t> train, valid, test;
};

inline FoldRows fold_rows(const std::vector<SampleRow>& samples) {
    FoldRows out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        switch (samples[i].fold) {
            case Fold::train: out.train.push_back(i); break;
            case Fold::validation: out.valid.push_back(i); break;
            case Fold::test: out.test.push_back(i); break;
        }
    }
    return out;
}

// label -> per-row 0/1, aligned with the feature matrix rows.
inline std::map<std::string, std::vector<std::uint8_t>> read_label_columns(
    const std::filesystem::path& path, const std::vector<std::string>& labels,
    const std::vector<std::string>& expected_sample_ids) {
    const CsvTable csv = read_csv(path);
    const std::size_t c_sid = csv.require_column("sample_id");
    std::map<std::string, std::vector<std::uint8_t>> out;
    std::vector<std::size_t> cols;
    for (const auto& l : labels) {
        cols.push_back(csv.require_column(l));
        out[l] = {};
        out[l].reserve(csv.rows.size());
    }
    if (csv.rows.size() != expected_sample_ids.size())
        throw DataError(path.string() + ": row count does not match the feature matrix");
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        if (csv.rows[r].at(c_sid) != expected_sample_ids[r])
            throw DataError(path.string() + ": sample order does not match the feature matrix");
        for (std::size_t li = 0; li < labels.size(); ++li) {
            const auto& v = csv.rows[r].at(cols[li]);
            if (v != "0" && v != "1") throw DataError(path.string() + ": label cells must be 0 or 1");
            out[labels[li]].push_back(v == "1" ? 1 : 0);
        }
    }
    return out;
}

inline std::vector<std::uint8_t> gather(const std::vector<std::uint8_t>& y,
                                        const std::vector<std::size_t>& rows) {
    std::vector<std::uint8_t> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(y[r]);
    return out;
}

namespace pipe_detail {

struct DataPaths {
    std::filesystem::path ecg, cxr, demographics;
};

inline DataPaths input_data_paths(const PipelineConfig& cfg) {
    const ArtifactPaths art{cfg.output_dir};
    if (cfg.data.source == "synth")
        return {art.synth_ecg(), art.synth_cxr(), art.synth_demographics()};
    return {cfg.data.ecg_csv, cfg.data.cxr_csv, cfg.data.demographics_csv};
}

}  // namespace pipe_detail

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void run_synth_stage(const PipelineConfig& cfg) {
    using namespace pipe_detail;
    if (cfg.data.source != "synth")
        throw ConfigError("synth stage requires data.source == \"synth\"");
    StageTimer timer;
    const ArtifactPaths art{cfg.output_dir};
    SynthConfig synth = cfg.synth;
    synth.pairing_tolerance_seconds = cfg.pairing.tolerance_seconds();
    const SynthSummary s = generate(synth, art.synth_dir());
    std::cout << "stage=synth patients=" << s.n_patients << " ecgs=" << s.n_ecgs
              << " cxrs=" << s.n_cxrs << " intended_paired=" << s.n_cxrs_intended_paired << "\n";
    write_manifest(art.synth_dir(), "synth", cfg, cfg.labels, {},
                   {art.synth_ecg(), art.synth_cxr(), art.synth_demographics(),
                    art.synth_dir() / "latent.csv", art.synth_dir() / "truth.json"},
                   timer.elapsed_ms());
}

inline void run_pair_stage(const PipelineConfig& cfg) {
    using namespace pipe_detail;
    StageTimer timer;
    const ArtifactPaths art{cfg.output_dir};
    const DataPaths paths = input_data_paths(cfg);
    require_artifact(paths.ecg);
    require_artifact(paths.cxr);

    const EcgTable ecg = parse_ecg_table(paths.ecg, cfg.data.ecg_columns, cfg.data.delimiter);
    const CxrTable cxr = parse_cxr_labels(paths.cxr, cfg.labels, cfg.data.cxr_columns,
                                          cfg.data.delimiter);
    const PairingResult pairing =
        pair_ecg_cxr(ecg.studies, cxr.studies, cfg.pairing.tolerance_seconds());
    if (pairing.pairs.empty()) throw DataError("pairing produced zero samples");

    std::filesystem::create_directories(art.pair_dir());
    std::vector<std::vector<std::string>> rows;
    rows.reserve(pairing.pairs.size());
    for (const auto& p : pairing.pairs) {
        const auto& e = ecg.studies[p.ecg_index];
        const auto& x = cxr.studies[p.cxr_index];
        rows.push_back({p.sample_id, x.patient_id, e.study_id, x.study_id,
                        std::to_string(p.delta_seconds)});
    }
    write_csv(art.pairs_csv(),
              {"sample_id", "patient_id", "ecg_study_id", "cxr_study_id", "delta_seconds"}, rows);
    std::cout << "stage=pair pairs=" << pairing.pairs.size()
              << " unmatched_cxrs=" << pairing.unmatched_cxrs
              << " ecg_rows_dropped=" << ecg.stats.rows_dropped
              << " cxr_rows_dropped=" << cxr.stats.rows_dropped << "\n";
    write_manifest(art.pair_dir(), "pair", cfg, cfg.labels, {paths.ecg, paths.cxr},
                   {art.pairs_csv()}, timer.elapsed_ms());
}

inline void run_split_stage(const PipelineConfig& cfg) {
    using namespace pipe_detail;
    StageTimer timer;
    const ArtifactPaths art{cfg.output_dir};
    const DataPaths paths = input_data_paths(cfg);
    require_artifact(art.pairs_csv());
    require_artifact(paths.demographics);

    const auto samples = read_sample_rows(art.pairs_csv(), false);
    const DemographicsMap demo = parse_demographics(paths.demographics, cfg.data.delimiter);

    // Patient-level split; sample rows only carry patient ids here, so feed
    // the splitter a minimal alias of CXR studies.
    std::vector<CxrStudy> cxr_alias(samples.size());
    std::vector<PairedSample> pairs(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        cxr_alias[i].patient_id = samples[i].patient_id;
        pairs[i].cxr_index = i;
        pairs[i].sample_id = samples[i].sample_id;
    }
    const SplitAssignment split =
        stratified_split(pairs, cxr_alias, demo, cfg.split.ratios, cfg.split.seed);

    std::filesystem::create_directories(art.split_dir());
    std::vector<std::vector<std::string>> rows;
    rows.reserve(samples.size());
    std::size_t n_fold[3] = {0, 0, 0};
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Fold f = split.fold_per_sample[i];
        ++n_fold[static_cast<int>(f)];
        rows.push_back({samples[i].sample_id, samples[i].patient_id, samples[i].ecg_study_id,
                        samples[i].cxr_study_id, std::to_string(samples[i].delta_seconds),
                        fold_name(f)});
    }
    write_csv(art.samples_csv(),
              {"sample_id", "patient_id", "ecg_study_id", "cxr_study_id", "delta_seconds", "fold"},
              rows);
    std::cout << "stage=split samples=" << samples.size() << " train=" << n_fold[0]
              << " validation=" << n_fold[1] << " test=" << n_fold[2] << "\n";
    write_manifest(art.split_dir(), "split", cfg, cfg.labels,
                   {art.pairs_csv(), paths.demographics}, {art.samples_csv()}, timer.elapsed_ms());
}

inline void run_featurize_stage(const PipelineConfig& cfg) {
    using namespace pipe_detail;
    StageTimer timer;
    const ArtifactPaths art{cfg.output_dir};
    const DataPaths paths = input_data_paths(cfg);
    require_artifact(art.samples_csv());
    require_artifact(paths.ecg);
    require_artifact(paths.cxr);
    require_artifact(paths.demographics);

    const auto samples = read_sample_rows(art.samples_csv(), true);
    const EcgTable ecg = parse_ecg_table(paths.ecg, cfg.data.ecg_columns, cfg.data.delimiter);
    const CxrTable cxr = parse_cxr_labels(paths.cxr, cfg.labels, cfg.data.cxr_columns,
                                          cfg.data.delimiter);
    const DemographicsMap demo = parse_demographics(paths.demographics, cfg.data.delimiter);

    std::map<std::pair<std::string, std::string>, std::size_t> ecg_index, cxr_index;
    for (std::size_t i = 0; i < ecg.studies.size(); ++i)
        ecg_index[{ecg.studies[i].patient_id, ecg.studies[i].study_id}] = i;
    for (std::size_t i = 0; i < cxr.studies.size(); ++i)
        cxr_index[{cxr.studies[i].patient_id, cxr.studies[i].study_id}] = i;

    std::vector<std::string> sample_ids;
    std::vector<FeatureVector> fvs;
    std::vector<std::vector<std::string>> label_rows;
    sample_ids.reserve(samples.size());
    fvs.reserve(samples.size());
    label_rows.reserve(samples.size());
    for (const auto& s : samples) {
        const auto ei = ecg_index.find({s.patient_id, s.ecg_study_id});
        if (ei == ecg_index.end())
            throw DataError("sample " + s.sample_id + " references unknown ECG study " +
                            s.ecg_study_id);
        const auto xi = cxr_index.find({s.patient_id, s.cxr_study_id});
        if (xi == cxr_index.end())
            throw DataError("sample " + s.sample_id + " references unknown CXR study " +
                            s.cxr_study_id);
        const auto di = demo.find(s.patient_id);
        if (di == demo.end()) throw DataError("no demographics for patient \"" + s.patient_id + "\"");

        const RawEcgMeasurement cleaned = clean_measurements(ecg.studies[ei->second].raw);
        fvs.push_back(derive_features(cleaned, di->second.age, di->second.sex));
        sample_ids.push_back(s.sample_id);

        std::vector<std::string> lr = {s.sample_id};
        for (std::uint8_t v : cxr.studies[xi->second].labels) lr.push_back(v ? "1" : "0");
        label_rows.push_back(std::move(lr));
    }

    std::filesystem::create_directories(art.features_dir());
    write_feature_csv(art.features_csv(), build_matrix(sample_ids, fvs));
    std::vector<std::string> label_header = {"sample_id"};
    for (const auto& l : cfg.labels) label_header.push_back(l);
    write_csv(art.labels_csv(), label_header, label_rows);
    std::cout << "stage=featurize samples=" << samples.size() << " features=" << kFeatureCount
              << "\n";
    write_manifest(art.features_dir(), "featurize", cfg, cfg.labels,
                   {art.samples_csv(), paths.ecg, paths.cxr, paths.demographics},
                   {art.features_csv(), art.labels_csv()}, timer.elapsed_ms());
}

inline void run_train_stage(const PipelineConfig& cfg, const std::vector<std::string>& labels) {
    using namespace pipe_detail;
    StageTimer timer;
    const ArtifactPaths art{cfg.output_dir};
    require_artifact(art.features_csv());
    require_artifact(art.labels_csv());
    require_artifact(art.samples_csv());

    const FeatureMatrix features = read_feature_csv(art.features_csv());
    const auto samples = read_sample_rows(art.samples_csv(), true);
    if (samples.size() != features.n_rows)
        throw DataError("samples.csv and features.csv row counts differ");
    const auto label_cols = read_label_columns(art.labels_csv(), labels, features.sample_ids);
    const FoldRows folds = fold_rows(samples);
    const FeatureMatrix train_m = select_rows(features, folds.train);
    const FeatureMatrix valid_m = select_rows(features, folds.valid);

    struct LabelResult {
        StumpEnsemble model;
        RfeTrace rfe;
        TrainTrace trace;
        bool used_rfe = false;
    };
    std::vector<LabelResult> results(labels.size());

    parallel_for(labels.size(), cfg.jobs, [&](std::size_t li) {
        const auto& label = labels[li];
        const auto y_train = gather(label_cols.at(label), folds.train);
        const auto y_valid = gather(label_cols.at(label), folds.valid);
        LabelResult& res = results[li];

        std::vector<std::string> active = features.feature_names;
        if (cfg.rfe.enabled) {
            res.rfe = run_rfe(train_m, y_train, valid_m, y_valid, cfg.boosting,
                              cfg.rfe.min_features);
            active = res.rfe.selected;
            res.used_rfe = true;
        }
        const FeatureMatrix tr = select_columns(train_m, active);
        const FeatureMatrix va = select_columns(valid_m, active);
        const WatchSet watch{&va, y_valid};
        res.model = train(tr, y_train, cfg.boosting, &watch, &res.trace);
    });

    std::filesystem::create_directories(art.models_dir());
    std::vector<std::filesystem::path> outputs;
    for (std::size_t li = 0; li < labels.size(); ++li) {
        const auto& label = labels[li];
        const auto& res = results[li];
        save_model(art.model_file(label), res.model, label);
        outputs.push_back(art.model_file(label));

        if (res.used_rfe) {
            std::vector<std::vector<std::string>> rows;
            for (std::size_t s = 0; s < res.rfe.steps.size(); ++s) {
                const auto& step = res.rfe.steps[s];
                rows.push_back({std::to_string(s + 1), std::to_string(step.active.size()),
                                step.dropped, fmt_g17(step.validation_auroc)});
            }
            write_csv(art.rfe_trace_csv(label), {"step", "n_features", "dropped", "val_auroc"},
                      rows);
            outputs.push_back(art.rfe_trace_csv(label));
        }
        {
            std::vector<std::vector<std::string>> rows;
            for (std::size_t r = 0; r < res.trace.train_loss.size(); ++r) {
                std::vector<std::string> row = {std::to_string(r), fmt_g17(res.trace.train_loss[r])};
                if (!res.trace.valid_loss.empty()) row.push_back(fmt_g17(res.trace.valid_loss[r]));
                rows.push_back(std::move(row));
            }
            std::vector<std::string> header = {"round", "train_loss"};
            if (!res.trace.valid_loss.empty()) header.push_back("valid_loss");
            write_csv(art.loss_trace_csv(label), header, rows);
            outputs.push_back(art.loss_trace_csv(label));
        }
        std::cout << "stage=train label=" << label << " stumps=" << res.model.stumps.size()
                  << " features=" << res.model.feature_names.size()
                  << " train_loss=" << fmt_fixed(res.trace.train_loss.back(), 6);
        if (res.used_rfe) std::cout << " rfe_val_auroc=" << fmt_fixed(res.rfe.selected_auroc, 6);
        std::cout << "\n";
    }
    write_manifest(art.models_dir(), "train", cfg, labels,
                   {art.features_csv(), art.labels_csv(), art.samples_csv()}, outputs,
                   timer.elapsed_ms());
}

inline void run_evaluate_stage(const PipelineConfig& cfg, const std::vector<std::string>& labels) {
    using namespace pipe_detail;
    StageTimer timer;
    const ArtifactPaths art{cfg.output_dir};
    require_artifact(art.features_csv());
    require_artifact(art.labels_csv());
    require_artifact(art.samples_csv());

    const FeatureMatrix features = read_feature_csv(art.features_csv());
    const auto samples = read_sample_rows(art.samples_csv(), true);
    const auto label_cols = read_label_columns(art.labels_csv(), labels, features.sample_ids);
    const FoldRows folds = fold_rows(samples);
    const FeatureMatrix valid_m = select_rows(features, folds.valid);
    const FeatureMatrix test_m = select_rows(features, folds.test);

    struct LabelEval {
        EvaluationReport report;
        IsotonicModel calibrator;
    };
    std::vector<LabelEval> evals(labels.size());
    std::vector<StumpEnsemble> models(labels.size());
    for (std::size_t li = 0; li < labels.size(); ++li) {
        require_artifact(art.model_file(labels[li]));
        models[li] = load_model(art.model_file(labels[li])).model;
    }

    parallel_for(labels.size(), cfg.jobs, [&](std::size_t li) {
        const auto& label = labels[li];
        const auto y_valid = gather(label_cols.at(label), folds.valid);
        const auto y_test = gather(label_cols.at(label), folds.test);
        const FeatureMatrix va = select_columns(valid_m, models[li].feature_names);
        const FeatureMatrix te = select_columns(test_m, models[li].feature_names);
        const auto valid_scores = predict_probas(models[li], va);
        const auto test_scores = predict_probas(models[li], te);
        evals[li].calibrator = fit_isotonic(valid_scores, y_valid);
        evals[li].report =
            evaluate_label(label, test_scores, evals[li].calibrator, y_test, cfg.evaluation);
    });

    std::filesystem::create_directories(art.evaluate_dir());
    std::vector<std::filesystem::path> outputs;
    std::vector<std::vector<std::string>> metric_rows;
    for (std::size_t li = 0; li < labels.size(); ++li) {
        const auto& label = labels[li];
        const auto& rep = evals[li].report;
        metric_rows.push_back({label, fmt_g17(rep.auroc.point), fmt_g17(rep.auroc.ci_low),
                               fmt_g17(rep.auroc.ci_high), std::to_string(rep.n_pos),
                               std::to_string(rep.n_neg),
                               std::to_string(rep.auroc.n_degenerate_resamples)});

        std::vector<std::vector<std::string>> cal_rows;
        for (const auto& b : rep.calibration.bins)
            cal_rows.push_back({fmt_g17((b.lo + b.hi) / 2.0), fmt_g17(b.mean_pred),
                                fmt_g17(b.obs_freq), std::to_string(b.count)});
        write_csv(art.calibration_csv(label), {"bin_mid", "mean_pred", "obs_freq", "count"},
                  cal_rows);
        outputs.push_back(art.calibration_csv(label));

        std::vector<std::vector<std::string>> dca_rows;
        for (std::size_t k = 0; k < rep.dca.thresholds.size(); ++k)
            dca_rows.push_back({fmt_g17(rep.dca.thresholds[k]), fmt_g17(rep.dca.nb_model[k]),
                                fmt_g17(rep.dca.nb_all[k]), fmt_g17(rep.dca.nb_none[k])});
        write_csv(art.dca_csv(label), {"threshold", "nb_model", "nb_all", "nb_none"}, dca_rows);
        outputs.push_back(art.dca_csv(label));

        {
            std::ofstream out(art.calibrator_json(label), std::ios::binary);
            if (!out) throw DataError("cannot write " + art.calibrator_json(label).string());
            out << serialize_isotonic(evals[li].calibrator);
        }
        outputs.push_back(art.calibrator_json(label));
        {
            std::ofstream out(art.report_json(label), std::ios::binary);
            if (!out) throw DataError("cannot write " + art.report_json(label).string());
            out << report_to_json(rep).dump(2) << "\n";
        }
        outputs.push_back(art.report_json(label));

        std::cout << "stage=evaluate label=" << label << " auroc=" << fmt_fixed(rep.auroc.point, 6)
                  << " ci_low=" << fmt_fixed(rep.auroc.ci_low, 6)
                  << " ci_high=" << fmt_fixed(rep.auroc.ci_high, 6) << " n_pos=" << rep.n_pos
                  << " n_neg=" << rep.n_neg << "\n";
    }
    write_csv(art.metrics_csv(),
              {"label", "auroc", "ci_low", "ci_high", "n_pos", "n_neg", "n_degenerate"},
              metric_rows);
    outputs.push_back(art.metrics_csv());
    write_manifest(art.evaluate_dir(), "evaluate", cfg, labels,
                   {art.features_csv(), art.labels_csv(), art.samples_csv()}, outputs,
                   timer.elapsed_ms());
}

inline void run_explain_stage(const PipelineConfig& cfg, const std::vector<std::string>& labels) {
    using namespace pipe_detail;
    StageTimer timer;
    const ArtifactPaths art{cfg.output_dir};
    require_artifact(art.features_csv());
    require_artifact(art.samples_csv());

    const FeatureMatrix features = read_feature_csv(art.features_csv());
    const auto samples = read_sample_rows(art.samples_csv(), true);
    const FoldRows folds = fold_rows(samples);

    // Background = training fold, deterministically subsampled by seed; the
    // same rows back every label's explanations.
    std::vector<std::size_t> bg_rows = folds.train;
    if (bg_rows.size() > cfg.explain.background_max_rows) {
        Rng rng = Rng::stream(cfg.explain.seed, 0);
        rng.shuffle(bg_rows);
        bg_rows.resize(cfg.explain.background_max_rows);
        std::sort(bg_rows.begin(), bg_rows.end());
    }
    const FeatureMatrix background_m = select_rows(features, bg_rows);
    const FeatureMatrix test_m = select_rows(features, folds.test);

    std::vector<StumpEnsemble> models(labels.size());
    for (std::size_t li = 0; li < labels.size(); ++li) {
        require_artifact(art.model_file(labels[li]));
        models[li] = load_model(art.model_file(labels[li])).model;
    }
    std::vector<ShapSummary> summaries(labels.size());
    parallel_for(labels.size(), cfg.jobs, [&](std::size_t li) {
        const FeatureMatrix bg = select_columns(background_m, models[li].feature_names);
        const FeatureMatrix te = select_columns(test_m, models[li].feature_names);
        summaries[li] = summarize(models[li], te, ShapBackground(models[li], bg));
    });

    std::filesystem::create_directories(art.explain_dir());
    std::vector<std::filesystem::path> outputs;
    for (std::size_t li = 0; li < labels.size(); ++li) {
        const auto& label = labels[li];
        const auto& sum = summaries[li];

        std::vector<std::vector<std::string>> value_rows;
        value_rows.reserve(sum.records.size());
        for (const auto& rec : sum.records)
            value_rows.push_back({test_m.sample_ids[rec.row],
                                  sum.feature_names[static_cast<std::size_t>(rec.feature)],
                                  is_missing(rec.value) ? std::string{} : fmt_g17(rec.value),
                                  fmt_g17(rec.contribution)});
        write_csv(art.shap_values_csv(label), {"sample_id", "feature", "value", "shap"}, value_rows);
        outputs.push_back(art.shap_values_csv(label));

        // Summary ordered by rank.
        std::vector<std::size_t> order(sum.feature_names.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return sum.rank[a] < sum.rank[b]; });
        std::vector<std::vector<std::string>> sum_rows;
        for (std::size_t f : order)
            sum_rows.push_back(
                {sum.feature_names[f], fmt_g17(sum.mean_abs[f]), std::to_string(sum.rank[f])});
        write_csv(art.shap_summary_csv(label), {"feature", "mean_abs_shap", "rank"}, sum_rows);
        outputs.push_back(art.shap_summary_csv(label));

        std::cout << "stage=explain label=" << label << " rows=" << test_m.n_rows
                  << " background_rows=" << background_m.n_rows
                  << " top_feature=" << sum.feature_names[order.front()] << "\n";
    }
    write_manifest(art.explain_dir(), "explain", cfg, labels,
                   {art.features_csv(), art.samples_csv()}, outputs, timer.elapsed_ms());
}

inline void run_report_stage(const PipelineConfig& cfg, const std::vector<std::string>& labels) {
    using namespace pipe_detail;
    StageTimer timer;
    const ArtifactPaths art{cfg.output_dir};
    require_artifact(art.metrics_csv());

    const CsvTable metrics = read_csv(art.metrics_csv());
    const std::size_t c_label = metrics.require_column("label");
    const std::size_t c_auroc = metrics.require_column("auroc");
    const std::size_t c_lo = metrics.require_column("ci_low");
    const std::size_t c_hi = metrics.require_column("ci_high");
    const std::size_t c_pos = metrics.require_column("n_pos");
    const std::size_t c_neg = metrics.require_column("n_neg");

    struct Entry {
        std::string label;
        double auroc;
        std::string lo, hi, pos, neg;
        std::string top_feature;
        std::string n_features;
    };
    std::vector<Entry> entries;
    for (const auto& row : metrics.rows) {
        const std::string& label = row.at(c_label);
        if (std::find(labels.begin(), labels.end(), label) == labels.end()) continue;
        Entry e;
        e.label = label;
        const auto a = parse_double(row.at(c_auroc));
        if (!a) throw DataError("metrics.csv: bad auroc for label " + label);
        e.auroc = *a;
        e.lo = row.at(c_lo);
        e.hi = row.at(c_hi);
        e.pos = row.at(c_pos);
        e.neg = row.at(c_neg);
        // Optional joins from the train/explain stages.
        if (std::filesystem::exists(art.model_file(label))) {
            const auto loaded = load_model(art.model_file(label));
            e.n_features = std::to_string(loaded.model.feature_names.size());
        }
        if (std::filesystem::exists(art.shap_summary_csv(label))) {
            const CsvTable s = read_csv(art.shap_summary_csv(label));
            if (!s.rows.empty()) e.top_feature = s.rows.front().at(s.require_column("feature"));
        }
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw DataError("metrics.csv contains no rows for the requested labels");
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.auroc != b.auroc) return a.auroc > b.auroc;
        return a.label < b.label;
    });

    std::filesystem::create_directories(art.report_dir());
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : entries)
        rows.push_back({e.label, fmt_g17(e.auroc), e.lo, e.hi, e.pos, e.neg, e.n_features,
                        e.top_feature});
    write_csv(art.report_csv(),
              {"label", "auroc", "ci_low", "ci_high", "n_pos", "n_neg", "n_features", "top_feature"},
              rows);

    std::ofstream out(art.summary_txt(), std::ios::binary);
    if (!out) throw DataError("cannot write " + art.summary_txt().string());
    out << "Per-label test AUROC (95% bootstrap CI), best first\n";
    out << "---------------------------------------------------\n";
    for (const auto& e : entries) {
        out << e.label << ": " << fmt_fixed(e.auroc, 3);
        const auto lo = parse_double(e.lo), hi = parse_double(e.hi);
        if (lo && hi) out << " (" << fmt_fixed(*lo, 3) << "-" << fmt_fixed(*hi, 3) << ")";
        if (!e.n_features.empty()) out << ", " << e.n_features << " features";
        if (!e.top_feature.empty()) out << ", top feature " << e.top_feature;
        out << "\n";
    }
    std::cout << "stage=report labels=" << entries.size() << " best=" << entries.front().label
              << " best_auroc=" << fmt_fixed(entries.front().auroc, 6) << "\n";
    write_manifest(art.report_dir(), "report", cfg, labels, {art.metrics_csv()},
                   {art.report_csv(), art.summary_txt()}, timer.elapsed_ms());
}

// ---------------------------------------------------------------------------
// Dispatcher
// ---------------------------------------------------------------------------

inline void run_stage(Stage stage, const PipelineConfig& base_cfg, const RunOptions& opt = {}) {
    const PipelineConfig cfg = pipe_detail::effective_config(base_cfg, opt);
    const auto labels = pipe_detail::effective_labels(cfg, opt);
    std::filesystem::create_directories(cfg.output_dir);
    switch (stage) {
        case Stage::synth: run_synth_stage(cfg); break;
        case Stage::pair: run_pair_stage(cfg); break;
        case Stage::split: run_split_stage(cfg); break;
        case Stage::featurize: run_featurize_stage(cfg); break;
        case Stage::train: run_train_stage(cfg, labels); break;
        case Stage::evaluate: run_evaluate_stage(cfg, labels); break;
        case Stage::explain: run_explain_stage(cfg, labels); break;
        case Stage::report: run_report_stage(cfg, labels); break;
        case Stage::all:
            if (cfg.data.source == "synth") run_synth_stage(cfg);
            run_pair_stage(cfg);
            run_split_stage(cfg);
            run_featurize_stage(cfg);
            run_train_stage(cfg, labels);
            run_evaluate_stage(cfg, labels);
            run_explain_stage(cfg, labels);
            run_report_stage(cfg, labels);
            break;
    }
}

}  // namespace ecg2cxr
