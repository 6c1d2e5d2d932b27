#include <catch2/catch_amalgamated.hpp>

#include "ecg2cxr/features.hpp"
#include "ecg2cxr/ingest.hpp"
#include "ecg2cxr/metrics.hpp"
#include "ecg2cxr/synth.hpp"

#include "oracles.hpp"

#include <filesystem>
#include <map>

using namespace ecg2cxr;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

double median(std::vector<double> v) {
    REQUIRE(!v.empty());
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

TEST_CASE("generate is deterministic per seed") {
    TempDir a("synth_det_a"), b("synth_det_b"), c("synth_det_c");
    SynthConfig cfg;
    cfg.n_patients = 150;
    cfg.labels = default_synth_labels();
    generate(cfg, a.path);
    generate(cfg, b.path);
    SynthConfig other = cfg;
    other.seed = 77;
    generate(other, c.path);
    for (const char* name : {"ecg.csv", "cxr.csv", "demographics.csv", "latent.csv", "truth.json"}) {
        REQUIRE(read_file(a.path / name) == read_file(b.path / name));
    }
    REQUIRE(read_file(a.path / "ecg.csv") != read_file(c.path / "ecg.csv"));
}

TEST_CASE("generated cohort matches the reference marginals (medians inside IQRs)") {
    TempDir dir("synth_marginals");
    SynthConfig cfg;
    cfg.n_patients = 10000;
    cfg.missingness_rate = 0.05;
    cfg.labels = default_synth_labels();
    generate(cfg, dir.path);

    const auto ecg = parse_ecg_table(dir.path / "ecg.csv", EcgColumnMap{});
    std::map<std::string, std::vector<double>> derived;
    for (const auto& study : ecg.studies) {
        const auto fv = derive_features(clean_measurements(study.raw), std::nullopt, std::nullopt);
        for (int f = 0; f < kFeatureCount; ++f)
            if (fv.values[f]) derived[std::string(kFeatureNames[f])].push_back(*fv.values[f]);
    }

    // Reference cohort median [IQR] table; membership check, not equality.
    const std::map<std::string, std::pair<double, double>> iqr = {
        {"rr_interval", {612, 870}},    {"qrs_axis", {-15, 48}},
        {"p_axis", {34, 65}},           {"t_axis", {16, 70}},
        {"p_duration", {96, 120}},      {"qrs_duration", {84, 106}},
        {"pr_interval", {138, 176}},    {"qt_interval", {350, 418}},
        {"qrst_interval", {254, 316}},  {"pt_interval", {500, 586}},
        {"qtc", {424, 472}},            {"p_rr_ratio", {0.12, 0.17}},
        {"qrs_rr_ratio", {0.11, 0.16}}, {"qt_rr_ratio", {0.47, 0.58}},
        {"pr_qt_ratio", {0.36, 0.47}},  {"p_qrs_axis_diff", {15, 62}},
        {"qrs_t_axis_diff", {18, 101}}, {"p_t_axis_diff", {11, 49}},
    };
    for (const auto& [feature, range] : iqr) {
        INFO("feature " << feature);
        const double med = median(derived.at(feature));
        REQUIRE(med >= range.first);
        REQUIRE(med <= range.second);
    }

    // Age distribution: median inside the reference IQR [53, 78].
    const auto demo = parse_demographics(dir.path / "demographics.csv");
    std::vector<double> ages;
    for (const auto& [pid, d] : demo) ages.push_back(*d.age);
    const double age_med = median(ages);
    REQUIRE(age_med >= 53.0);
    REQUIRE(age_med <= 78.0);
}

TEST_CASE("noise prevalence and zero-coefficient labels track their targets") {
    TempDir dir("synth_prev");
    SynthConfig cfg;
    cfg.n_patients = 4000;
    SynthLabelSpec noise;
    noise.name = "noise";
    noise.is_noise = true;
    noise.prevalence = 0.25;
    SynthLabelSpec flat;  // planted with beta = 0: prevalence = sigmoid(intercept)
    flat.name = "flat";
    flat.coefficients = {{"qtc", 0.0}};
    flat.intercept = -1.0;
    cfg.labels = {noise, flat};
    generate(cfg, dir.path);

    const auto cxr = parse_cxr_labels(dir.path / "cxr.csv", {"noise", "flat"}, CxrColumnMap{});
    double p_noise = 0.0, p_flat = 0.0;
    for (const auto& s : cxr.studies) {
        p_noise += s.labels[0];
        p_flat += s.labels[1];
    }
    p_noise /= static_cast<double>(cxr.studies.size());
    p_flat /= static_cast<double>(cxr.studies.size());
    REQUIRE(std::fabs(p_noise - 0.25) < 0.02);
    REQUIRE(std::fabs(p_flat - sigmoid(-1.0)) < 0.02);
}

TEST_CASE("strong-signal preset supports AUROC >= 0.80 for a logistic oracle on latent features") {
    TempDir dir("synth_ceiling");
    SynthConfig cfg;
    cfg.n_patients = 4000;
    cfg.labels = default_synth_labels();
    generate(cfg, dir.path);

    const auto latent = read_feature_csv(dir.path / "latent.csv");
    const auto cxr = parse_cxr_labels(dir.path / "cxr.csv",
                                      {"planted_a", "planted_b", "noise_a"}, CxrColumnMap{});
    std::map<std::string, std::size_t> latent_row;
    for (std::size_t r = 0; r < latent.n_rows; ++r) latent_row[latent.sample_ids[r]] = r;

    // planted_a reads qt_rr_ratio, qtc, p_qrs_axis_diff, p_duration.
    const std::vector<std::string> used = {"qt_rr_ratio", "qtc", "p_qrs_axis_diff", "p_duration"};
    std::vector<std::size_t> cols;
    for (const auto& f : used) cols.push_back(latent.require_feature(f));

    std::vector<std::vector<double>> x;
    std::vector<std::uint8_t> y;
    const auto& std_table = synth_standardization();
    for (const auto& s : cxr.studies) {
        const auto it = latent_row.find(s.patient_id);
        REQUIRE(it != latent_row.end());
        std::vector<double> row;
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const auto& [center, scale] = std_table.at(used[k]);
            row.push_back((latent.at(it->second, cols[k]) - center) / scale);
        }
        x.push_back(std::move(row));
        y.push_back(s.labels[0]);
    }

    const std::size_t n_fit = x.size() / 2;
    const auto w = oracles::fit_logistic({x.begin(), x.begin() + n_fit},
                                         {y.begin(), y.begin() + n_fit}, 1500, 0.1);
    std::vector<double> scores;
    std::vector<std::uint8_t> held;
    for (std::size_t i = n_fit; i < x.size(); ++i) {
        scores.push_back(oracles::logistic_score(w, x[i]));
        held.push_back(y[i]);
    }
    REQUIRE(*auroc(scores, held) >= 0.80);
}

TEST_CASE("generated tables feed the ingestion contract end to end") {
    TempDir dir("synth_ingest");
    SynthConfig cfg;
    cfg.n_patients = 300;
    cfg.paired_fraction = 0.8;
    cfg.labels = default_synth_labels();
    const auto summary = generate(cfg, dir.path);
    REQUIRE(summary.n_patients == 300);
    REQUIRE(summary.n_ecgs >= 300);

    const auto ecg = parse_ecg_table(dir.path / "ecg.csv", EcgColumnMap{});
    const auto cxr = parse_cxr_labels(dir.path / "cxr.csv",
                                      {"planted_a", "planted_b", "noise_a"}, CxrColumnMap{});
    REQUIRE(ecg.studies.size() == summary.n_ecgs);
    REQUIRE(cxr.studies.size() == summary.n_cxrs);
    REQUIRE(ecg.stats.rows_dropped == 0);
    REQUIRE(cxr.stats.rows_dropped == 0);

    const auto pairing = pair_ecg_cxr(ecg.studies, cxr.studies, cfg.pairing_tolerance_seconds);
    REQUIRE(pairing.pairs.size() == summary.n_cxrs_intended_paired);
    REQUIRE(pairing.pairs.size() + pairing.unmatched_cxrs == summary.n_cxrs);
}

TEST_CASE("unsatisfiable synth configs are fatal") {
    TempDir dir("synth_bad");
    SynthConfig cfg;
    cfg.labels = default_synth_labels();

    SECTION("prevalence 0") {
        cfg.labels[2].prevalence = 0.0;
        REQUIRE_THROWS_AS(generate(cfg, dir.path), ConfigError);
    }
    SECTION("too few patients") {
        cfg.n_patients = 10;
        REQUIRE_THROWS_AS(generate(cfg, dir.path), ConfigError);
    }
    SECTION("unknown planted feature") {
        cfg.labels[0].coefficients = {{"not_a_feature", 1.0}};
        REQUIRE_THROWS_AS(generate(cfg, dir.path), ConfigError);
    }
    SECTION("no labels") {
        cfg.labels.clear();
        REQUIRE_THROWS_AS(generate(cfg, dir.path), ConfigError);
    }
}
