#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecg2cxr/common.hpp"
#include "ecg2cxr/csv.hpp"
#include "ecg2cxr/rng.hpp"

namespace ecg2cxr {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// The nine machine-read fiducials of one ECG. Presence is explicit; there are
// no sentinel magnitudes.
struct RawEcgMeasurement {
    std::optional<double> rr_interval;  // ms
    std::optional<double> p_onset;      // ms
    std::optional<double> p_end;        // ms
    std::optional<double> qrs_onset;    // ms
    std::optional<double> qrs_end;      // ms
    std::optional<double> t_end;        // ms
    std::optional<double> p_axis;       // degrees
    std::optional<double> qrs_axis;     // degrees
    std::optional<double> t_axis;       // degrees
};

struct EcgStudy {
    std::string patient_id;
    std::string study_id;
    std::int64_t acquired_at = 0;  // epoch seconds, UTC
    RawEcgMeasurement raw;
};

// Binary labels aligned to the dataset's schema order.
struct CxrStudy {
    std::string patient_id;
    std::string study_id;
    std::int64_t reported_at = 0;
    std::vector<std::uint8_t> labels;
};

struct PairedSample {
    std::string sample_id;  // "<patient_id>__<cxr_study_id>"
    std::size_t ecg_index = 0;
    std::size_t cxr_index = 0;
    std::int64_t delta_seconds = 0;  // CXR time minus ECG time, in [0, tolerance]
};

enum class Fold : std::uint8_t { train = 0, validation = 1, test = 2 };

inline const char* fold_name(Fold f) {
    switch (f) {
        case Fold::train: return "train";
        case Fold::validation: return "validation";
        case Fold::test: return "test";
    }
    return "?";
}

inline std::optional<Fold> fold_from_name(std::string_view s) {
    if (s == "train") return Fold::train;
    if (s == "validation") return Fold::validation;
    if (s == "test") return Fold::test;
    return std::nullopt;
}

struct SplitAssignment {
    std::vector<Fold> fold_per_sample;
    std::map<std::string, Fold> fold_per_patient;
};

struct Demographics {
    std::optional<double> age;  // years
    std::optional<int> sex;     // 0 = female, 1 = male
};

using DemographicsMap = std::map<std::string, Demographics>;

struct SplitRatios {
    int train = 18;
    int validation = 1;
    int test = 1;
};

struct ParseStats {
    std::size_t rows_total = 0;
    std::size_t rows_dropped = 0;
    std::size_t duplicates_dropped = 0;
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct EcgColumnMap {
    std::string patient_id = "patient_id";
    std::string study_id = "study_id";
    std::string acquired_at = "acquired_at";
    std::string rr_interval = "rr_interval";
    std::string p_onset = "p_onset";
    std::string p_end = "p_end";
    std::string qrs_onset = "qrs_onset";
    std::string qrs_end = "qrs_end";
    std::string t_end = "t_end";
    std::string p_axis = "p_axis";
    std::string qrs_axis = "qrs_axis";
    std::string t_axis = "t_axis";
};

struct CxrColumnMap {
    std::string patient_id = "patient_id";
    std::string study_id = "study_id";
    std::string reported_at = "reported_at";
};

struct EcgTable {
    std::vector<EcgStudy> studies;
    ParseStats stats;
};

inline EcgTable parse_ecg_table(const std::filesystem::path& path, const EcgColumnMap& map,
                                char delim = ',') {
    const CsvTable csv = read_csv(path, delim);
    auto col = [&](const std::string& name) {
        auto c = csv.column(name);
        if (!c)
            throw DataError("ECG table " + path.string() + " lacks mapped column \"" + name + "\"");
        return *c;
    };
    const std::size_t c_pid = col(map.patient_id), c_sid = col(map.study_id),
                      c_time = col(map.acquired_at);
    const std::size_t c_rr = col(map.rr_interval), c_po = col(map.p_onset), c_pe = col(map.p_end),
                      c_qo = col(map.qrs_onset), c_qe = col(map.qrs_end), c_te = col(map.t_end),
                      c_pa = col(map.p_axis), c_qa = col(map.qrs_axis), c_ta = col(map.t_axis);

    EcgTable out;
    out.stats.rows_total = csv.rows.size();
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& row : csv.rows) {
        auto cell = [&](std::size_t c) -> std::string_view {
            return c < row.size() ? std::string_view(row[c]) : std::string_view{};
        };
        EcgStudy s;
        s.patient_id = trim(cell(c_pid));
        auto when = parse_timestamp_utc(cell(c_time));
        if (s.patient_id.empty() || !when) {
            ++out.stats.rows_dropped;
            continue;
        }
        s.study_id = trim(cell(c_sid));
        if (!seen.insert({s.patient_id, s.study_id}).second) {
            ++out.stats.duplicates_dropped;
            continue;
        }
        s.acquired_at = *when;
        s.raw.rr_interval = parse_double(cell(c_rr));
        s.raw.p_onset = parse_double(cell(c_po));
        s.raw.p_end = parse_double(cell(c_pe));
        s.raw.qrs_onset = parse_double(cell(c_qo));
        s.raw.qrs_end = parse_double(cell(c_qe));
        s.raw.t_end = parse_double(cell(c_te));
        s.raw.p_axis = parse_double(cell(c_pa));
        s.raw.qrs_axis = parse_double(cell(c_qa));
        s.raw.t_axis = parse_double(cell(c_ta));
        out.studies.push_back(std::move(s));
    }
    if (out.studies.empty())
        throw DataError("ECG table " + path.string() + ": zero parseable rows");
    return out;
}

struct CxrTable {
    std::vector<CxrStudy> studies;
    std::vector<std::string> schema;
    ParseStats stats;
};

inline CxrTable parse_cxr_labels(const std::filesystem::path& path,
                                 const std::vector<std::string>& schema, const CxrColumnMap& map,
                                 char delim = ',') {
    const CsvTable csv = read_csv(path, delim);
    auto col = [&](const std::string& name) {
        auto c = csv.column(name);
        if (!c)
            throw DataError("CXR table " + path.string() + " lacks mapped column \"" + name + "\"");
        return *c;
    };
    const std::size_t c_pid = col(map.patient_id), c_sid = col(map.study_id),
                      c_time = col(map.reported_at);
    std::vector<std::size_t> label_cols;
    for (const auto& label : schema) {
        auto c = csv.column(label);
        if (!c)
            throw DataError("CXR table " + path.string() + " lacks schema label column \"" + label +
                            "\"");
        label_cols.push_back(*c);
    }

    CxrTable out;
    out.schema = schema;
    out.stats.rows_total = csv.rows.size();
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& row : csv.rows) {
        auto cell = [&](std::size_t c) -> std::string_view {
            return c < row.size() ? std::string_view(row[c]) : std::string_view{};
        };
        CxrStudy s;
        s.patient_id = trim(cell(c_pid));
        auto when = parse_timestamp_utc(cell(c_time));
        if (s.patient_id.empty() || !when) {
            ++out.stats.rows_dropped;
            continue;
        }
        s.study_id = trim(cell(c_sid));
        s.reported_at = *when;
        bool ok = true;
        s.labels.reserve(label_cols.size());
        for (std::size_t c : label_cols) {
            const auto v = trim(cell(c));
            if (v == "0") {
                s.labels.push_back(0);
            } else if (v == "1") {
                s.labels.push_back(1);
            } else {
                ok = false;
                break;
            }
        }
        if (!ok) {
            ++out.stats.rows_dropped;
            continue;
        }
        if (!seen.insert({s.patient_id, s.study_id}).second) {
            ++out.stats.duplicates_dropped;
            continue;
        }
        out.studies.push_back(std::move(s));
    }
    if (out.studies.empty())
        throw DataError("CXR table " + path.string() + ": zero parseable rows");
    return out;
}

inline DemographicsMap parse_demographics(const std::filesystem::path& path, char delim = ',') {
    const CsvTable csv = read_csv(path, delim);
    const std::size_t c_pid = csv.require_column("patient_id");
    const std::size_t c_age = csv.require_column("age");
    const std::size_t c_sex = csv.require_column("sex");
    DemographicsMap out;
    for (const auto& row : csv.rows) {
        if (c_pid >= row.size()) continue;
        const std::string pid{trim(row[c_pid])};
        if (pid.empty()) continue;
        Demographics d;
        if (c_age < row.size()) d.age = parse_double(row[c_age]);
        if (c_sex < row.size()) {
            const auto v = trim(row[c_sex]);
            if (v == "F" || v == "f" || v == "female" || v == "0") d.sex = 0;
            else if (v == "M" || v == "m" || v == "male" || v == "1") d.sex = 1;
        }
        out[pid] = d;
    }
    if (out.empty()) throw DataError("demographics table " + path.string() + ": zero parseable rows");
    return out;
}

// ---------------------------------------------------------------------------
// Pairing
// ---------------------------------------------------------------------------

struct PairingResult {
    std::vector<PairedSample> pairs;  // canonical order: (patient_id, reported_at, cxr study_id)
    std::size_t unmatched_cxrs = 0;
};

// Each CXR is paired with the same patient's closest preceding ECG within
// tolerance (delta = cxr - ecg in [0, tolerance]). Ties on delta resolve to
// the lexicographically smaller ECG study_id. Output is independent of input
// row order; one ECG may serve several CXRs.
inline PairingResult pair_ecg_cxr(std::span<const EcgStudy> ecgs, std::span<const CxrStudy> cxrs,
                                  std::int64_t tolerance_seconds) {
    if (tolerance_seconds <= 0) throw ConfigError("pairing tolerance must be positive");
    if (ecgs.empty() || cxrs.empty()) throw DataError("pairing requires non-empty ECG and CXR sets");

    // Per patient: ECG indices sorted by (time, study_id).
    std::unordered_map<std::string, std::vector<std::size_t>> by_patient;
    for (std::size_t i = 0; i < ecgs.size(); ++i) by_patient[ecgs[i].patient_id].push_back(i);
    for (auto& [pid, idx] : by_patient) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if (ecgs[a].acquired_at != ecgs[b].acquired_at)
                return ecgs[a].acquired_at < ecgs[b].acquired_at;
            return ecgs[a].study_id < ecgs[b].study_id;
        });
    }

    std::vector<std::size_t> cxr_order(cxrs.size());
    for (std::size_t i = 0; i < cxrs.size(); ++i) cxr_order[i] = i;
    std::sort(cxr_order.begin(), cxr_order.end(), [&](std::size_t a, std::size_t b) {
        if (cxrs[a].patient_id != cxrs[b].patient_id) return cxrs[a].patient_id < cxrs[b].patient_id;
        if (cxrs[a].reported_at != cxrs[b].reported_at) return cxrs[a].reported_at < cxrs[b].reported_at;
        return cxrs[a].study_id < cxrs[b].study_id;
    });

    PairingResult out;
    for (std::size_t ci : cxr_order) {
        const CxrStudy& cxr = cxrs[ci];
        auto it = by_patient.find(cxr.patient_id);
        if (it == by_patient.end()) {
            ++out.unmatched_cxrs;
            continue;
        }
        const auto& idx = it->second;
        // Last ECG with acquired_at <= reported_at.
        auto ub = std::upper_bound(idx.begin(), idx.end(), cxr.reported_at,
                                   [&](std::int64_t t, std::size_t e) { return t < ecgs[e].acquired_at; });
        if (ub == idx.begin()) {
            ++out.unmatched_cxrs;
            continue;
        }
        const std::int64_t best_time = ecgs[*std::prev(ub)].acquired_at;
        if (cxr.reported_at - best_time > tolerance_seconds) {
            ++out.unmatched_cxrs;
            continue;
        }
        // Step to the first ECG of the equal-time run: smallest study_id wins.
        auto match = std::prev(ub);
        while (match != idx.begin() && ecgs[*std::prev(match)].acquired_at == best_time) --match;
        PairedSample p;
        p.sample_id = cxr.patient_id + "__" + cxr.study_id;
        p.ecg_index = *match;
        p.cxr_index = ci;
        p.delta_seconds = cxr.reported_at - best_time;
        out.pairs.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratified patient-level split
// ---------------------------------------------------------------------------

// Age bins are left-inclusive/right-exclusive except the closed top bin:
// [18,53) [53,66) [66,78) [78,99]. Out-of-range or missing -> nullopt.
inline std::optional<int> age_bin(std::optional<double> age) {
    if (!age) return std::nullopt;
    const double a = *age;
    if (a < 18.0 || a > 99.0) return std::nullopt;
    if (a < 53.0) return 0;
    if (a < 66.0) return 1;
    if (a < 78.0) return 2;
    return 3;
}

// Strata 0..7 = age bin x sex; 8 = unknown age or sex.
inline int stratum_of(const Demographics& d) {
    const auto bin = age_bin(d.age);
    if (!bin || !d.sex) return 8;
    return *bin * 2 + *d.sex;
}

// Patient-level assignment: within each stratum patients are shuffled by a
// seeded per-stratum RNG and allocated to folds in train:validation:test
// proportion by largest remainder. Sub-integer remainders carry across strata
// (in the fixed stratum order) so global fold counts realize the exact ratio
// whenever it divides the cohort. Pure function of (patient set,
// demographics, ratios, seed).
inline SplitAssignment stratified_split(const std::vector<PairedSample>& samples,
                                        std::span<const CxrStudy> cxrs,
                                        const DemographicsMap& demographics,
                                        const SplitRatios& ratios, std::uint64_t seed) {
    if (ratios.train <= 0 || ratios.validation <= 0 || ratios.test <= 0)
        throw ConfigError("split ratios must be positive");

    std::set<std::string> patient_set;
    for (const auto& s : samples) patient_set.insert(cxrs[s.cxr_index].patient_id);
    if (patient_set.size() < 20)
        throw DataError("stratified split requires at least 20 patients, got " +
                        std::to_string(patient_set.size()));

    std::vector<std::vector<std::string>> strata(9);
    for (const auto& pid : patient_set) {
        auto it = demographics.find(pid);
        if (it == demographics.end())
            throw DataError("no demographics for patient \"" + pid + "\"");
        strata[stratum_of(it->second)].push_back(pid);
    }

    const double total_ratio = ratios.train + ratios.validation + ratios.test;
    const double share[3] = {ratios.train / total_ratio, ratios.validation / total_ratio,
                             ratios.test / total_ratio};
    double carry[3] = {0.0, 0.0, 0.0};
    SplitAssignment out;
    for (int st = 0; st < 9; ++st) {
        auto& patients = strata[st];
        if (patients.empty()) continue;
        // patient_set iteration is sorted, so `patients` is sorted: the
        // shuffle below is then independent of input row order.
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(st));
        rng.shuffle(patients);

        const std::size_t n = patients.size();
        std::size_t count[3];
        double frac[3];
        std::size_t assigned = 0;
        for (int f = 0; f < 3; ++f) {
            const double ideal = static_cast<double>(n) * share[f] + carry[f];
            count[f] = ideal > 0.0 ? static_cast<std::size_t>(ideal) : 0;
            frac[f] = ideal - static_cast<double>(count[f]);
            assigned += count[f];
        }
        for (std::size_t left = n - assigned; left > 0; --left) {
            int pick = 0;
            for (int f = 1; f < 3; ++f)
                if (frac[f] > frac[pick]) pick = f;
            ++count[pick];
            frac[pick] -= 1.0;
        }
        for (int f = 0; f < 3; ++f) carry[f] = frac[f];
        std::size_t pos = 0;
        for (int f = 0; f < 3; ++f)
            for (std::size_t k = 0; k < count[f]; ++k)
                out.fold_per_patient[patients[pos++]] = static_cast<Fold>(f);
    }

    out.fold_per_sample.reserve(samples.size());
    for (const auto& s : samples)
        out.fold_per_sample.push_back(out.fold_per_patient.at(cxrs[s.cxr_index].patient_id));
    return out;
}

}  // namespace ecg2cxr
