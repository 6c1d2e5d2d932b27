#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecg2cxr/common.hpp"
#include "ecg2cxr/csv.hpp"
#include "ecg2cxr/ingest.hpp"

namespace ecg2cxr {

// ---------------------------------------------------------------------------
// Feature schema: 18 ECG-derived predictors plus age, age bin and sex.
// Column order is fixed and part of the artifact contract.
// ---------------------------------------------------------------------------

enum class Feature : int {
    rr_interval = 0,
    p_axis,
    qrs_axis,
    t_axis,
    p_duration,
    qrs_duration,
    pr_interval,
    qt_interval,
    qrst_interval,
    pt_interval,
    qtc,
    p_rr_ratio,
    qrs_rr_ratio,
    qt_rr_ratio,
    pr_qt_ratio,
    p_qrs_axis_diff,
    qrs_t_axis_diff,
    p_t_axis_diff,
    age,
    age_bin,
    sex,
};

inline constexpr int kFeatureCount = 21;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "rr_interval",   "p_axis",          "qrs_axis",        "t_axis",        "p_duration",
    "qrs_duration",  "pr_interval",     "qt_interval",     "qrst_interval", "pt_interval",
    "qtc",           "p_rr_ratio",      "qrs_rr_ratio",    "qt_rr_ratio",   "pr_qt_ratio",
    "p_qrs_axis_diff", "qrs_t_axis_diff", "p_t_axis_diff", "age",           "age_bin",
    "sex",
};

inline std::vector<std::string> feature_name_list() {
    return {kFeatureNames.begin(), kFeatureNames.end()};
}

struct FeatureVector {
    std::array<std::optional<double>, kFeatureCount> values{};

    std::optional<double>& operator[](Feature f) { return values[static_cast<int>(f)]; }
    const std::optional<double>& operator[](Feature f) const { return values[static_cast<int>(f)]; }
};

// ---------------------------------------------------------------------------
// Cleaning and derivation
// ---------------------------------------------------------------------------

// Masks physiologically implausible raw values: axes outside [-360, 360]
// degrees, times/intervals outside [0, 5000] ms. Idempotent.
inline RawEcgMeasurement clean_measurements(RawEcgMeasurement raw) {
    auto mask_interval = [](std::optional<double>& v) {
        if (v && (*v < 0.0 || *v > 5000.0)) v.reset();
    };
    auto mask_axis = [](std::optional<double>& v) {
        if (v && (*v < -360.0 || *v > 360.0)) v.reset();
    };
    mask_interval(raw.rr_interval);
    mask_interval(raw.p_onset);
    mask_interval(raw.p_end);
    mask_interval(raw.qrs_onset);
    mask_interval(raw.qrs_end);
    mask_interval(raw.t_end);
    mask_axis(raw.p_axis);
    mask_axis(raw.qrs_axis);
    mask_axis(raw.t_axis);
    return raw;
}

// Absolute angular separation folded into [0, 180] degrees.
inline double fold_axis_difference(double a, double b) {
    double d = std::fmod(std::fabs(a - b), 360.0);
    return std::min(d, 360.0 - d);
}

// (continuous age, ordinal bin). Ages outside [18, 99] keep the continuous
// value but get no bin.
inline std::pair<std::optional<double>, std::optional<int>> encode_demographics(
    std::optional<double> age) {
    return {age, age_bin(age)};
}

// Derives the engineered features from cleaned fiducials. A derived value is
// missing whenever any ingredient is missing; durations that come out
// non-positive are measurement artifacts and also become missing, as do
// ratios/QTc with a non-positive denominator.
inline FeatureVector derive_features(const RawEcgMeasurement& raw, std::optional<double> age,
                                     std::optional<int> sex) {
    FeatureVector fv;
    auto diff = [](const std::optional<double>& hi,
                   const std::optional<double>& lo) -> std::optional<double> {
        if (!hi || !lo) return std::nullopt;
        const double d = *hi - *lo;
        if (d <= 0.0) return std::nullopt;
        return d;
    };
    auto ratio = [](const std::optional<double>& num,
                    const std::optional<double>& den) -> std::optional<double> {
        if (!num || !den || *den <= 0.0) return std::nullopt;
        return *num / *den;
    };

    fv[Feature::rr_interval] = raw.rr_interval;
    fv[Feature::p_axis] = raw.p_axis;
    fv[Feature::qrs_axis] = raw.qrs_axis;
    fv[Feature::t_axis] = raw.t_axis;

    const auto p_duration = diff(raw.p_end, raw.p_onset);
    const auto pr_interval = diff(raw.qrs_onset, raw.p_onset);
    const auto qrs_duration = diff(raw.qrs_end, raw.qrs_onset);
    const auto qt_interval = diff(raw.t_end, raw.qrs_onset);
    const auto qrst_interval = diff(raw.t_end, raw.qrs_end);
    const auto pt_interval = diff(raw.t_end, raw.p_onset);
    fv[Feature::p_duration] = p_duration;
    fv[Feature::pr_interval] = pr_interval;
    fv[Feature::qrs_duration] = qrs_duration;
    fv[Feature::qt_interval] = qt_interval;
    fv[Feature::qrst_interval] = qrst_interval;
    fv[Feature::pt_interval] = pt_interval;

    // Bazett: QT in ms divided by sqrt(RR in seconds).
    if (qt_interval && raw.rr_interval && *raw.rr_interval > 0.0)
        fv[Feature::qtc] = *qt_interval / std::sqrt(*raw.rr_interval / 1000.0);

    fv[Feature::p_rr_ratio] = ratio(p_duration, raw.rr_interval);
    fv[Feature::qrs_rr_ratio] = ratio(qrs_duration, raw.rr_interval);
    fv[Feature::qt_rr_ratio] = ratio(qt_interval, raw.rr_interval);
    fv[Feature::pr_qt_ratio] = ratio(pr_interval, qt_interval);

    auto axis_diff = [&](const std::optional<double>& a,
                         const std::optional<double>& b) -> std::optional<double> {
        if (!a || !b) return std::nullopt;
        return fold_axis_difference(*a, *b);
    };
    fv[Feature::p_qrs_axis_diff] = axis_diff(raw.p_axis, raw.qrs_axis);
    fv[Feature::qrs_t_axis_diff] = axis_diff(raw.qrs_axis, raw.t_axis);
    fv[Feature::p_t_axis_diff] = axis_diff(raw.p_axis, raw.t_axis);

    const auto [age_value, bin] = encode_demographics(age);
    fv[Feature::age] = age_value;
    if (bin) fv[Feature::age_bin] = static_cast<double>(*bin);
    if (sex) fv[Feature::sex] = static_cast<double>(*sex);
    return fv;
}

// ---------------------------------------------------------------------------
// Feature matrix
// ---------------------------------------------------------------------------

// Row-major table of doubles with NaN marking a missing cell. Column order is
// fixed and recorded in feature_names.
struct FeatureMatrix {
    std::vector<std::string> feature_names;
    std::vector<std::string> sample_ids;
    std::size_t n_rows = 0;
    std::vector<double> cells;

    std::size_t n_cols() const { return feature_names.size(); }
    double at(std::size_t r, std::size_t c) const { return cells[r * n_cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return cells[r * n_cols() + c]; }
    std::span<const double> row(std::size_t r) const {
        return {cells.data() + r * n_cols(), n_cols()};
    }

    std::size_t require_feature(std::string_view name) const {
        for (std::size_t i = 0; i < feature_names.size(); ++i)
            if (feature_names[i] == name) return i;
        throw DataError("feature \"" + std::string(name) + "\" not present in matrix");
    }
};

inline FeatureMatrix build_matrix(const std::vector<std::string>& sample_ids,
                                  const std::vector<FeatureVector>& features) {
    if (features.empty()) throw DataError("cannot build a feature matrix from zero samples");
    if (sample_ids.size() != features.size())
        throw DataError("sample id / feature vector arity mismatch");
    FeatureMatrix m;
    m.feature_names = feature_name_list();
    m.sample_ids = sample_ids;
    m.n_rows = features.size();
    m.cells.reserve(m.n_rows * kFeatureCount);
    for (const auto& fv : features)
        for (const auto& v : fv.values) m.cells.push_back(v ? *v : kMissing);
    return m;
}

inline FeatureMatrix select_columns(const FeatureMatrix& m, const std::vector<std::string>& names) {
    FeatureMatrix out;
    out.feature_names = names;
    out.sample_ids = m.sample_ids;
    out.n_rows = m.n_rows;
    std::vector<std::size_t> cols;
    cols.reserve(names.size());
    for (const auto& n : names) cols.push_back(m.require_feature(n));
    out.cells.reserve(out.n_rows * cols.size());
    for (std::size_t r = 0; r < m.n_rows; ++r)
        for (std::size_t c : cols) out.cells.push_back(m.at(r, c));
    return out;
}

inline FeatureMatrix select_rows(const FeatureMatrix& m, std::span<const std::size_t> rows) {
    FeatureMatrix out;
    out.feature_names = m.feature_names;
    out.n_rows = rows.size();
    out.cells.reserve(rows.size() * m.n_cols());
    out.sample_ids.reserve(rows.size());
    for (std::size_t r : rows) {
        if (!m.sample_ids.empty()) out.sample_ids.push_back(m.sample_ids[r]);
        for (std::size_t c = 0; c < m.n_cols(); ++c) out.cells.push_back(m.at(r, c));
    }
    return out;
}

// CSV export: header "sample_id,<features...>", missing as empty cell.
inline void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& m) {
    std::vector<std::string> header;
    header.reserve(m.n_cols() + 1);
    header.emplace_back("sample_id");
    for (const auto& n : m.feature_names) header.push_back(n);
    std::vector<std::vector<std::string>> rows;
    rows.reserve(m.n_rows);
    for (std::size_t r = 0; r < m.n_rows; ++r) {
        std::vector<std::string> row;
        row.reserve(m.n_cols() + 1);
        row.push_back(m.sample_ids.empty() ? std::to_string(r) : m.sample_ids[r]);
        for (std::size_t c = 0; c < m.n_cols(); ++c) {
            const double v = m.at(r, c);
            row.push_back(is_missing(v) ? std::string{} : fmt_g17(v));
        }
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows);
}

inline FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
    const CsvTable csv = read_csv(path);
    if (csv.header.empty() || csv.header[0] != "sample_id")
        throw DataError("feature matrix " + path.string() + ": first column must be sample_id");
    if (csv.rows.empty()) throw DataError("feature matrix " + path.string() + ": no rows");
    FeatureMatrix m;
    m.feature_names.assign(csv.header.begin() + 1, csv.header.end());
    m.n_rows = csv.rows.size();
    m.cells.reserve(m.n_rows * m.n_cols());
    for (const auto& row : csv.rows) {
        if (row.size() != csv.header.size())
            throw DataError("feature matrix " + path.string() + ": ragged row");
        m.sample_ids.push_back(row[0]);
        for (std::size_t c = 1; c < row.size(); ++c) {
            const auto v = parse_double(row[c]);
            m.cells.push_back(v ? *v : kMissing);
        }
    }
    return m;
}

}  // namespace ecg2cxr
