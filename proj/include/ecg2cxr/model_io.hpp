#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ecg2cxr/boosting.hpp"
#include "ecg2cxr/common.hpp"

namespace ecg2cxr {

inline constexpr const char* kModelSchema = "ecg2cxr.model";
inline constexpr int kModelVersion = 1;

namespace detail {

inline void json_string(std::ostream& out, std::string_view s) {
    out << '"';
    for (char c : s) {
        switch (c) {
            case '"': out << "\\\""; break;
            case '\\': out << "\\\\"; break;
            case '\n': out << "\\n"; break;
            case '\t': out << "\\t"; break;
            default: out << c;
        }
    }
    out << '"';
}

}  // namespace detail

// The model file is schema-tagged JSON written by hand so that every number
// is emitted with 17 significant digits (lossless round trip) and the byte
// layout is stable across runs.
inline std::string serialize_model(const StumpEnsemble& model, const std::string& label) {
    std::ostringstream out;
    out << "{\n";
    out << "  \"schema\": \"" << kModelSchema << "\",\n";
    out << "  \"version\": " << kModelVersion << ",\n";
    out << "  \"label\": ";
    detail::json_string(out, label);
    out << ",\n";
    out << "  \"base_score\": " << fmt_g17(model.base_score) << ",\n";
    out << "  \"config\": {";
    out << "\"rounds\": " << model.config.rounds;
    out << ", \"learning_rate\": " << fmt_g17(model.config.learning_rate);
    out << ", \"l2_reg\": " << fmt_g17(model.config.l2_reg);
    out << ", \"min_split_gain\": " << fmt_g17(model.config.min_split_gain);
    out << ", \"min_child_hessian\": " << fmt_g17(model.config.min_child_hessian);
    out << ", \"seed\": " << model.config.seed;
    out << "},\n";
    out << "  \"feature_names\": [";
    for (std::size_t i = 0; i < model.feature_names.size(); ++i) {
        if (i) out << ", ";
        detail::json_string(out, model.feature_names[i]);
    }
    out << "],\n";
    out << "  \"stumps\": [";
    for (std::size_t i = 0; i < model.stumps.size(); ++i) {
        const Stump& s = model.stumps[i];
        out << (i ? ",\n    " : "\n    ");
        out << "{\"feature\": " << s.feature;
        out << ", \"threshold\": " << fmt_g17(s.threshold);
        out << ", \"left\": " << fmt_g17(s.left_value);
        out << ", \"right\": " << fmt_g17(s.right_value);
        out << ", \"default\": \"" << (s.default_left ? "left" : "right") << "\"";
        out << ", \"gain\": " << fmt_g17(s.gain) << "}";
    }
    out << (model.stumps.empty() ? "]\n" : "\n  ]\n");
    out << "}\n";
    return out.str();
}

inline void save_model(const std::filesystem::path& path, const StumpEnsemble& model,
                       const std::string& label) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write model file: " + path.string());
    out << serialize_model(model, label);
}

struct LoadedModel {
    StumpEnsemble model;
    std::string label;
};

inline LoadedModel parse_model(const std::string& text, const std::string& origin = "<memory>") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model file " + origin + " is not valid JSON: " + e.what());
    }
    try {
        if (j.at("schema").get<std::string>() != kModelSchema)
            throw DataError("model file " + origin + ": unexpected schema tag");
        if (j.at("version").get<int>() != kModelVersion)
            throw DataError("model file " + origin + ": unsupported version");
        LoadedModel out;
        out.label = j.at("label").get<std::string>();
        StumpEnsemble& m = out.model;
        m.base_score = j.at("base_score").get<double>();
        const auto& cfg = j.at("config");
        m.config.rounds = cfg.at("rounds").get<int>();
        m.config.learning_rate = cfg.at("learning_rate").get<double>();
        m.config.l2_reg = cfg.at("l2_reg").get<double>();
        m.config.min_split_gain = cfg.at("min_split_gain").get<double>();
        m.config.min_child_hessian = cfg.at("min_child_hessian").get<double>();
        m.config.seed = cfg.at("seed").get<std::uint64_t>();
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        for (const auto& js : j.at("stumps")) {
            Stump s;
            s.feature = js.at("feature").get<int>();
            s.threshold = js.at("threshold").get<double>();
            s.left_value = js.at("left").get<double>();
            s.right_value = js.at("right").get<double>();
            s.default_left = js.at("default").get<std::string>() == "left";
            s.gain = js.at("gain").get<double>();
            if (s.feature < 0 || s.feature >= static_cast<int>(m.feature_names.size()))
                throw DataError("model file " + origin + ": stump feature index out of range");
            m.stumps.push_back(s);
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model file " + origin + " is malformed: " + std::string(e.what()));
    }
}

inline LoadedModel load_model(const std::filesystem::path& path) {
    return parse_model(read_file(path), path.string());
}

}  // namespace ecg2cxr
