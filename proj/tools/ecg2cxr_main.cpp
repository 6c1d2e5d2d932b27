#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ecg2cxr/config.hpp"
#include "ecg2cxr/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;  // usage / config errors
constexpr int kExitData = 2;   // data-contract violations

struct StageArgs {
    std::string config_path;
    std::string out_dir;
    std::string labels;
    int jobs = 0;
};

void add_common_options(CLI::App* cmd, StageArgs& args) {
    cmd->add_option("--config", args.config_path, "Pipeline config file (JSON)")->required();
    cmd->add_option("--out", args.out_dir, "Override the configured output directory");
    cmd->add_option("--labels", args.labels, "Comma-separated subset of the label schema");
    cmd->add_option("--jobs", args.jobs, "Worker threads for per-label stages");
}

int run(const std::string& stage_name, const StageArgs& args) {
    const auto stage = ecg2cxr::stage_from_name(stage_name);
    if (!stage) throw ecg2cxr::ConfigError("unknown stage \"" + stage_name + "\"");
    const ecg2cxr::PipelineConfig cfg = ecg2cxr::load_config(args.config_path);
    ecg2cxr::RunOptions opt;
    if (!args.out_dir.empty()) opt.out_override = args.out_dir;
    if (args.jobs > 0) opt.jobs_override = args.jobs;
    if (!args.labels.empty()) {
        for (const auto& l : ecg2cxr::split(args.labels, ','))
            if (!l.empty()) opt.label_subset.push_back(l);
    }
    ecg2cxr::run_stage(*stage, cfg, opt);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG-to-chest-radiograph prediction pipeline"};
    app.require_subcommand(1);

    const std::vector<std::string> stages = {"synth",    "pair",    "split",  "featurize", "train",
                                             "evaluate", "explain", "report", "all"};
    StageArgs args;
    std::string selected_stage;
    for (const auto& name : stages) {
        CLI::App* cmd = app.add_subcommand(
            name, name == "all" ? "Run every stage in order" : "Run the " + name + " stage");
        add_common_options(cmd, args);
        cmd->callback([&, name]() { selected_stage = name; });
    }

    std::string init_path;
    bool init_force = false;
    CLI::App* init = app.add_subcommand("init", "Write a config template with all defaults");
    init->add_option("--config", init_path, "Where to write the template")->required();
    init->add_flag("--force", init_force, "Overwrite an existing file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (init->parsed()) {
            if (std::filesystem::exists(init_path) && !init_force)
                throw ecg2cxr::ConfigError("refusing to overwrite " + init_path +
                                           " (use --force)");
            std::ofstream out(init_path, std::ios::binary);
            if (!out) throw ecg2cxr::ConfigError("cannot write " + init_path);
            out << ecg2cxr::default_config_text();
            std::cout << "wrote config template to " << init_path << "\n";
            return kExitOk;
        }
        return run(selected_stage, args);
    } catch (const ecg2cxr::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ecg2cxr::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitData;
    }
}
