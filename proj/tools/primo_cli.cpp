#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "primo/experiment.hpp"

namespace {

struct CommonOptions {
    std::string config;
    std::vector<std::string> sets;
    std::vector<std::uint64_t> seeds;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o)
{
    cmd->add_option("-c,--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.sets, "override a config field, e.g. --set train.epochs=5 (repeatable)");
    cmd->add_option("--seed", o.seeds, "append a seed to the seed list (repeatable); single-seed commands use the last seed");
    cmd->add_option("-o,--out", o.out, "output directory (overrides output_dir)");
}

primo::ExperimentConfig resolve(const CommonOptions& o)
{
    std::vector<std::pair<std::string, nlohmann::json>> overrides;
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw primo::SchemaError("--set expects key=value, got '" + s + "'");
        const std::string text = s.substr(eq + 1);
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error&) {
            value = text;
        }
        overrides.emplace_back(s.substr(0, eq), value);
    }
    if (!o.out.empty())
        overrides.emplace_back("output_dir", o.out);

    nlohmann::json user;
    if (!o.config.empty()) {
        std::ifstream is(o.config);
        try {
            user = nlohmann::json::parse(is);
        } catch (const nlohmann::json::parse_error& e) {
            throw primo::SchemaError("config " + o.config + ": " + e.what());
        }
    }
    return primo::parse_experiment_config(user, overrides, o.seeds);
}

std::uint64_t single_seed(const primo::ExperimentConfig& cfg)
{
    return cfg.seeds.back();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"PRIMO: latent-variable classification with a missing modality"};
    app.require_subcommand(1);

    CommonOptions gen, train, analyze, bias, run_all;
    std::string report_dir;

    auto* gen_cmd = app.add_subcommand("generate-data", "write masked train/test splits for the last seed");
    add_common(gen_cmd, gen);
    auto* train_cmd = app.add_subcommand("train", "train PRIMO and baselines for the last seed");
    add_common(train_cmd, train);
    auto* analyze_cmd = app.add_subcommand("analyze", "predictions, V, ECDF and clusters for a trained seed");
    add_common(analyze_cmd, analyze);
    auto* bias_cmd = app.add_subcommand("bias", "disjoint-halves bias analysis for the last seed");
    add_common(bias_cmd, bias);
    auto* run_cmd = app.add_subcommand("run-all", "full protocol for every seed, then the report");
    add_common(run_cmd, run_all);
    auto* report_cmd = app.add_subcommand("report", "summarise a run directory");
    report_cmd->add_option("run_dir", report_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen_cmd) {
            const auto cfg = resolve(gen);
            const auto seed = single_seed(cfg);
            const auto dir = primo::seed_dir(cfg.output_dir, seed);
            const auto data = primo::prepare_data(cfg, seed);
            primo::save_seed_data(data, dir);
            std::cout << "wrote " << (dir / "train.primo").string() << " (" << data.train.size() << ") and "
                      << (dir / "test.primo").string() << " (" << data.test.size() << ")\n";
        } else if (*train_cmd) {
            const auto cfg = resolve(train);
            const auto seed = single_seed(cfg);
            const auto dir = primo::seed_dir(cfg.output_dir, seed);
            primo::SeedData data;
            if (std::filesystem::exists(dir / "train.primo")) {
                data = primo::load_seed_data(dir);
            } else {
                data = primo::prepare_data(cfg, seed);
                primo::save_seed_data(data, dir);
            }
            primo::train_stage(cfg, data, seed, dir);
            std::cout << "trained seed " << seed << " into " << dir.string() << "\n";
        } else if (*analyze_cmd) {
            const auto cfg = resolve(analyze);
            const auto seed = single_seed(cfg);
            const auto dir = primo::seed_dir(cfg.output_dir, seed);
            auto models = primo::load_trained_models(dir);
            const auto data = primo::load_seed_data(dir);
            const auto out = primo::analyze_stage(cfg, models, data, seed, dir);
            std::cout << out.summary.dump(2) << "\n";
        } else if (*bias_cmd) {
            const auto cfg = resolve(bias);
            const auto seed = single_seed(cfg);
            const auto dir = primo::seed_dir(cfg.output_dir, seed);
            const auto data = primo::prepare_data(cfg, seed);
            primo::bias_stage(cfg, data, seed, dir);
            std::cout << primo::read_text(dir / "bias.json");
        } else if (*run_cmd) {
            const auto cfg = resolve(run_all);
            primo::run_experiment(cfg);
            std::cout << primo::read_text(std::filesystem::path(cfg.output_dir) / "report.md");
        } else if (*report_cmd) {
            std::cout << primo::emit_report(report_dir);
            const std::string status = primo::read_text(std::filesystem::path(report_dir) / "STATUS");
            if (status.rfind("complete", 0) != 0) {
                std::cerr << "warning: run is incomplete\n";
                return 2;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return EXIT_SUCCESS;
}
