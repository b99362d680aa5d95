// Command-line front end for the benchmark pipeline.
//
//   advxai <gen-data|train|attack|explain|evaluate|report|run-all>
//          [--config run.json] [--seed N] [--out DIR]
//
// Exit status: 0 on success, 1 when a stage fails, 2 on usage errors, 3 when
// the run completed but logged per-sample failures.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>

#include "advxai/harness.hpp"

namespace {

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial attacks vs. explanation methods benchmark"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
    auto* out_opt = app.add_option("--out", out_dir, "output directory (overrides the config)");
    bool print_config = false;
    app.add_flag("--print-config", print_config, "print the resolved configuration and exit");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gen-data", "render the synthetic dataset (or copy a manifest)"},
        {"train", "train the classifier and write model.weights"},
        {"attack", "produce the image set of every condition"},
        {"explain", "explain every condition image with every explainer"},
        {"evaluate", "score explanations against ground truth into records.csv"},
        {"report", "aggregate records.csv into report.csv, report.md and overlays"},
        {"run-all", "run every stage in order"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    const auto start = std::chrono::steady_clock::now();
    try {
        advxai::RunConfig cfg =
            config_path.empty() ? advxai::default_run_config() : advxai::load_run_config(config_path);
        if (*seed_opt) cfg.master_seed = seed;
        if (*out_opt) cfg.output_dir = out_dir;
        cfg.validate();
        if (print_config) {
            std::cout << advxai::to_json(cfg).dump(2) << std::endl;
            return 0;
        }

        const std::string cmd = app.get_subcommands().front()->get_name();
        std::size_t failures = 0;
        if (cmd == "gen-data") {
            advxai::stage_data(cfg, log_line);
        } else if (cmd == "train") {
            advxai::stage_train(cfg, log_line);
        } else if (cmd == "attack") {
            advxai::stage_attack(cfg, log_line);
        } else if (cmd == "explain") {
            advxai::stage_explain(cfg, log_line);
        } else if (cmd == "evaluate") {
            advxai::stage_evaluate(cfg, log_line);
            failures = advxai::read_failures(advxai::RunPaths{cfg.output_dir}.failures()).size();
        } else if (cmd == "report") {
            failures = advxai::stage_report(cfg, log_line).failures;
        } else {
            failures = advxai::run_pipeline(cfg, log_line).report.failures;
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.1f", secs);
        log_line(cmd + ": finished in " + buf + " s");
        if (failures > 0) {
            log_line(cmd + ": " + std::to_string(failures) + " failed cells, see failures.csv");
            return 3;
        }
        return 0;
    } catch (const advxai::PipelineError& e) {
        log_line(std::string("error: ") + e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        log_line(std::string("error: ") + e.what());
        return 2;
    } catch (const std::exception& e) {
        log_line(std::string("error: ") + e.what());
        return 1;
    }
}
