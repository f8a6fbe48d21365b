// dgrd: command-line driver for training, attacks, defenses and analysis.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dgrd/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Defensive dropout robustness lab"};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> mode;
    std::optional<double> test_dropout;
    std::optional<std::string> params;
    std::vector<std::string> overrides;
    bool list_keys = false;

    app.add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "global seed (run.seed)");
    app.add_option("--out", out, "output directory (run.out)");
    app.add_option("--mode", mode, "deterministic | test-dropout | sap (mode.mode)");
    app.add_option("--test-dropout", test_dropout, "test dropout rate r' (mode.test_dropout)");
    app.add_option("--params", params, "parameter file to load (model.params)");
    app.add_option("--set", overrides, "override a config key: section.key=value")->take_all();
    app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"train", "train a model; writes model.dgrd and metrics.csv"},
        {"select-train", "train one model per defense.train_grid rate and keep the most accurate"},
        {"attack", "run an attack campaign under --mode; writes results.jsonl"},
        {"defend-search", "search the test dropout rate under the accuracy budget"},
        {"sap-eval", "evaluate SAP against the configured attack"},
        {"analyze-gradients", "sample input gradients per mode and summarise their variance"},
        {"report", "re-audit report.json in --out against the per-example records"},
        {"synth-cifar", "write synthetic CIFAR-10 format batches to --out"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();
    app.fallthrough();

    CLI11_PARSE(app, argc, argv);
    if (list_keys) {
        for (const auto& k : dgrd::config_keys()) {
            std::cout << k.name << " = " << k.default_value << "    # " << k.help << '\n';
        }
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return 2;
    }

    try {
        dgrd::ConfigValues values = config_path.empty() ? dgrd::ConfigValues{}
                                                        : dgrd::ConfigValues::from_ini_file(config_path);
        for (const auto& o : overrides) values.apply_override(o);
        if (seed) values.set("run.seed", std::to_string(*seed));
        if (out) values.set("run.out", *out);
        if (test_dropout) {
            std::ostringstream rate;
            rate << *test_dropout;
            values.set("mode.test_dropout", rate.str());
            if (!mode) values.set("mode.mode", "test-dropout");
        }
        if (mode) values.set("mode.mode", *mode);
        if (params) values.set("model.params", *params);

        const dgrd::ExperimentConfig cfg = dgrd::build_config(values);
        const std::string command = app.get_subcommands().front()->get_name();
        return dgrd::run_command(command, cfg, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "dgrd: " << e.what() << '\n';
        return 2;
    }
}
