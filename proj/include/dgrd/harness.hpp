#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "dgrd/config.hpp"

namespace dgrd {

std::string code_version();

/// Training and test splits named by the config; limits applied.
Dataset load_train_set(const ExperimentConfig& cfg);
Dataset load_test_set(const ExperimentConfig& cfg);

/// Loads model.params and checks it against model.arch.
ModelParams load_model(const ExperimentConfig& cfg);

/// Commands: train, select-train, attack, defend-search, sap-eval,
/// analyze-gradients, report, synth-cifar. Artifacts go to cfg.out together
/// with manifest.txt and config.ini. Returns the process exit code.
int run_command(const std::string& command, const ExperimentConfig& cfg, std::ostream& log);

const std::vector<std::string>& command_names();

struct AuditResult {
    bool ok = true;
    std::vector<std::string> problems;
    std::string table;  // human-readable summary of the report
};

/// Recomputes every campaign and accuracy figure in dir/report.json from
/// dir/results.jsonl and dir/accuracy.jsonl and compares them exactly.
AuditResult audit_report(const std::filesystem::path& dir);

}  // namespace dgrd
