#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "dgrd/attacks.hpp"
#include "dgrd/training.hpp"

namespace dgrd {

struct DefenseSearchConfig {
    AttackSpec attack;
    SuccessPolicy policy = SinglePass{};
    double epsilon_acc = 0.01;  // max test-accuracy decrease, as a fraction
    double step = 0.1;
    std::vector<double> train_grid = {0.3, 0.5, 0.7};
    std::size_t accuracy_images = 1000;
    std::size_t accuracy_passes = 10;  // per example, stochastic modes only
    std::size_t attack_images = 100;   // x 9 targets
    std::uint64_t seed = 1;

    /// MNIST uses 0.01, CIFAR-10 shaped data 0.04.
    static double default_epsilon(const std::string& dataset_kind);
    void validate() const;
};

/// Accuracy that tolerates SapError: failing examples are skipped and counted.
struct AccuracyEstimate {
    double accuracy = 0.0;          // over evaluated examples
    std::size_t evaluated = 0;
    std::size_t skipped = 0;
    std::size_t passes = 1;
    std::vector<std::size_t> hits;  // correct passes per example
    std::vector<char> failed;       // 1 where the example was skipped
};
AccuracyEstimate estimate_accuracy(const ModelParams& params, const Dataset& data, const ForwardMode& mode,
                                   std::size_t passes, const SeededRng& rng);

/// One evaluated test dropout rate.
struct DefenseRow {
    double test_rate = 0.0;
    double accuracy = 0.0;
    CampaignSummary attack;
    AccuracyEstimate accuracy_detail;  // empty for injected evaluators
    CampaignResult campaign;
};

struct DefenseSearchTrace {
    double train_rate = 0.0;
    double baseline_accuracy = 0.0;  // best deterministic test accuracy
    double epsilon_acc = 0.0;
    double step = 0.0;
    std::vector<DefenseRow> rows;    // increasing test rate, starting at 0
    std::size_t chosen = 0;          // index of the last row meeting the accuracy bound
    double exit_rate = 0.0;          // value of r' when the loop stopped
    bool hit_ceiling = false;        // stopped because r' reached 1

    double chosen_rate() const { return rows.at(chosen).test_rate; }
};

using RowEvaluator = std::function<DefenseRow(double test_rate)>;

/// The search loop with an injectable evaluator. Row r' = 0 is evaluated
/// first; afterwards r' grows by `step` while the previous row kept
/// accuracy > baseline - epsilon_acc. The first row violating the bound is kept
/// in the trace; the loop also stops before r' reaches 1.
DefenseSearchTrace run_dropout_search(const RowEvaluator& evaluate, double baseline_accuracy, double epsilon_acc,
                                      double step, double train_rate = 0.0);

/// Accuracy over the first cfg.accuracy_images test images plus a fresh
/// attack campaign, both under TestDropout(test_rate).
DefenseRow evaluate_test_rate(const ModelParams& params, const Dataset& test_set, double test_rate,
                              const DefenseSearchConfig& cfg);

DefenseSearchTrace defensive_dropout_search(const ModelParams& params, const Dataset& test_set,
                                            double train_rate, double baseline_accuracy,
                                            const DefenseSearchConfig& cfg);

struct TrainRateChoice {
    double rate = 0.0;
    ModelParams params;
    double accuracy = 0.0;                         // deterministic test accuracy
    std::vector<std::pair<double, double>> grid;   // (r, accuracy) per grid point
};

/// Trains one model per grid point and keeps the most accurate one; ties go
/// to the smaller rate.
TrainRateChoice select_train_rate(const Architecture& arch, const Dataset& train_set, const Dataset& test_set,
                                  std::vector<double> grid, const TrainConfig& base, std::uint64_t init_seed);

struct SapEvaluation {
    SapPlan plan;
    AccuracyEstimate accuracy;
    CampaignResult campaign;
};

/// SAP evaluated with the same protocol as one defensive-dropout row.
SapEvaluation sap_defense_eval(const ModelParams& params, const Dataset& test_set, const SapPlan& plan,
                               const DefenseSearchConfig& cfg);

// Exports ---------------------------------------------------------------------

/// One line per row: test_rate,test_accuracy,asr,mean_l2,pairs,skipped.
void write_trace_csv(std::ostream& out, const DefenseSearchTrace& trace);

enum class TableMetric { Asr, Accuracy, MeanL2 };
/// Rows are train rates, columns the union of test rates; missing cells empty.
void write_trace_table_csv(std::ostream& out, const std::vector<DefenseSearchTrace>& traces, TableMetric metric);

void write_trace_summary_json(std::ostream& out, const DefenseSearchTrace& trace);

}  // namespace dgrd
