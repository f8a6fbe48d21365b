#include "dgrd/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace dgrd {

namespace {

// Rates are keyed by thousandths so repeated additions never drift.
std::uint64_t rate_key(double rate) {
    return static_cast<std::uint64_t>(std::llround(rate * 1000.0));
}

void put_optional(std::ostream& out, const std::optional<double>& v) {
    if (v) out << *v;
}

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

double DefenseSearchConfig::default_epsilon(const std::string& dataset_kind) {
    return dataset_kind == "mnist" || dataset_kind == "mnist-idx" ? 0.01 : 0.04;
}

void DefenseSearchConfig::validate() const {
    attack.validate();
    validate_policy(policy);
    if (!(epsilon_acc > 0.0)) throw std::invalid_argument("epsilon_acc must be positive");
    if (!(step > 0.0 && step < 1.0)) throw std::invalid_argument("step must lie in (0, 1)");
    if (accuracy_passes < 1) throw std::invalid_argument("accuracy_passes must be at least 1");
    for (double r : train_grid) {
        if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("train grid rates must lie in [0, 1)");
    }
}

DefenseSearchTrace run_dropout_search(const RowEvaluator& evaluate, double baseline_accuracy, double epsilon_acc,
                                      double step, double train_rate) {
    if (!(epsilon_acc > 0.0)) throw std::invalid_argument("epsilon_acc must be positive");
    if (!(step > 0.0 && step < 1.0)) throw std::invalid_argument("step must lie in (0, 1)");
    DefenseSearchTrace trace;
    trace.train_rate = train_rate;
    trace.baseline_accuracy = baseline_accuracy;
    trace.epsilon_acc = epsilon_acc;
    trace.step = step;
    const double floor = baseline_accuracy - epsilon_acc;

    trace.rows.push_back(evaluate(0.0));
    double a = trace.rows.back().accuracy;
    std::size_t i = 0;
    while (a > floor) {
        trace.chosen = trace.rows.size() - 1;
        ++i;
        const double rate = static_cast<double>(i) * step;
        trace.exit_rate = rate;
        if (rate >= 1.0 - 1e-12) {
            trace.hit_ceiling = true;
            break;
        }
        trace.rows.push_back(evaluate(rate));
        a = trace.rows.back().accuracy;
    }
    return trace;
}

DefenseRow evaluate_test_rate(const ModelParams& params, const Dataset& test_set, double test_rate,
                              const DefenseSearchConfig& cfg) {
    const ForwardMode mode = TestDropout{test_rate};
    const SeededRng root(cfg.seed);
    DefenseRow row;
    row.test_rate = test_rate;
    row.accuracy_detail = estimate_accuracy(params, test_set.head(cfg.accuracy_images), mode, cfg.accuracy_passes,
                                            root.child("accuracy").child(rate_key(test_rate)));
    row.accuracy = row.accuracy_detail.accuracy;
    CampaignConfig cc;
    cc.images = cfg.attack_images;
    cc.seed = cfg.seed;
    cc.policy = cfg.policy;
    row.campaign = run_campaign(params, test_set, cfg.attack, mode, cc);
    row.attack = row.campaign.summary;
    return row;
}

DefenseSearchTrace defensive_dropout_search(const ModelParams& params, const Dataset& test_set,
                                            double train_rate, double baseline_accuracy,
                                            const DefenseSearchConfig& cfg) {
    cfg.validate();
    return run_dropout_search([&](double r) { return evaluate_test_rate(params, test_set, r, cfg); },
                              baseline_accuracy, cfg.epsilon_acc, cfg.step, train_rate);
}

TrainRateChoice select_train_rate(const Architecture& arch, const Dataset& train_set, const Dataset& test_set,
                                  std::vector<double> grid, const TrainConfig& base, std::uint64_t init_seed) {
    if (grid.empty()) throw std::invalid_argument("select_train_rate: empty grid");
    std::sort(grid.begin(), grid.end());
    TrainRateChoice best;
    bool have = false;
    for (double r : grid) {
        TrainConfig cfg = base;
        cfg.dropout_rate = r;
        SeededRng init(init_seed);
        auto result = train(init_params(arch, init), train_set, nullptr, cfg);
        const double acc = evaluate_accuracy(result.params, test_set, Deterministic{}, 1, SeededRng(init_seed));
        best.grid.emplace_back(r, acc);
        if (!have || acc > best.accuracy) {
            best.rate = r;
            best.accuracy = acc;
            best.params = std::move(result.params);
            have = true;
        }
    }
    return best;
}

AccuracyEstimate estimate_accuracy(const ModelParams& params, const Dataset& data, const ForwardMode& mode,
                                   std::size_t passes, const SeededRng& rng) {
    if (passes < 1) throw std::invalid_argument("estimate_accuracy: need at least one pass");
    validate_mode(mode);
    if (!is_stochastic(mode)) passes = 1;
    AccuracyEstimate est;
    est.passes = passes;
    est.hits.assign(data.size(), 0);
    est.failed.assign(data.size(), 0);
    auto& hits = est.hits;
    auto& failed = est.failed;

#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t i = 0; i < data.size(); ++i) {
        const SeededRng example_rng = rng.child(i);
        try {
            for (std::size_t p = 0; p < passes; ++p) {
                SeededRng pass_rng = example_rng.child(p);
                if (forward(params, data.images[i], mode, pass_rng).label == data.labels[i]) ++hits[i];
            }
        } catch (const SapError&) {
            failed[i] = 1;
            hits[i] = 0;
        }
    }
    est.skipped = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
    est.evaluated = data.size() - est.skipped;
    const auto total = std::accumulate(hits.begin(), hits.end(), std::size_t{0});
    if (est.evaluated > 0) est.accuracy = static_cast<double>(total) / static_cast<double>(est.evaluated * passes);
    return est;
}

SapEvaluation sap_defense_eval(const ModelParams& params, const Dataset& test_set, const SapPlan& plan,
                               const DefenseSearchConfig& cfg) {
    cfg.validate();
    const ForwardMode mode = Sap{plan};
    validate_mode(mode);
    const SeededRng root(cfg.seed);
    SapEvaluation out;
    out.plan = plan;
    out.accuracy = estimate_accuracy(params, test_set.head(cfg.accuracy_images), mode, cfg.accuracy_passes,
                                     root.child("accuracy").child("sap"));
    CampaignConfig cc;
    cc.images = cfg.attack_images;
    cc.seed = cfg.seed;
    cc.policy = cfg.policy;
    out.campaign = run_campaign(params, test_set, cfg.attack, mode, cc);
    return out;
}

void write_trace_csv(std::ostream& out, const DefenseSearchTrace& trace) {
    const auto flags = out.flags();
    out << "test_rate,test_accuracy,asr,mean_l2,pairs,skipped\n" << std::fixed;
    for (const auto& row : trace.rows) {
        out << std::setprecision(2) << row.test_rate << ',' << std::setprecision(6) << row.accuracy << ',';
        put_optional(out, row.attack.asr);
        out << ',';
        put_optional(out, row.attack.mean_l2);
        out << ',' << row.attack.pairs << ',' << row.attack.skipped << '\n';
    }
    out.flags(flags);
}

void write_trace_table_csv(std::ostream& out, const std::vector<DefenseSearchTrace>& traces, TableMetric metric) {
    std::map<std::uint64_t, double> columns;
    for (const auto& t : traces) {
        for (const auto& row : t.rows) columns.emplace(rate_key(row.test_rate), row.test_rate);
    }
    const auto flags = out.flags();
    out << std::fixed << std::setprecision(2) << "train_rate";
    for (const auto& [key, rate] : columns) out << ",test_" << rate;
    out << '\n';
    for (const auto& t : traces) {
        out << std::setprecision(2) << t.train_rate;
        for (const auto& [key, rate] : columns) {
            out << ',';
            const auto it = std::find_if(t.rows.begin(), t.rows.end(),
                                         [&](const DefenseRow& r) { return rate_key(r.test_rate) == key; });
            if (it == t.rows.end()) continue;
            std::optional<double> v;
            switch (metric) {
                case TableMetric::Asr:
                    if (it->attack.asr) v = 100.0 * *it->attack.asr;
                    break;
                case TableMetric::Accuracy: v = 100.0 * it->accuracy; break;
                case TableMetric::MeanL2: v = it->attack.mean_l2; break;
            }
            out << std::setprecision(2);
            put_optional(out, v);
        }
        out << '\n';
    }
    out.flags(flags);
}

void write_trace_summary_json(std::ostream& out, const DefenseSearchTrace& trace) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : trace.rows) {
        rows.push_back({{"test_rate", row.test_rate},
                        {"test_accuracy", row.accuracy},
                        {"asr", optional_json(row.attack.asr)},
                        {"mean_l2", optional_json(row.attack.mean_l2)},
                        {"pairs", row.attack.pairs},
                        {"skipped", row.attack.skipped}});
    }
    nlohmann::json j = {{"train_rate", trace.train_rate},
                        {"baseline_accuracy", trace.baseline_accuracy},
                        {"epsilon_acc", trace.epsilon_acc},
                        {"step", trace.step},
                        {"chosen_test_rate", trace.chosen_rate()},
                        {"exit_test_rate", trace.exit_rate},
                        {"hit_ceiling", trace.hit_ceiling},
                        {"rows", rows}};
    out << j.dump(2) << '\n';
}

}  // namespace dgrd
