#include "dgrd/harness.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "dgrd/analysis.hpp"

#ifndef DGRD_VERSION
#define DGRD_VERSION "unknown"
#endif

namespace dgrd {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kSyntheticSeed = 20181105;

fs::path data_path(const ExperimentConfig& cfg, const std::string& name) {
    const fs::path p(name);
    return p.is_absolute() || cfg.data.dir.empty() ? p : cfg.data.dir / p;
}

Dataset limited(Dataset d, std::size_t limit) {
    return limit > 0 ? d.head(limit) : d;
}

ojson optional_json(const std::optional<double>& v) {
    return v ? ojson(*v) : ojson(nullptr);
}

std::optional<double> json_optional(const ojson& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

double mode_test_rate(const ForwardMode& mode) {
    if (const auto* d = std::get_if<TestDropout>(&mode)) return d->rate;
    return 0.0;
}

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Plain key = value lines; no timings so repeated runs match byte for byte.
void write_manifest(const ExperimentConfig& cfg, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& extra) {
    std::ostringstream os;
    os << "command = " << command << '\n'
       << "seed = " << cfg.seed << '\n'
       << "config_hash = " << fmt::format("{:016x}", cfg.hash) << '\n'
       << "code_version = " << code_version() << '\n'
       << "mode = " << mode_label(cfg.mode) << '\n'
       << "test_dropout = " << mode_test_rate(cfg.mode) << '\n';
    for (const auto& [k, v] : extra) os << k << " = " << v << '\n';
    write_text(cfg.out / "manifest.txt", os.str());
    write_text(cfg.out / "config.ini", cfg.canonical_text);
}

ojson pair_json(const std::string& campaign, const PairResult& p) {
    const auto& r = p.result;
    ojson j;
    j["campaign"] = campaign;
    j["image_id"] = p.image_id;
    j["true_label"] = p.true_label;
    j["target"] = p.target;
    j["success"] = r.success;
    j["skipped"] = p.skipped;
    j["l0"] = r.distortion.l0;
    j["l1"] = r.distortion.l1;
    j["l2"] = r.distortion.l2;
    j["linf"] = r.distortion.linf;
    j["iterations"] = r.iterations;
    j["c_final"] = optional_json(r.c_final);
    j["seed"] = r.seed;
    return j;
}

ojson summary_json(const CampaignSummary& s) {
    ojson j;
    j["pairs"] = s.pairs;
    j["skipped_pairs"] = s.skipped;
    j["successes"] = s.successes;
    j["asr"] = optional_json(s.asr);
    j["mean_l0"] = optional_json(s.mean_l0);
    j["mean_l2"] = optional_json(s.mean_l2);
    j["mean_linf"] = optional_json(s.mean_linf);
    return j;
}

ojson accuracy_json(const AccuracyEstimate& a) {
    ojson j;
    j["accuracy"] = a.accuracy;
    j["evaluated"] = a.evaluated;
    j["skipped"] = a.skipped;
    j["passes"] = a.passes;
    return j;
}

struct Outputs {
    std::ostringstream results;   // results.jsonl
    std::ostringstream accuracy;  // accuracy.jsonl
    ojson campaigns = ojson::array();

    void add_campaign(const std::string& label, const CampaignResult& c, const AccuracyEstimate* acc) {
        for (const auto& p : c.pairs) results << pair_json(label, p).dump() << '\n';
        ojson j;
        j["label"] = label;
        j["summary"] = summary_json(c.summary);
        j["misclassified_images"] = c.skipped_images;
        if (acc) {
            j["accuracy"] = accuracy_json(*acc);
            for (std::size_t i = 0; i < acc->hits.size(); ++i) {
                ojson a;
                a["campaign"] = label;
                a["image_id"] = i;
                a["hits"] = acc->hits[i];
                a["passes"] = acc->passes;
                a["skipped"] = acc->failed[i] != 0;
                accuracy << a.dump() << '\n';
            }
        }
        campaigns.push_back(std::move(j));
    }

    void write(const fs::path& dir) const {
        write_text(dir / "results.jsonl", results.str());
        write_text(dir / "accuracy.jsonl", accuracy.str());
    }
};

ojson report_header(const ExperimentConfig& cfg, const std::string& command) {
    ojson j;
    j["command"] = command;
    j["code_version"] = code_version();
    j["seed"] = cfg.seed;
    j["config_hash"] = fmt::format("{:016x}", cfg.hash);
    j["config"] = cfg.canonical_text;
    return j;
}

void write_report(const ExperimentConfig& cfg, ojson report, const Timer& timer) {
    report["wall_clock_seconds"] = timer.seconds();
    write_text(cfg.out / "report.json", report.dump(2) + "\n");
}

template <class Fn>
void write_stream(const fs::path& path, Fn&& fn) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    fn(out);
}

std::string campaign_line(const std::string& label, const CampaignSummary& s) {
    return fmt::format("{:<24} pairs={:<4} skipped={:<3} asr={:<8} mean_l2={}", label, s.pairs, s.skipped,
                       s.asr ? fmt::format("{:.2f}%", 100.0 * *s.asr) : "null",
                       s.mean_l2 ? fmt::format("{:.4f}", *s.mean_l2) : "null");
}

// -- commands ----------------------------------------------------------------

int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
    const Timer timer;
    const Dataset train_set = load_train_set(cfg);
    const Dataset test_set = load_test_set(cfg);
    const Architecture arch = architecture_by_name(cfg.architecture);
    SeededRng init = SeededRng(cfg.seed).child("init");
    auto result = train(init_params(arch, init), train_set, &test_set, cfg.train, [&](const EpochMetrics& m) {
        log << fmt::format("epoch {:>3}  loss {:.4f}  train_acc {:.4f}  test_acc {:.4f}\n", m.epoch, m.train_loss,
                           m.train_acc, m.test_acc)
            << std::flush;
    });
    save_params(cfg.out / "model.dgrd", result.params);
    write_stream(cfg.out / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, result.history); });

    ojson report = report_header(cfg, "train");
    report["architecture"] = arch.descriptor();
    report["train_rate"] = cfg.train.dropout_rate;
    report["train_examples"] = train_set.size();
    report["test_examples"] = test_set.size();
    report["final_test_accuracy"] = result.history.empty() ? ojson(nullptr) : ojson(result.history.back().test_acc);
    write_manifest(cfg, "train", {{"architecture", arch.descriptor()},
                                  {"train_rate", fmt::format("{}", cfg.train.dropout_rate)},
                                  {"data_checksum", fmt::format("{:016x}", train_set.checksum)}});
    write_report(cfg, report, timer);
    return 0;
}

int cmd_select_train(const ExperimentConfig& cfg, std::ostream& log) {
    const Timer timer;
    const Dataset train_set = load_train_set(cfg);
    const Dataset test_set = load_test_set(cfg);
    const Architecture arch = architecture_by_name(cfg.architecture);
    auto choice = select_train_rate(arch, train_set, test_set, cfg.defense.train_grid, cfg.train,
                                    SeededRng(cfg.seed).child("init").seed());
    for (const auto& [r, acc] : choice.grid) log << fmt::format("train rate {:.2f}: test accuracy {:.4f}\n", r, acc);
    log << fmt::format("selected r = {:.2f}\n", choice.rate);
    save_params(cfg.out / "model.dgrd", choice.params);

    std::ostringstream csv;
    csv << "train_rate,test_accuracy\n";
    for (const auto& [r, acc] : choice.grid) csv << fmt::format("{:.2f},{:.6f}\n", r, acc);
    write_text(cfg.out / "train_grid.csv", csv.str());

    ojson report = report_header(cfg, "select-train");
    report["selected_train_rate"] = choice.rate;
    report["baseline_accuracy"] = choice.accuracy;
    write_manifest(cfg, "select-train", {{"train_rate", fmt::format("{}", choice.rate)}});
    write_report(cfg, report, timer);
    return 0;
}

int cmd_attack(const ExperimentConfig& cfg, std::ostream& log) {
    const Timer timer;
    const Dataset test_set = load_test_set(cfg);
    const ModelParams params = load_model(cfg);
    CampaignConfig cc;
    cc.images = cfg.attack_images;
    cc.seed = cfg.seed;
    cc.policy = cfg.policy;
    const auto campaign = run_campaign(params, test_set, cfg.attack, cfg.mode, cc);
    const std::string label = mode_label(cfg.mode);
    log << campaign_line(label, campaign.summary) << '\n';

    Outputs out;
    out.add_campaign(label, campaign, nullptr);
    out.write(cfg.out);
    ojson report = report_header(cfg, "attack");
    report["attack"] = attack_name(cfg.attack.kind);
    report["policy"] = policy_label(cfg.policy);
    report["campaigns"] = out.campaigns;
    write_manifest(cfg, "attack", {{"attack", attack_name(cfg.attack.kind)},
                                   {"policy", policy_label(cfg.policy)},
                                   {"params_fingerprint", fmt::format("{:016x}", params.fingerprint())}});
    write_report(cfg, report, timer);
    return 0;
}

int cmd_defend_search(const ExperimentConfig& cfg, std::ostream& log) {
    const Timer timer;
    const Dataset test_set = load_test_set(cfg);
    const ModelParams params = load_model(cfg);
    const auto& def = cfg.defense;
    const auto baseline = estimate_accuracy(params, test_set.head(def.accuracy_images), Deterministic{}, 1,
                                            SeededRng(cfg.seed));
    log << fmt::format("baseline accuracy {:.4f}, epsilon {:.3f}\n", baseline.accuracy, def.epsilon_acc);

    const auto trace = run_dropout_search(
        [&](double r) {
            auto row = evaluate_test_rate(params, test_set, r, def);
            log << fmt::format("r' = {:.2f}  accuracy {:.4f}  ", r, row.accuracy)
                << campaign_line(mode_label(TestDropout{r}), row.attack) << '\n'
                << std::flush;
            return row;
        },
        baseline.accuracy, def.epsilon_acc, def.step, cfg.model_train_rate);
    log << fmt::format("chosen r' = {:.2f} (loop exit at {:.2f})\n", trace.chosen_rate(), trace.exit_rate);

    Outputs out;
    for (const auto& row : trace.rows) {
        out.add_campaign(mode_label(TestDropout{row.test_rate}), row.campaign, &row.accuracy_detail);
    }
    out.write(cfg.out);
    write_stream(cfg.out / "trace.csv", [&](std::ostream& o) { write_trace_csv(o, trace); });
    write_stream(cfg.out / "table_asr.csv", [&](std::ostream& o) { write_trace_table_csv(o, {trace}, TableMetric::Asr); });
    write_stream(cfg.out / "table_accuracy.csv",
                 [&](std::ostream& o) { write_trace_table_csv(o, {trace}, TableMetric::Accuracy); });
    write_stream(cfg.out / "table_l2.csv", [&](std::ostream& o) { write_trace_table_csv(o, {trace}, TableMetric::MeanL2); });
    write_stream(cfg.out / "search.json", [&](std::ostream& o) { write_trace_summary_json(o, trace); });

    ojson report = report_header(cfg, "defend-search");
    report["attack"] = attack_name(cfg.attack.kind);
    report["policy"] = policy_label(cfg.policy);
    report["train_rate"] = trace.train_rate;
    report["baseline_accuracy"] = trace.baseline_accuracy;
    report["chosen_test_rate"] = trace.chosen_rate();
    report["exit_test_rate"] = trace.exit_rate;
    report["campaigns"] = out.campaigns;
    write_manifest(cfg, "defend-search", {{"attack", attack_name(cfg.attack.kind)},
                                          {"policy", policy_label(cfg.policy)},
                                          {"params_fingerprint", fmt::format("{:016x}", params.fingerprint())}});
    write_report(cfg, report, timer);
    return 0;
}

int cmd_sap_eval(const ExperimentConfig& cfg, std::ostream& log) {
    const Timer timer;
    const Dataset test_set = load_test_set(cfg);
    const ModelParams params = load_model(cfg);
    const auto eval = sap_defense_eval(params, test_set, cfg.sap, cfg.defense);
    const std::string label = mode_label(Sap{cfg.sap});
    log << fmt::format("accuracy {:.4f} ({} skipped)  ", eval.accuracy.accuracy, eval.accuracy.skipped)
        << campaign_line(label, eval.campaign.summary) << '\n';

    Outputs out;
    out.add_campaign(label, eval.campaign, &eval.accuracy);
    out.write(cfg.out);
    ojson report = report_header(cfg, "sap-eval");
    report["attack"] = attack_name(cfg.attack.kind);
    report["policy"] = policy_label(cfg.policy);
    report["campaigns"] = out.campaigns;
    write_manifest(cfg, "sap-eval", {{"attack", attack_name(cfg.attack.kind)},
                                     {"sap", label},
                                     {"params_fingerprint", fmt::format("{:016x}", params.fingerprint())}});
    write_report(cfg, report, timer);
    return 0;
}

int cmd_analyze(const ExperimentConfig& cfg, std::ostream& log) {
    const Timer timer;
    const Dataset test_set = load_test_set(cfg);
    const ModelParams params = load_model(cfg);
    const auto& a = cfg.analysis;
    if (a.image >= test_set.size()) throw ConfigError("analysis.image is outside the test set");
    const Tensor& x = test_set.images[a.image];
    const std::size_t classes = params.arch.num_classes();
    const std::size_t target = a.target.value_or((test_set.labels[a.image] + 1) % classes);
    if (target >= classes) throw ConfigError("analysis.target is not a class index");

    const SeededRng root(cfg.seed);
    SeededRng dim_rng = root.child("dims");
    const auto dims = choose_dimensions(x.size(), a.dims, dim_rng);
    std::vector<ForwardMode> modes;
    for (double r : a.test_rates) modes.emplace_back(TestDropout{r});
    if (a.include_sap) modes.emplace_back(Sap{cfg.sap});

    std::vector<GradientSampleSet> sets;
    for (std::size_t m = 0; m < modes.size(); ++m) {
        sets.push_back(sample_gradients(params, x, target, a.objective, modes[m], a.samples, dims,
                                        root.child("gradients").child(m), a.image));
    }
    const auto rows = variance_summary(sets);
    for (const auto& row : rows) log << fmt::format("{:<24} mean variance {:.6e}\n", row.mode, row.mean_variance);

    write_stream(cfg.out / "gradient_samples.csv", [&](std::ostream& o) { write_samples_csv(o, sets); });
    write_stream(cfg.out / "gradient_variance.csv", [&](std::ostream& o) { write_variance_csv(o, sets); });
    write_stream(cfg.out / "gradient_histograms.csv", [&](std::ostream& o) { write_histogram_csv(o, sets); });

    ojson report = report_header(cfg, "analyze-gradients");
    report["image_id"] = a.image;
    report["target"] = target;
    report["dims"] = dims;
    ojson variances = ojson::array();
    for (const auto& row : rows) variances.push_back({{"mode", row.mode}, {"mean_variance", row.mean_variance}});
    report["variances"] = variances;
    write_manifest(cfg, "analyze-gradients", {{"image_id", std::to_string(a.image)},
                                              {"target", std::to_string(target)}});
    write_report(cfg, report, timer);
    return 0;
}

int cmd_synth_cifar(const ExperimentConfig& cfg, std::ostream& log) {
    SeededRng train_rng = SeededRng(kSyntheticSeed).child("train");
    SeededRng test_rng = SeededRng(kSyntheticSeed).child("test");
    const auto train_set = make_synthetic_cifar(cfg.data.synthetic_train, train_rng, "train");
    const auto test_set = make_synthetic_cifar(cfg.data.synthetic_test, test_rng, "test");
    write_cifar10_bin(cfg.out / "data_batch_1.bin", train_set);
    write_cifar10_bin(cfg.out / "test_batch.bin", test_set);
    log << fmt::format("wrote {} training and {} test images to {}\n", train_set.size(), test_set.size(),
                       cfg.out.string());
    return 0;
}

int cmd_report(const ExperimentConfig& cfg, std::ostream& log) {
    const auto audit = audit_report(cfg.out);
    log << audit.table;
    for (const auto& p : audit.problems) log << "MISMATCH: " << p << '\n';
    log << (audit.ok ? "audit ok\n" : "audit FAILED\n");
    return audit.ok ? 0 : 1;
}

}  // namespace

std::string code_version() {
    return std::string("dropguard ") + DGRD_VERSION;
}

Dataset load_train_set(const ExperimentConfig& cfg) {
    const auto& d = cfg.data;
    if (d.kind == "mnist-idx") {
        return limited(load_mnist_idx(data_path(cfg, d.train_images), data_path(cfg, d.train_labels), "train"),
                       d.train_limit);
    }
    if (d.kind == "cifar10-bin") {
        std::vector<fs::path> paths;
        for (const auto& f : d.cifar_train) paths.push_back(data_path(cfg, f));
        return limited(load_cifar10_bin(paths, "train"), d.train_limit);
    }
    SeededRng rng = SeededRng(kSyntheticSeed).child("train");
    return limited(make_synthetic_cifar(d.synthetic_train, rng, "train"), d.train_limit);
}

Dataset load_test_set(const ExperimentConfig& cfg) {
    const auto& d = cfg.data;
    if (d.kind == "mnist-idx") {
        return limited(load_mnist_idx(data_path(cfg, d.test_images), data_path(cfg, d.test_labels), "test"),
                       d.test_limit);
    }
    if (d.kind == "cifar10-bin") {
        std::vector<fs::path> paths;
        for (const auto& f : d.cifar_test) paths.push_back(data_path(cfg, f));
        return limited(load_cifar10_bin(paths, "test"), d.test_limit);
    }
    SeededRng rng = SeededRng(kSyntheticSeed).child("test");
    return limited(make_synthetic_cifar(d.synthetic_test, rng, "test"), d.test_limit);
}

ModelParams load_model(const ExperimentConfig& cfg) {
    if (!cfg.params) throw ConfigError("this command needs a parameter file (model.params or --params)");
    return load_params(*cfg.params, architecture_by_name(cfg.architecture));
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"train",    "select-train",      "attack", "defend-search",
                                                   "sap-eval", "analyze-gradients", "report", "synth-cifar"};
    return names;
}

int run_command(const std::string& command, const ExperimentConfig& cfg, std::ostream& log) {
    if (command != "report") fs::create_directories(cfg.out);
    if (command == "train") return cmd_train(cfg, log);
    if (command == "select-train") return cmd_select_train(cfg, log);
    if (command == "attack") return cmd_attack(cfg, log);
    if (command == "defend-search") return cmd_defend_search(cfg, log);
    if (command == "sap-eval") return cmd_sap_eval(cfg, log);
    if (command == "analyze-gradients") return cmd_analyze(cfg, log);
    if (command == "synth-cifar") return cmd_synth_cifar(cfg, log);
    if (command == "report") return cmd_report(cfg, log);
    throw ConfigError("unknown command '" + command + "'");
}

AuditResult audit_report(const fs::path& dir) {
    AuditResult audit;
    auto fail = [&](std::string what) {
        audit.ok = false;
        audit.problems.push_back(std::move(what));
    };
    const ojson report = ojson::parse(read_text(dir / "report.json"));
    std::ostringstream table;
    table << fmt::format("{} ({}), seed {}\n", report.value("command", "?"), report.value("code_version", "?"),
                         report.value("seed", 0ULL));
    if (!report.contains("campaigns")) {
        audit.table = table.str();
        return audit;
    }

    std::map<std::string, std::vector<PairResult>> pairs;
    {
        std::istringstream in(read_text(dir / "results.jsonl"));
        for (std::string line; std::getline(in, line);) {
            if (line.empty()) continue;
            const ojson j = ojson::parse(line);
            PairResult p;
            p.image_id = j.at("image_id").get<std::size_t>();
            p.target = j.at("target").get<std::size_t>();
            p.skipped = j.at("skipped").get<bool>();
            p.result.success = j.at("success").get<bool>();
            p.result.distortion = {j.at("l0").get<double>(), j.at("l1").get<double>(), j.at("l2").get<double>(),
                                   j.at("linf").get<double>()};
            pairs[j.at("campaign").get<std::string>()].push_back(std::move(p));
        }
    }
    struct Hits {
        std::size_t hits = 0, evaluated = 0, skipped = 0, passes = 1;
    };
    std::map<std::string, Hits> hits;
    if (fs::exists(dir / "accuracy.jsonl")) {
        std::istringstream in(read_text(dir / "accuracy.jsonl"));
        for (std::string line; std::getline(in, line);) {
            if (line.empty()) continue;
            const ojson j = ojson::parse(line);
            auto& h = hits[j.at("campaign").get<std::string>()];
            h.passes = j.at("passes").get<std::size_t>();
            if (j.at("skipped").get<bool>()) {
                ++h.skipped;
            } else {
                ++h.evaluated;
                h.hits += j.at("hits").get<std::size_t>();
            }
        }
    }

    for (const auto& c : report.at("campaigns")) {
        const std::string label = c.at("label").get<std::string>();
        const auto& stored = c.at("summary");
        const CampaignSummary s = summarize(pairs[label]);
        auto check_count = [&](const char* key, std::size_t v) {
            if (stored.at(key).get<std::size_t>() != v) {
                fail(fmt::format("{}: {} is {} in report.json but {} in results.jsonl", label, key,
                                 stored.at(key).dump(), v));
            }
        };
        auto check_real = [&](const char* key, const std::optional<double>& v) {
            if (json_optional(stored.at(key)) != v) {
                fail(fmt::format("{}: {} is {} in report.json but {} recomputed", label, key, stored.at(key).dump(),
                                 v ? fmt::format("{}", *v) : "null"));
            }
        };
        check_count("pairs", s.pairs);
        check_count("skipped_pairs", s.skipped);
        check_count("successes", s.successes);
        check_real("asr", s.asr);
        check_real("mean_l0", s.mean_l0);
        check_real("mean_l2", s.mean_l2);
        check_real("mean_linf", s.mean_linf);
        std::string acc_text;
        if (c.contains("accuracy")) {
            const auto& h = hits[label];
            const double acc =
                h.evaluated > 0 ? static_cast<double>(h.hits) / static_cast<double>(h.evaluated * h.passes) : 0.0;
            if (c["accuracy"].at("accuracy").get<double>() != acc) {
                fail(fmt::format("{}: accuracy is {} in report.json but {} recomputed", label,
                                 c["accuracy"].at("accuracy").dump(), acc));
            }
            acc_text = fmt::format("  accuracy={:.2f}%", 100.0 * acc);
        }
        table << campaign_line(label, s) << acc_text << '\n';
    }
    audit.table = table.str();
    return audit;
}

}  // namespace dgrd
