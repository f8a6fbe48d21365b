// dgrd_acceptance: end-to-end acceptance checks, one PASS/FAIL line each.

#include <algorithm>
#include <cmath>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dgrd/analysis.hpp"
#include "dgrd/defenses.hpp"
#include "dgrd/harness.hpp"
#include "support/oracle.hpp"

using namespace dgrd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path data_dir;
    fs::path cache_dir;
    std::optional<fs::path> full_mnist_dir;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string pct(double v) { return fmt::format("{:.2f}%", 100.0 * v); }
std::string pct(const std::optional<double>& v) { return v ? pct(*v) : "n/a"; }

std::size_t inversions(const std::vector<double>& seq) {
    std::size_t n = 0;
    for (std::size_t i = 1; i < seq.size(); ++i) n += seq[i] > seq[i - 1] ? 1 : 0;
    return n;
}

std::string join_pct(const std::vector<double>& rates, const std::vector<double>& values) {
    std::string s;
    for (std::size_t i = 0; i < rates.size(); ++i) {
        if (i) s += ", ";
        s += fmt::format("r'={:.1f}: {}", rates[i], pct(values[i]));
    }
    return s;
}

// Models -------------------------------------------------------------------

struct TrainedModel {
    ModelParams params;
    double accuracy = 0.0;       // deterministic, on the test set used for training
    double train_seconds = 0.0;  // wall clock of the run that produced the file
    bool cached = false;
};

// Trains once per distinct setup; later runs reuse the parameter file and
// its sidecar.
TrainedModel cached_model(const Context& ctx, const std::string& tag, const Architecture& arch,
                          const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg,
                          std::uint64_t init_seed) {
    const std::string key =
        fmt::format("{}-{}-r{:.2f}-e{}-b{}-lr{}-s{}-i{}-n{}-{:016x}", tag, arch.name, cfg.dropout_rate, cfg.epochs,
                    cfg.batch_size, cfg.learning_rate, cfg.seed, init_seed, train_set.size(), train_set.checksum);
    const fs::path params_path = ctx.cache_dir / (key + ".dgrd");
    const fs::path sidecar = ctx.cache_dir / (key + ".json");
    TrainedModel m;
    if (fs::exists(params_path) && fs::exists(sidecar)) {
        std::ifstream in(sidecar);
        const auto j = nlohmann::json::parse(in);
        m.params = load_params(params_path, arch);
        m.accuracy = j.at("test_accuracy").get<double>();
        m.train_seconds = j.at("train_seconds").get<double>();
        m.cached = true;
        return m;
    }
    SeededRng init(init_seed);
    const Stopwatch clock;
    TrainResult result = train(init_params(arch, init), train_set, nullptr, cfg, [&](const EpochMetrics& e) {
        std::cerr << fmt::format("  [{}] epoch {} loss {:.4f} train acc {:.4f} ({:.0f}s)\n", tag, e.epoch,
                                 e.train_loss, e.train_acc, clock.seconds());
    });
    m.train_seconds = clock.seconds();
    m.params = std::move(result.params);
    m.accuracy = evaluate_accuracy(m.params, test_set, Deterministic{}, 1, SeededRng(0));
    fs::create_directories(ctx.cache_dir);
    save_params(params_path, m.params);
    nlohmann::json j;
    j["test_accuracy"] = m.accuracy;
    j["train_seconds"] = m.train_seconds;
    j["test_size"] = test_set.size();
    std::ofstream(sidecar) << j.dump(2) << '\n';
    return m;
}

struct MnistData {
    Dataset train;
    Dataset test;
};

MnistData load_mnist_dir(const fs::path& dir) {
    return {load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", "train"),
            load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", "test")};
}

const MnistData& subset(const Context& ctx) {
    static const MnistData data = load_mnist_dir(ctx.data_dir / "mnist-subset");
    return data;
}

TrainConfig mnist_train_config(double rate) {
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 64;
    cfg.learning_rate = 1e-3;
    cfg.dropout_rate = rate;
    cfg.seed = 3;
    return cfg;
}

const TrainedModel& mnist_model(const Context& ctx, double rate) {
    static std::map<double, TrainedModel> models;
    auto it = models.find(rate);
    if (it == models.end()) {
        const auto& d = subset(ctx);
        it = models.emplace(rate, cached_model(ctx, "subset", mnist_architecture(), d.train, d.test,
                                               mnist_train_config(rate), 7))
                 .first;
    }
    return it->second;
}

// Criteria -------------------------------------------------------------------

Outcome gradient_oracles(const Context&) {
    const std::size_t instances = 20;
    const auto cases = oracle::gradient_oracle_suite(instances, 2024);
    double worst = 0.0;
    std::string worst_name;
    bool ok = !cases.empty();
    for (const auto& c : cases) {
        ok = ok && c.instances >= instances && c.max_error < 1e-4;
        if (c.max_error >= worst) {
            worst = c.max_error;
            worst_name = c.name;
        }
    }
    return {ok, fmt::format("{} cases x {} instances, h = {:g}, worst relative error {:.2e} ({})", cases.size(),
                            instances, oracle::kStep, worst, worst_name)};
}

Outcome dropout_expectation(const Context& ctx) {
    const auto& m = mnist_model(ctx, 0.3);
    const Tensor& x = subset(ctx).test.images[0];
    const std::size_t site = m.params.arch.dropout_site() + 1;
    SeededRng rng(41);
    const Tensor det = forward_record(m.params, x, Deterministic{}, rng).inputs[site];
    Tensor mean(det.shape());
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
        SeededRng pass = rng.child(i);
        add_scaled(mean, 1.0 / static_cast<double>(n), forward_record(m.params, x, TestDropout{0.5}, pass).inputs[site]);
    }
    const double err = oracle::relative_error(mean, det);
    return {err < 0.02, fmt::format("{} passes of TestDropout(0.5), relative L2 error {:.4f} over {} units", n, err,
                                    det.size())};
}

Outcome sap_algebra(const Context&) {
    SeededRng rng(5);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        SeededRng r = rng.child(static_cast<std::uint64_t>(i));
        const Tensor h = oracle::uniform_tensor({64}, r);
        const Tensor p = sap_probabilities(h);
        double sum = 0.0;
        for (double v : p.data()) sum += v;
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    const double q = sap_keep_probability(0.25, 1);
    const double q2 = sap_keep_probability(0.25, 2);
    const bool ok = worst <= 1e-9 && std::abs(q - 0.25) <= 1e-12 && std::abs(q2 - (1.0 - 0.75 * 0.75)) <= 1e-12;
    return {ok, fmt::format("max |sum p - 1| = {:.1e} over 100 vectors; q(0.25, 1) = {:.6f}, q(0.25, 2) = {:.6f}",
                            worst, q, q2)};
}

Outcome mnist_baseline(const Context& ctx) {
    const auto& m = mnist_model(ctx, 0.3);
    const auto& d = subset(ctx);
    const bool subset_ok = m.accuracy >= 0.97 && m.train_seconds <= 20 * 60;
    std::string detail = fmt::format("subset {} train / {} test, r = 0.3: accuracy {} after {:.0f}s of training{}",
                                     d.train.size(), d.test.size(), pct(m.accuracy), m.train_seconds,
                                     m.cached ? " (cached)" : "");
    if (!ctx.full_mnist_dir) {
        return {subset_ok, detail + "; full 60k run skipped (set DGRD_FULL_MNIST_DIR)"};
    }
    const MnistData full = load_mnist_dir(*ctx.full_mnist_dir);
    TrainConfig cfg = mnist_train_config(0.3);
    cfg.epochs = 12;
    const TrainedModel f = cached_model(ctx, "full", mnist_architecture(), full.train, full.test, cfg, 7);
    detail += fmt::format("; full {} train: accuracy {} after {:.0f}s", full.train.size(), pct(f.accuracy),
                          f.train_seconds);
    return {subset_ok && f.accuracy >= 0.985, detail};
}

Outcome undefended_cw(const Context& ctx) {
    const auto& m = mnist_model(ctx, 0.3);
    CampaignConfig cc;
    cc.images = 10;
    cc.seed = 1;
    const CampaignResult r = run_campaign(m.params, subset(ctx).test, AttackSpec{CwL2{}}, Deterministic{}, cc);
    const auto& s = r.summary;
    const bool ok = s.pairs >= 90 && s.asr && *s.asr >= 0.95;
    return {ok, fmt::format("C&W L2, deterministic: ASR {} over {} pairs, mean L2 {:.3f}", pct(s.asr), s.pairs,
                            s.mean_l2.value_or(0.0))};
}

std::vector<DefenseRow> rows_for(const ModelParams& params, const Dataset& test, const AttackSpec& attack,
                                 const std::vector<double>& rates, std::size_t images, std::size_t accuracy_images) {
    DefenseSearchConfig cfg;
    cfg.attack = attack;
    cfg.attack_images = images;
    cfg.accuracy_images = accuracy_images;
    cfg.accuracy_passes = 10;
    cfg.seed = 1;
    std::vector<DefenseRow> rows;
    for (double r : rates) rows.push_back(evaluate_test_rate(params, test, r, cfg));
    return rows;
}

std::vector<double> asr_of(const std::vector<DefenseRow>& rows) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.attack.asr.value_or(0.0));
    return v;
}

Outcome defensive_dropout_headline(const Context& ctx) {
    const auto& m = mnist_model(ctx, 0.3);
    const std::vector<double> rates = {0.0, 0.1, 0.3, 0.5};
    const auto rows = rows_for(m.params, subset(ctx).test, AttackSpec{CwL2{}}, rates, 10, 500);
    const auto asr = asr_of(rows);
    const double drop = rows[0].accuracy - rows[3].accuracy;
    const bool bound = asr[3] <= 0.40;
    const bool half = asr[3] <= 0.5 * asr[1];
    const std::size_t inv = inversions(asr);
    const bool ok = bound && half && inv <= 1 && drop <= 0.02;
    return {ok, fmt::format("C&W ASR {} ({} pairs each); r'=0.5 <= 40%: {}, <= half of r'=0.1: {}, inversions {}; "
                            "accuracy {} -> {} (drop {:.2f} points)",
                            join_pct(rates, asr), rows[0].attack.pairs, bound ? "yes" : "no", half ? "yes" : "no",
                            inv, pct(rows[0].accuracy), pct(rows[3].accuracy), 100.0 * drop)};
}

Outcome fgsm_trend(const Context& ctx) {
    const auto& m = mnist_model(ctx, 0.7);
    const std::vector<double> rates = {0.0, 0.1, 0.3, 0.5, 0.7};
    const auto rows = rows_for(m.params, subset(ctx).test, AttackSpec{Fgsm{0.25}}, rates, 500, 100);
    const auto asr = asr_of(rows);
    const std::size_t inv = inversions(asr);
    const bool ok = inv <= 1 && asr.back() <= 0.85 * asr.front();
    return {ok, fmt::format("train r = 0.7 (accuracy {}), FGSM eps 0.25, {} pairs each: {}; inversions {}, "
                            "endpoint ratio {:.3f}",
                            pct(m.accuracy), rows[0].attack.pairs, join_pct(rates, asr), inv,
                            asr.front() > 0 ? asr.back() / asr.front() : 0.0)};
}

Outcome jsma_trend(const Context& ctx) {
    const auto& m = mnist_model(ctx, 0.7);
    const std::vector<double> rates = {0.0, 0.7};
    const auto rows = rows_for(m.params, subset(ctx).test, AttackSpec{Jsma{}}, rates, 10, 100);
    const auto asr = asr_of(rows);
    const bool ok = asr[0] > 0.0 && asr[1] <= 0.5 * asr[0];
    return {ok, fmt::format("train r = 0.7, JSMA, {} pairs each: {}; ratio {:.3f}", rows[0].attack.pairs,
                            join_pct(rates, asr), asr[0] > 0 ? asr[1] / asr[0] : 0.0)};
}

Outcome gradient_variance(const Context& ctx) {
    const auto& m = mnist_model(ctx, 0.3);
    const auto& test = subset(ctx).test;
    const Tensor& x = test.images[0];
    const std::size_t target = (test.labels[0] + 1) % 10;
    SeededRng pick(9);
    const auto dims = choose_dimensions(x.size(), 5, pick);
    const std::vector<double> rates = {0.1, 0.3, 0.5, 0.7};
    std::vector<double> v;
    for (double r : rates) {
        const auto set = sample_gradients(m.params, x, target, CwMargin{}, TestDropout{r}, 50, dims, SeededRng(10));
        v.push_back(variance_summary({set})[0].mean_variance);
    }
    const auto sap = sample_gradients(m.params, x, target, CwMargin{}, Sap{}, 50, dims, SeededRng(10));
    const double v_sap = variance_summary({sap})[0].mean_variance;
    bool increasing = true;
    for (std::size_t i = 1; i < v.size(); ++i) increasing = increasing && v[i] > v[i - 1];
    const bool ok = increasing && v.back() > v_sap;
    std::string seq;
    for (std::size_t i = 0; i < v.size(); ++i) seq += fmt::format("{}r'={:.1f}: {:.3e}", i ? ", " : "", rates[i], v[i]);
    return {ok, fmt::format("50 samples, 5 dims, mean variance {}; SAP {:.3e}", seq, v_sap)};
}

std::map<std::string, std::string> collect_outputs(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto ext = e.path().extension();
        if (ext != ".csv" && ext != ".jsonl") continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        files[e.path().filename().string()] = s.str();
    }
    return files;
}

Outcome determinism(const Context& ctx) {
    const fs::path root = ctx.cache_dir / "determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path model = root / "model.dgrd";
    save_params(model, mnist_model(ctx, 0.3).params);

    struct Run {
        std::string command;
        std::vector<std::pair<std::string, std::string>> keys;
    };
    const std::vector<Run> runs = {
        {"train", {{"train.epochs", "1"}, {"data.train_limit", "300"}, {"train.dropout", "0.5"}}},
        {"attack", {{"mode.mode", "test-dropout"}, {"mode.test_dropout", "0.5"}, {"attack.kind", "fgsm"}}},
        {"attack", {{"mode.mode", "sap"}, {"attack.kind", "jsma"}, {"attack.images", "2"}}},
        {"defend-search", {{"attack.kind", "fgsm"}, {"defense.epsilon_acc", "0.05"}}},
        {"sap-eval", {{"attack.kind", "fgsm"}}},
        {"analyze-gradients", {{"analysis.samples", "20"}}},
    };
    std::size_t compared = 0;
    std::vector<std::string> mismatched;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        std::map<std::string, std::string> outputs[2];
        for (int rep = 0; rep < 2; ++rep) {
            ConfigValues v;
            v.set("run.seed", "17");
            v.set("run.out", (root / fmt::format("{}-{}-{}", i, runs[i].command, rep)).string());
            v.set("data.dir", (ctx.data_dir / "mnist-subset").string());
            v.set("data.test_limit", "200");
            v.set("model.params", model.string());
            v.set("attack.images", "4");
            v.set("defense.accuracy_images", "100");
            v.set("defense.accuracy_passes", "3");
            for (const auto& [k, val] : runs[i].keys) v.set(k, val);
            std::ostringstream log;
            if (run_command(runs[i].command, build_config(v), log) != 0) {
                return {false, runs[i].command + " returned a nonzero status"};
            }
            outputs[rep] = collect_outputs(root / fmt::format("{}-{}-{}", i, runs[i].command, rep));
        }
        for (const auto& [name, bytes] : outputs[0]) {
            ++compared;
            const auto other = outputs[1].find(name);
            if (other == outputs[1].end() || other->second != bytes) mismatched.push_back(runs[i].command + "/" + name);
        }
        if (outputs[0].size() != outputs[1].size()) mismatched.push_back(runs[i].command + " (file set)");
    }
    std::string detail = fmt::format("{} commands run twice, {} CSV/JSONL files compared", runs.size(), compared);
    for (const auto& m : mismatched) detail += "; differs: " + m;
    return {mismatched.empty() && compared > 0, detail};
}

Outcome tiny_cifar_ordering(const Context& ctx) {
    SeededRng train_rng = SeededRng(20181105).child("train");
    SeededRng test_rng = SeededRng(20181105).child("test");
    const Dataset train_set = make_synthetic_cifar(3000, train_rng, "train");
    const Dataset test_set = make_synthetic_cifar(600, test_rng, "test");
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 32;
    tc.dropout_rate = 0.3;
    tc.seed = 3;
    const TrainedModel m = cached_model(ctx, "synthetic", tiny_architecture(), train_set, test_set, tc, 7);

    DefenseSearchConfig cfg;
    cfg.attack = AttackSpec{CwL2{}};
    cfg.epsilon_acc = DefenseSearchConfig::default_epsilon("cifar10-bin");
    cfg.attack_images = 10;
    cfg.accuracy_images = 600;
    cfg.accuracy_passes = 5;
    cfg.seed = 1;
    const DefenseSearchTrace trace = defensive_dropout_search(m.params, test_set, 0.3, m.accuracy, cfg);
    const SapEvaluation sap = sap_defense_eval(m.params, test_set, SapPlan{}, cfg);

    const double undefended = trace.rows.front().attack.asr.value_or(0.0);
    const DefenseRow& best = trace.rows[trace.chosen];
    const double dd = best.attack.asr.value_or(0.0);
    const double sap_asr = sap.campaign.summary.asr.value_or(0.0);
    const bool ok = dd < sap_asr && sap_asr < undefended;
    return {ok, fmt::format("tiny model on synthetic CIFAR-10 batches (accuracy {}), C&W, {} pairs each: "
                            "undefended {}, SAP {} (accuracy {}), defensive dropout r'={:.1f} {} (accuracy {})",
                            pct(m.accuracy), best.attack.pairs, pct(undefended), pct(sap_asr),
                            pct(sap.accuracy.accuracy), best.test_rate, pct(dd), pct(best.accuracy))};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    Context ctx;
    std::string data_dir = DGRD_DATA_DIR;
    std::string cache_dir = DGRD_ACCEPTANCE_CACHE;
    std::vector<int> only;
    app.add_option("--data", data_dir, "directory holding mnist-subset/");
    app.add_option("--cache", cache_dir, "directory for cached models and scratch output");
    app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 11));
    CLI11_PARSE(app, argc, argv);
    ctx.data_dir = data_dir;
    ctx.cache_dir = cache_dir;
    if (const char* full = std::getenv("DGRD_FULL_MNIST_DIR"); full && *full) ctx.full_mnist_dir = fs::path(full);
    fs::create_directories(ctx.cache_dir);

    const std::vector<Criterion> criteria = {
        {1, "gradient oracle suite", gradient_oracles},
        {2, "dropout expectation", dropout_expectation},
        {3, "SAP algebra", sap_algebra},
        {4, "MNIST baseline", mnist_baseline},
        {5, "undefended C&W", undefended_cw},
        {6, "defensive dropout headline", defensive_dropout_headline},
        {7, "FGSM trend", fgsm_trend},
        {8, "JSMA trend", jsma_trend},
        {9, "gradient variance", gradient_variance},
        {10, "determinism", determinism},
        {11, "tiny CIFAR ordering", tiny_cifar_ordering},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const Stopwatch clock;
        Outcome o;
        try {
            o = c.run(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << fmt::format("[{}] criterion {:>2} {}: {} ({:.1f}s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                                 o.detail, clock.seconds())
                  << std::flush;
    }
    std::cout << fmt::format("{} criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
