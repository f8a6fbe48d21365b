#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dgrd/harness.hpp"

using namespace dgrd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "dgrd_harness_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

ConfigValues small_run(const std::string& out) {
    ConfigValues v;
    v.set("run.out", (scratch() / out).string());
    v.set("data.dir", (fs::path(DGRD_DATA_DIR) / "mnist-subset").string());
    v.set("data.train_limit", "150");
    v.set("data.test_limit", "60");
    v.set("train.epochs", "1");
    v.set("train.batch_size", "32");
    v.set("attack.kind", "fgsm");
    v.set("attack.images", "3");
    v.set("defense.accuracy_images", "30");
    v.set("defense.accuracy_passes", "2");
    v.set("analysis.samples", "6");
    return v;
}

int run(const std::string& command, const ConfigValues& v) {
    std::ostringstream log;
    return run_command(command, build_config(v), log);
}

// Trains the shared model once.
fs::path model_path() {
    static const fs::path path = [] {
        REQUIRE(run("train", small_run("model")) == 0);
        return scratch() / "model" / "model.dgrd";
    }();
    return path;
}

ConfigValues with_model(const std::string& out) {
    ConfigValues v = small_run(out);
    v.set("model.params", model_path().string());
    return v;
}

}  // namespace

TEST_CASE("ini parsing, overrides and canonical text") {
    const ConfigValues v = ConfigValues::from_ini_text("[run]\nseed = 9\n[attack]\nkind = jsma\n");
    CHECK(v.get("run.seed") == "9");
    CHECK(v.get("attack.kind") == "jsma");
    CHECK(v.get("train.epochs") == "30");
    CHECK_THROWS_AS(ConfigValues::from_ini_text("[run]\nseeed = 9\n"), ConfigError);
    CHECK_THROWS_AS(ConfigValues::from_ini_text("[bogus]\nx = 1\n"), ConfigError);

    ConfigValues o;
    o.apply_override("train.lr=0.01");
    CHECK(o.get("train.lr") == "0.01");
    CHECK_THROWS_AS(o.apply_override("train.lr"), ConfigError);
    CHECK_THROWS_AS(o.apply_override("nope.key=1"), ConfigError);

    const ConfigValues back = ConfigValues::from_ini_text(v.canonical_text());
    CHECK(back.canonical_text() == v.canonical_text());
    CHECK(back.hash() == v.hash());
    CHECK(ConfigValues{}.hash() != v.hash());
}

TEST_CASE("typed config rejects bad values and names the key") {
    auto rejects = [](const std::string& key, const std::string& value) {
        ConfigValues v;
        v.set("mode.mode", "test-dropout");
        v.set(key, value);
        try {
            build_config(v);
        } catch (const ConfigError& e) {
            return std::string(e.what()).find(key) != std::string::npos;
        }
        return false;
    };
    CHECK(rejects("attack.kind", "pgd"));
    CHECK(rejects("mode.test_dropout", "1.0"));
    CHECK(rejects("train.epochs", "ten"));
    CHECK(rejects("attack.policy", "sometimes"));
    CHECK(rejects("mode.mode", "magic"));
    CHECK(rejects("model.arch", "resnet"));

    ConfigValues ok;
    ok.set("mode.mode", "test-dropout");
    ok.set("mode.test_dropout", "0.5");
    const ExperimentConfig cfg = build_config(ok);
    CHECK(std::get<TestDropout>(cfg.mode).rate == 0.5);
    CHECK(cfg.defense.epsilon_acc == 0.01);
    CHECK(parse_rate_list("0, 0.1,0.3") == std::vector<double>{0.0, 0.1, 0.3});
}

TEST_CASE("attack runs repeat byte for byte and the audit passes") {
    ConfigValues v = with_model("attack_a");
    v.set("mode.mode", "test-dropout");
    v.set("mode.test_dropout", "0.3");
    REQUIRE(run("attack", v) == 0);
    v.set("run.out", (scratch() / "attack_b").string());
    REQUIRE(run("attack", v) == 0);
    for (const char* f : {"results.jsonl", "accuracy.jsonl"}) {
        CHECK(slurp(scratch() / "attack_a" / f) == slurp(scratch() / "attack_b" / f));
    }
    const std::string manifest = slurp(scratch() / "attack_a" / "manifest.txt");
    for (const char* key : {"seed", "config_hash", "code_version", "mode", "test_dropout"}) {
        CHECK(manifest.find(key) != std::string::npos);
    }
    const AuditResult audit = audit_report(scratch() / "attack_a");
    CHECK(audit.ok);
    CHECK(audit.problems.empty());

    std::istringstream lines(slurp(scratch() / "attack_a" / "results.jsonl"));
    std::string line;
    std::size_t count = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("image_id"));
        CHECK(j.contains("l2"));
        CHECK(j["target"] != j["true_label"]);
        ++count;
    }
    CHECK(count > 0);
    CHECK(count % 9 == 0);
}

TEST_CASE("the audit catches a tampered report") {
    ConfigValues v = with_model("tamper");
    REQUIRE(run("attack", v) == 0);
    const fs::path report = scratch() / "tamper" / "report.json";
    auto j = nlohmann::ordered_json::parse(slurp(report));
    auto& summary = j["campaigns"][0]["summary"];
    summary["successes"] = summary["successes"].get<int>() + 1;
    std::ofstream(report) << j.dump(2) << '\n';
    const AuditResult audit = audit_report(scratch() / "tamper");
    CHECK_FALSE(audit.ok);
    CHECK_FALSE(audit.problems.empty());
    std::ostringstream log;
    ConfigValues r = small_run("tamper");
    CHECK(run_command("report", build_config(r), log) != 0);
}

TEST_CASE("an empty campaign reports a null success rate") {
    ConfigValues v = with_model("empty");
    v.set("attack.images", "0");
    REQUIRE(run("attack", v) == 0);
    const auto j = nlohmann::json::parse(slurp(scratch() / "empty" / "report.json"));
    const auto& summary = j["campaigns"][0]["summary"];
    CHECK(summary["pairs"] == 0);
    CHECK(summary["asr"].is_null());
    CHECK(audit_report(scratch() / "empty").ok);
}

TEST_CASE("defend-search, sap-eval and analyze-gradients are deterministic") {
    for (const std::string command : {"defend-search", "sap-eval", "analyze-gradients"}) {
        ConfigValues v = with_model(command + "_a");
        v.set("attack.images", "2");
        v.set("defense.epsilon_acc", "0.05");
        REQUIRE(run(command, v) == 0);
        v.set("run.out", (scratch() / (command + "_b")).string());
        REQUIRE(run(command, v) == 0);
        std::size_t compared = 0;
        for (const auto& entry : fs::directory_iterator(scratch() / (command + "_a"))) {
            const auto ext = entry.path().extension();
            if (ext != ".csv" && ext != ".jsonl") continue;
            INFO(command << ": " << entry.path().filename());
            CHECK(slurp(entry.path()) == slurp(scratch() / (command + "_b") / entry.path().filename()));
            ++compared;
        }
        CHECK(compared > 0);
        if (command != "analyze-gradients") CHECK(audit_report(scratch() / (command + "_a")).ok);
    }
    CHECK(fs::exists(scratch() / "defend-search_a" / "table_asr.csv"));
    CHECK(fs::exists(scratch() / "defend-search_a" / "search.json"));
    CHECK(fs::exists(scratch() / "analyze-gradients_a" / "gradient_variance.csv"));
}

TEST_CASE("training twice gives identical parameter files and metrics") {
    ConfigValues v = small_run("train_b");
    v.set("train.dropout", "0");
    REQUIRE(run("train", v) == 0);
    v.set("run.out", (scratch() / "train_c").string());
    REQUIRE(run("train", v) == 0);
    CHECK(slurp(scratch() / "train_b" / "model.dgrd") == slurp(scratch() / "train_c" / "model.dgrd"));
    CHECK(slurp(scratch() / "train_b" / "metrics.csv") == slurp(scratch() / "train_c" / "metrics.csv"));
}

TEST_CASE("synthetic cifar batches and unknown commands") {
    ConfigValues v = small_run("synth");
    v.set("data.synthetic_train", "20");
    v.set("data.synthetic_test", "10");
    REQUIRE(run("synth-cifar", v) == 0);
    CHECK(fs::file_size(scratch() / "synth" / "data_batch_1.bin") == 20 * 3073);
    CHECK(fs::file_size(scratch() / "synth" / "test_batch.bin") == 10 * 3073);
    CHECK_THROWS(run("dance", v));
    ConfigValues missing = small_run("missing");
    missing.set("data.dir", (scratch() / "nowhere").string());
    CHECK_THROWS(run("train", missing));
}
