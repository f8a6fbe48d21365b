#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgrd/attacks.hpp"
#include "dgrd/defenses.hpp"
#include "dgrd/training.hpp"

namespace dgrd {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every recognised "section.key" with its default value and a one-line
/// description, in documentation order.
struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* help;
};
const std::vector<ConfigKey>& config_keys();

/// Flat view of an INI file: "section.key" -> raw value. Unknown keys are
/// rejected so typos do not silently fall back to defaults.
class ConfigValues {
public:
    /// All keys at their defaults.
    ConfigValues();

    static ConfigValues from_ini_text(const std::string& text);
    static ConfigValues from_ini_file(const std::filesystem::path& path);

    /// "section.key=value"
    void apply_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;

    /// Sorted INI text with every key; stable across runs.
    std::string canonical_text() const;
    std::uint64_t hash() const;

private:
    std::map<std::string, std::string> values_;
};

struct DataConfig {
    std::string kind = "mnist-idx";  // mnist-idx | cifar10-bin | synthetic-cifar
    std::filesystem::path dir;
    std::string train_images, train_labels, test_images, test_labels;
    std::vector<std::string> cifar_train, cifar_test;
    std::size_t train_limit = 0;  // 0 keeps everything
    std::size_t test_limit = 0;
    std::size_t synthetic_train = 3000;
    std::size_t synthetic_test = 600;
};

struct AnalysisConfig {
    std::size_t samples = 50;
    std::size_t dims = 5;
    std::size_t image = 0;               // dataset index
    std::optional<std::size_t> target;   // default: (label + 1) mod classes
    Objective objective = CwMargin{};
    std::vector<double> test_rates = {0.0, 0.1, 0.3, 0.5, 0.7};
    bool include_sap = true;
};

/// Typed view used by the commands.
struct ExperimentConfig {
    DataConfig data;
    std::string architecture = "mnist";
    std::optional<std::filesystem::path> params;
    TrainConfig train;
    ForwardMode mode = Deterministic{};
    SapPlan sap;
    AttackSpec attack;
    SuccessPolicy policy = SinglePass{};
    std::size_t attack_images = 100;
    DefenseSearchConfig defense;
    double model_train_rate = 0.3;  // label for the loaded model in defense tables
    AnalysisConfig analysis;
    std::uint64_t seed = 1;
    std::filesystem::path out = "out";

    std::string canonical_text;
    std::uint64_t hash = 0;
};

/// Throws ConfigError naming the offending key.
ExperimentConfig build_config(const ConfigValues& values);

std::vector<double> parse_rate_list(const std::string& text);

}  // namespace dgrd
