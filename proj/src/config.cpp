#include "dgrd/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

namespace dgrd {

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"run.seed", "1", "global seed; every stream derives from it"},
        {"run.out", "out", "output directory"},
        {"data.kind", "mnist-idx", "mnist-idx | cifar10-bin | synthetic-cifar"},
        {"data.dir", "", "directory holding the dataset files"},
        {"data.train_images", "train-images-idx3-ubyte", "IDX training images (relative to data.dir)"},
        {"data.train_labels", "train-labels-idx1-ubyte", "IDX training labels"},
        {"data.test_images", "t10k-images-idx3-ubyte", "IDX test images"},
        {"data.test_labels", "t10k-labels-idx1-ubyte", "IDX test labels"},
        {"data.cifar_train", "data_batch_1.bin,data_batch_2.bin,data_batch_3.bin,data_batch_4.bin,data_batch_5.bin",
         "CIFAR-10 training batches"},
        {"data.cifar_test", "test_batch.bin", "CIFAR-10 test batches"},
        {"data.train_limit", "0", "keep only the first N training images (0 = all)"},
        {"data.test_limit", "0", "keep only the first N test images (0 = all)"},
        {"data.synthetic_train", "3000", "synthetic-cifar training images"},
        {"data.synthetic_test", "600", "synthetic-cifar test images"},
        {"model.arch", "mnist", "mnist | cifar10 | tiny"},
        {"model.params", "", "DGRD parameter file to load"},
        {"train.epochs", "30", "training epochs"},
        {"train.batch_size", "128", "mini-batch size"},
        {"train.lr", "0.001", "learning rate"},
        {"train.optimizer", "adam", "adam | sgd-momentum"},
        {"train.momentum", "0.9", "momentum for sgd-momentum"},
        {"train.dropout", "0.3", "training dropout rate r"},
        {"mode.mode", "deterministic", "deterministic | test-dropout | sap"},
        {"mode.test_dropout", "0", "test dropout rate r' for mode test-dropout"},
        {"mode.sap_samples", "0", "SAP draws per layer (0 = number of units)"},
        {"mode.sap_scope", "all-hidden", "all-hidden | dropout-site"},
        {"attack.kind", "cw-l2", "cw-l2 | fgsm | jsma"},
        {"attack.images", "100", "correctly classified images per campaign (x 9 targets)"},
        {"attack.grad_samples", "1", "sub-network gradients averaged per attack step"},
        {"attack.policy", "single", "single | majority"},
        {"attack.majority_m", "5", "passes for the majority policy (odd)"},
        {"attack.fgsm_epsilon", "0.25", "FGSM step"},
        {"attack.jsma_theta", "1.0", "JSMA per-step pixel increase"},
        {"attack.jsma_gamma", "0.145", "JSMA max fraction of modified pixels"},
        {"attack.cw_kappa", "0", "C&W confidence"},
        {"attack.cw_search_steps", "10", "C&W binary search steps for c"},
        {"attack.cw_iterations", "100", "C&W Adam iterations per c"},
        {"attack.cw_lr", "0.1", "C&W Adam learning rate"},
        {"attack.cw_c_init", "0.01", "C&W initial c"},
        {"attack.cw_c_min", "0.0001", "C&W lower c bound"},
        {"attack.cw_c_max", "1000000", "C&W upper c bound"},
        {"attack.cw_abort_early", "true", "stop an inner loop once the objective stalls"},
        {"defense.epsilon_acc", "", "max accuracy drop (empty: 0.01 for MNIST, 0.04 otherwise)"},
        {"defense.step", "0.1", "test dropout increment"},
        {"defense.train_grid", "0.3,0.5,0.7", "training rates for select-train"},
        {"defense.train_rate", "", "label for the loaded model's training rate (empty: train.dropout)"},
        {"defense.accuracy_images", "1000", "test images used for accuracy"},
        {"defense.accuracy_passes", "10", "stochastic passes per accuracy image"},
        {"analysis.samples", "50", "gradient samples per mode"},
        {"analysis.dims", "5", "input dimensions tracked"},
        {"analysis.image", "0", "test-set index of the analysed image"},
        {"analysis.target", "", "target class (empty: label + 1)"},
        {"analysis.objective", "cw", "cw | xent"},
        {"analysis.test_rates", "0,0.1,0.3,0.5,0.7", "test dropout rates sampled"},
        {"analysis.include_sap", "true", "also sample the SAP mode"},
    };
    return keys;
}

ConfigValues::ConfigValues() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

ConfigValues ConfigValues::from_ini_text(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ConfigValues out;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
        for (const auto& [key, value] : body) out.set(section + "." + key, value.data());
    }
    return out;
}

ConfigValues ConfigValues::from_ini_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_ini_text(ss.str());
}

void ConfigValues::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must look like section.key=value");
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void ConfigValues::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second = value;
}

const std::string& ConfigValues::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
}

std::string ConfigValues::canonical_text() const {
    std::ostringstream os;
    std::string section;
    for (const auto& [name, value] : values_) {
        const auto dot = name.find('.');
        const std::string sec = name.substr(0, dot);
        if (sec != section) {
            os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
            section = sec;
        }
        os << name.substr(dot + 1) << " = " << value << '\n';
    }
    return os.str();
}

std::uint64_t ConfigValues::hash() const {
    return fnv1a64(canonical_text());
}

namespace {

struct Reader {
    const ConfigValues& v;

    const std::string& str(const char* key) const { return v.get(key); }

    double real(const char* key) const {
        const auto& s = v.get(key);
        try {
            std::size_t used = 0;
            const double d = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument("trailing text");
            return d;
        } catch (const std::exception&) {
            throw ConfigError("config: " + std::string(key) + " = '" + s + "' is not a number");
        }
    }

    std::uint64_t count(const char* key) const {
        const auto& s = v.get(key);
        std::uint64_t out = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
            throw ConfigError("config: " + std::string(key) + " = '" + s + "' is not a non-negative integer");
        }
        return out;
    }

    bool flag(const char* key) const {
        const auto& s = v.get(key);
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw ConfigError("config: " + std::string(key) + " = '" + s + "' is not a boolean");
    }

    std::vector<std::string> list(const char* key) const {
        std::vector<std::string> out;
        std::stringstream ss(v.get(key));
        for (std::string item; std::getline(ss, item, ',');) {
            const auto b = item.find_first_not_of(" \t");
            const auto e = item.find_last_not_of(" \t");
            if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
        }
        return out;
    }

    [[noreturn]] void bad(const char* key, const char* expected) const {
        throw ConfigError("config: " + std::string(key) + " = '" + v.get(key) + "' (expected " + expected + ")");
    }
};

template <class Fn>
void checked(const char* key, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config: " + std::string(key) + ": " + e.what());
    }
}

}  // namespace

std::vector<double> parse_rate_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("bad rate '" + item + "' in list '" + text + "'");
        }
    }
    return out;
}

ExperimentConfig build_config(const ConfigValues& values) {
    const Reader r{values};
    ExperimentConfig c;
    c.seed = r.count("run.seed");
    c.out = r.str("run.out");

    auto& d = c.data;
    d.kind = r.str("data.kind");
    if (d.kind != "mnist-idx" && d.kind != "cifar10-bin" && d.kind != "synthetic-cifar") {
        r.bad("data.kind", "mnist-idx, cifar10-bin or synthetic-cifar");
    }
    d.dir = r.str("data.dir");
    d.train_images = r.str("data.train_images");
    d.train_labels = r.str("data.train_labels");
    d.test_images = r.str("data.test_images");
    d.test_labels = r.str("data.test_labels");
    d.cifar_train = r.list("data.cifar_train");
    d.cifar_test = r.list("data.cifar_test");
    d.train_limit = r.count("data.train_limit");
    d.test_limit = r.count("data.test_limit");
    d.synthetic_train = r.count("data.synthetic_train");
    d.synthetic_test = r.count("data.synthetic_test");

    c.architecture = r.str("model.arch");
    checked("model.arch", [&] { (void)architecture_by_name(c.architecture); });
    if (!r.str("model.params").empty()) c.params = r.str("model.params");

    auto& t = c.train;
    t.epochs = r.count("train.epochs");
    t.batch_size = r.count("train.batch_size");
    t.learning_rate = r.real("train.lr");
    const auto& opt = r.str("train.optimizer");
    if (opt == "adam") t.optimizer = OptimizerKind::Adam;
    else if (opt == "sgd-momentum") t.optimizer = OptimizerKind::SgdMomentum;
    else r.bad("train.optimizer", "adam or sgd-momentum");
    t.momentum = r.real("train.momentum");
    t.dropout_rate = r.real("train.dropout");
    t.seed = c.seed;
    checked("train", [&] { t.validate(); });

    const std::uint64_t sap_samples = r.count("mode.sap_samples");
    if (sap_samples > 0) c.sap.samples = sap_samples;
    const auto& scope = r.str("mode.sap_scope");
    if (scope == "all-hidden") c.sap.scope = SapScope::AllHidden;
    else if (scope == "dropout-site") c.sap.scope = SapScope::DropoutSite;
    else r.bad("mode.sap_scope", "all-hidden or dropout-site");
    const auto& mode = r.str("mode.mode");
    if (mode == "deterministic") c.mode = Deterministic{};
    else if (mode == "test-dropout") c.mode = TestDropout{r.real("mode.test_dropout")};
    else if (mode == "sap") c.mode = Sap{c.sap};
    else r.bad("mode.mode", "deterministic, test-dropout or sap");
    checked(mode == "sap" ? "mode.sap_samples" : "mode.test_dropout", [&] { validate_mode(c.mode); });

    const auto& kind = r.str("attack.kind");
    if (kind == "fgsm") {
        c.attack.kind = Fgsm{r.real("attack.fgsm_epsilon")};
    } else if (kind == "jsma") {
        c.attack.kind = Jsma{r.real("attack.jsma_theta"), r.real("attack.jsma_gamma")};
    } else if (kind == "cw-l2") {
        CwL2 cw;
        cw.kappa = r.real("attack.cw_kappa");
        cw.binary_search_steps = r.count("attack.cw_search_steps");
        cw.max_iterations = r.count("attack.cw_iterations");
        cw.learning_rate = r.real("attack.cw_lr");
        cw.c_init = r.real("attack.cw_c_init");
        cw.c_min = r.real("attack.cw_c_min");
        cw.c_max = r.real("attack.cw_c_max");
        cw.abort_early = r.flag("attack.cw_abort_early");
        c.attack.kind = cw;
    } else {
        r.bad("attack.kind", "cw-l2, fgsm or jsma");
    }
    c.attack.grad_samples = r.count("attack.grad_samples");
    checked("attack", [&] { c.attack.validate(); });
    c.attack_images = r.count("attack.images");
    const auto& policy = r.str("attack.policy");
    if (policy == "single") c.policy = SinglePass{};
    else if (policy == "majority") c.policy = MajorityOf{r.count("attack.majority_m")};
    else r.bad("attack.policy", "single or majority");
    checked("attack.majority_m", [&] { validate_policy(c.policy); });

    auto& def = c.defense;
    def.attack = c.attack;
    def.policy = c.policy;
    def.attack_images = c.attack_images;
    def.seed = c.seed;
    const bool mnist_like = d.kind == "mnist-idx";
    def.epsilon_acc = r.str("defense.epsilon_acc").empty()
                          ? DefenseSearchConfig::default_epsilon(mnist_like ? "mnist" : "cifar10")
                          : r.real("defense.epsilon_acc");
    def.step = r.real("defense.step");
    checked("defense.train_grid", [&] { def.train_grid = parse_rate_list(r.str("defense.train_grid")); });
    c.model_train_rate =
        r.str("defense.train_rate").empty() ? t.dropout_rate : r.real("defense.train_rate");
    def.accuracy_images = r.count("defense.accuracy_images");
    def.accuracy_passes = r.count("defense.accuracy_passes");
    checked("defense", [&] { def.validate(); });

    auto& a = c.analysis;
    a.samples = r.count("analysis.samples");
    a.dims = r.count("analysis.dims");
    a.image = r.count("analysis.image");
    if (!r.str("analysis.target").empty()) a.target = r.count("analysis.target");
    const auto& objective = r.str("analysis.objective");
    if (objective == "cw") a.objective = CwMargin{};
    else if (objective == "xent") a.objective = CrossEntropy{};
    else r.bad("analysis.objective", "cw or xent");
    checked("analysis.test_rates", [&] { a.test_rates = parse_rate_list(r.str("analysis.test_rates")); });
    a.include_sap = r.flag("analysis.include_sap");

    c.canonical_text = values.canonical_text();
    c.hash = values.hash();
    return c;
}

}  // namespace dgrd
