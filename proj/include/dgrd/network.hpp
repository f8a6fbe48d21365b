#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dgrd/rng.hpp"
#include "dgrd/tensor.hpp"

namespace dgrd {

// ---------------------------------------------------------------------------
// Architecture

enum class LayerKind { Conv, MaxPool, Dense, Relu, Softmax };

struct LayerSpec {
    LayerKind kind;
    std::size_t units = 0;  // filters for Conv, outputs for Dense

    static LayerSpec conv(std::size_t filters) { return {LayerKind::Conv, filters}; }
    static LayerSpec maxpool() { return {LayerKind::MaxPool, 0}; }
    static LayerSpec dense(std::size_t units) { return {LayerKind::Dense, units}; }
    static LayerSpec relu() { return {LayerKind::Relu, 0}; }
    static LayerSpec softmax() { return {LayerKind::Softmax, 0}; }

    bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

class ArchitectureError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Ordered layer list plus the dense layer whose activation hosts dropout.
///
/// Dropout (and, at the dropout site, SAP) is applied to the output of the
/// ReLU that directly follows layers[dropout_layer]. The last layer must be
/// Softmax preceded by the Dense layer producing the logits.
struct Architecture {
    std::string name;
    Shape input_shape;  // H x W x C
    std::vector<LayerSpec> layers;
    std::size_t dropout_layer = 0;

    /// Validates the layer chain end to end and returns the output shape of
    /// every layer. Throws ShapeError or ArchitectureError.
    std::vector<Shape> output_shapes() const;
    void validate() const { (void)output_shapes(); }

    std::size_t num_classes() const;
    /// Index of the ReLU layer whose output carries the dropout mask.
    std::size_t dropout_site() const;
    /// Indices of every ReLU layer feeding another hidden layer.
    std::vector<std::size_t> hidden_activation_sites() const;
    std::size_t parameter_count() const;

    /// Canonical text form, e.g. "mnist;28x28x1;C32,R,C32,R,P,...;drop=10".
    std::string descriptor() const;
    static Architecture from_descriptor(const std::string& text);
    std::uint64_t fingerprint() const;

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Table-1 models and a small CIFAR-shaped model for desk-scale runs.
Architecture mnist_architecture();
Architecture cifar10_architecture();
Architecture tiny_architecture();
Architecture architecture_by_name(const std::string& name);

// ---------------------------------------------------------------------------
// Parameters

struct LayerParams {
    Tensor weights;  // empty for layers without parameters
    Tensor bias;
};

struct ModelParams {
    Architecture arch;
    std::vector<LayerParams> layers;

    std::uint64_t fingerprint() const { return arch.fingerprint(); }
    std::size_t parameter_count() const;
    /// Every weight and bias tensor in layer order (weights before bias).
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
};

/// Zero-valued parameter set with the right shapes (also used for gradients).
std::vector<LayerParams> zero_params(const Architecture& arch);

/// Fan-in scaled normal weights (variance 2 / fan_in), zero biases.
ModelParams init_params(const Architecture& arch, SeededRng& rng);

// ---------------------------------------------------------------------------
// Forward modes

enum class SapScope { AllHidden, DropoutSite };

/// SAP settings. samples == nullopt draws as many samples as the layer has
/// units.
struct SapPlan {
    std::optional<std::size_t> samples;
    SapScope scope = SapScope::AllHidden;
};

struct Deterministic {};
struct TrainDropout {
    double rate = 0.0;
};
struct TestDropout {
    double rate = 0.0;
};
struct Sap {
    SapPlan plan;
};

using ForwardMode = std::variant<Deterministic, TrainDropout, TestDropout, Sap>;

/// Throws std::invalid_argument for rates outside [0, 1) or r_p == 0.
void validate_mode(const ForwardMode& mode);
bool is_stochastic(const ForwardMode& mode);
std::string mode_label(const ForwardMode& mode);

// ---------------------------------------------------------------------------
// SAP algebra

class SapError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// p_j = |h_j| / sum_k |h_k|. Throws SapError if every activation is zero.
Tensor sap_probabilities(const Tensor& activations);
/// q_j = 1 - (1 - p_j)^samples.
double sap_keep_probability(double p, std::size_t samples);
Tensor sap_keep_probabilities(const Tensor& probabilities, std::size_t samples);
/// Draws `samples` indices with replacement from p; drawn units are scaled
/// by 1 / q_j, the rest are zeroed. Returns the multiplier tensor.
Tensor sap_multiplier(const Tensor& activations, std::size_t samples, SeededRng& rng);
/// Reweighting for a fixed kept set (nonzero entries of `kept`): 1 / q_j
/// computed from `activations`, 0 for dropped units and units with p_j = 0.
Tensor sap_reweight(const Tensor& activations, const Tensor& kept, std::size_t samples);
/// Vector-Jacobian product of h -> h * sap_reweight(h, kept, samples),
/// including the dependence of q on h.
Tensor sap_backward(const Tensor& activations, const Tensor& kept, std::size_t samples, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Forward / backward

/// One sampled sub-network. Dropout sites hold a fixed elementwise
/// multiplier. SAP sites fix the kept units; their 1 / q_j weights follow the
/// activations of each pass.
struct SubNetwork {
    struct Site {
        std::size_t layer;
        Tensor multiplier;            // as applied in the recorded pass
        std::size_t sap_samples = 0;  // r_p at SAP sites, 0 elsewhere
        Tensor activation;            // SAP sites: layer output before reweighting
    };
    std::vector<Site> sites;

    const Site* site_for(std::size_t layer) const;
    const Tensor* multiplier_for(std::size_t layer) const;
};

struct ForwardRecord {
    std::vector<Tensor> inputs;  // inputs[i] is the (masked) input of layer i
    Tensor logits;
    Tensor probs;
    std::size_t label = 0;
    SubNetwork subnet;
};

struct Prediction {
    Tensor logits;
    Tensor probs;
    std::size_t label = 0;
};

/// Checks the input against the architecture and the [0, 1] pixel range.
void validate_input(const Architecture& arch, const Tensor& input);

/// Forward pass that keeps every intermediate for a later backward pass.
/// Stochastic modes sample a fresh sub-network from rng.
ForwardRecord forward_record(const ModelParams& params, const Tensor& input,
                             const ForwardMode& mode, SeededRng& rng);
/// Forward pass through a fixed, previously sampled sub-network.
ForwardRecord forward_pinned(const ModelParams& params, const Tensor& input,
                             const SubNetwork& subnet);
Prediction forward(const ModelParams& params, const Tensor& input, const ForwardMode& mode,
                   SeededRng& rng);

/// d(objective)/d(input) given d(objective)/d(logits) for a recorded pass.
Tensor backward_input(const ModelParams& params, const ForwardRecord& record,
                      const Tensor& grad_logits);

struct ParamGradients {
    std::vector<LayerParams> layers;
    Tensor input;
};
ParamGradients backward_params(const ModelParams& params, const ForwardRecord& record,
                               const Tensor& grad_logits);

// ---------------------------------------------------------------------------
// Objectives over logits

struct CrossEntropy {};
/// max(max_{i != t} Z_i - Z_t, -kappa)
struct CwMargin {
    double kappa = 0.0;
};
using Objective = std::variant<CrossEntropy, CwMargin>;

struct ObjectiveValue {
    double value = 0.0;
    Tensor grad_logits;
};
ObjectiveValue evaluate_objective(const Objective& objective, const Tensor& logits,
                                  std::size_t target);

/// Input gradient of the objective through one sampled sub-network.
Tensor input_gradient(const ModelParams& params, const Tensor& input, std::size_t target,
                      const Objective& objective, const ForwardMode& mode, SeededRng& rng);
Tensor input_gradient_pinned(const ModelParams& params, const Tensor& input, std::size_t target,
                             const Objective& objective, const SubNetwork& subnet);

// ---------------------------------------------------------------------------
// Persistence ("DGRD" files)

class ParamsFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kParamsFormatVersion = 1;

std::vector<unsigned char> encode_params(const ModelParams& params);
ModelParams decode_params(const std::vector<unsigned char>& bytes);
ModelParams decode_params(const std::vector<unsigned char>& bytes, const Architecture& expected);

void save_params(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_params(const std::filesystem::path& path);
/// Rejects files whose architecture fingerprint differs from `expected`.
ModelParams load_params(const std::filesystem::path& path, const Architecture& expected);

}  // namespace dgrd
