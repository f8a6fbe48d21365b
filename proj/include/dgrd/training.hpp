#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "dgrd/dataset.hpp"
#include "dgrd/network.hpp"

namespace dgrd {

enum class OptimizerKind { SgdMomentum, Adam };

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double momentum = 0.9;      // sgd-momentum only
    double dropout_rate = 0.0;  // r, applied at the architecture's dropout site
    std::uint64_t seed = 1;

    void validate() const;
};

/// First and second moments for a list of tensors, with bias correction.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_tensors(std::span<const Tensor* const> params);
};

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               double lr);

struct SgdState {
    std::vector<Tensor> velocity;
    double momentum = 0.9;

    static SgdState for_tensors(std::span<const Tensor* const> params, double momentum);
};

void sgd_step(SgdState& state, std::span<Tensor* const> params, std::span<const Tensor* const> grads,
              double lr);

struct BatchGradient {
    std::vector<LayerParams> grads;  // averaged over the batch
    double mean_loss = 0.0;
    std::size_t correct = 0;
};

/// Averaged cross-entropy gradient over `indices`. Every example draws its
/// own dropout sub-network from rng.child(index); dropped units receive zero
/// gradient through the mask. Examples are reduced in a fixed order so the
/// result does not depend on the thread count.
BatchGradient batch_gradient(const ModelParams& params, const Dataset& data,
                             std::span<const std::size_t> indices, double dropout_rate,
                             const SeededRng& rng);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;  // deterministic; NaN when no test set was given
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch training with per-example dropout sub-networks. Throws
/// std::invalid_argument on an empty dataset or invalid config.
TrainResult train(ModelParams params, const Dataset& train_set, const Dataset* test_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Fraction of (example, pass) pairs classified correctly. Deterministic
/// mode always uses one pass. Pass p of example i samples from
/// rng.child(i).child(p).
double evaluate_accuracy(const ModelParams& params, const Dataset& data, const ForwardMode& mode,
                         std::size_t passes, const SeededRng& rng);

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& history);

}  // namespace dgrd
