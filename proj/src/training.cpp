#include "dgrd/training.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dgrd/kernels.hpp"

namespace dgrd {

namespace {

// Examples accumulated sequentially per reduction buffer.
constexpr std::size_t kExamplesPerChunk = 16;

void check_lists(std::size_t params, std::size_t grads, std::size_t state) {
    if (params != grads || params != state) {
        throw std::invalid_argument("optimizer: parameter, gradient and state lists differ in length");
    }
}

void accumulate(std::vector<LayerParams>& into, const std::vector<LayerParams>& from) {
    for (std::size_t i = 0; i < into.size(); ++i) {
        if (into[i].weights.empty()) continue;
        add_scaled(into[i].weights, 1.0, from[i].weights);
        add_scaled(into[i].bias, 1.0, from[i].bias);
    }
}

std::vector<const Tensor*> grad_tensors(const std::vector<LayerParams>& layers) {
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
        if (l.weights.empty()) continue;
        out.push_back(&l.weights);
        out.push_back(&l.bias);
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

AdamState AdamState::for_tensors(std::span<const Tensor* const> params) {
    AdamState s;
    for (const Tensor* p : params) {
        s.m.emplace_back(p->shape());
        s.v.emplace_back(p->shape());
    }
    return s;
}

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               double lr) {
    check_lists(params.size(), grads.size(), state.m.size());
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        require_same_shape("adam_step", p, g);
        double* m = state.m[i].raw();
        double* v = state.v[i].raw();
        double* pd = p.raw();
        const double* gd = g.raw();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gd[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gd[j] * gd[j];
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            pd[j] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

SgdState SgdState::for_tensors(std::span<const Tensor* const> params, double momentum) {
    SgdState s;
    s.momentum = momentum;
    for (const Tensor* p : params) s.velocity.emplace_back(p->shape());
    return s;
}

void sgd_step(SgdState& state, std::span<Tensor* const> params, std::span<const Tensor* const> grads,
              double lr) {
    check_lists(params.size(), grads.size(), state.velocity.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& vel = state.velocity[i];
        scale(vel, state.momentum);
        add_scaled(vel, -lr, *grads[i]);
        add_scaled(*params[i], 1.0, vel);
    }
}

BatchGradient batch_gradient(const ModelParams& params, const Dataset& data,
                             std::span<const std::size_t> indices, double dropout_rate,
                             const SeededRng& rng) {
    if (indices.empty()) throw std::invalid_argument("batch_gradient: empty batch");
    const ForwardMode mode = TrainDropout{dropout_rate};
    validate_mode(mode);
    const std::size_t chunks = (indices.size() + kExamplesPerChunk - 1) / kExamplesPerChunk;
    std::vector<std::vector<LayerParams>> partial(chunks);
    std::vector<double> chunk_loss(chunks, 0.0);
    std::vector<std::size_t> chunk_correct(chunks, 0);

#pragma omp parallel for schedule(dynamic)
    for (std::size_t c = 0; c < chunks; ++c) {
        partial[c] = zero_params(params.arch);
        const std::size_t end = std::min(indices.size(), (c + 1) * kExamplesPerChunk);
        for (std::size_t k = c * kExamplesPerChunk; k < end; ++k) {
            const std::size_t idx = indices[k];
            SeededRng example_rng = rng.child(idx);
            const auto rec = forward_record(params, data.images[idx], mode, example_rng);
            const auto sx = kernels::softmax_xent(rec.logits, data.labels[idx]);
            const auto grads = backward_params(params, rec, sx.grad);
            accumulate(partial[c], grads.layers);
            chunk_loss[c] += sx.loss;
            if (rec.label == data.labels[idx]) ++chunk_correct[c];
        }
    }

    BatchGradient out;
    out.grads = std::move(partial[0]);
    for (std::size_t c = 1; c < chunks; ++c) accumulate(out.grads, partial[c]);
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (auto& l : out.grads) {
        if (l.weights.empty()) continue;
        scale(l.weights, inv);
        scale(l.bias, inv);
    }
    out.mean_loss = std::accumulate(chunk_loss.begin(), chunk_loss.end(), 0.0) * inv;
    out.correct = std::accumulate(chunk_correct.begin(), chunk_correct.end(), std::size_t{0});
    return out;
}

TrainResult train(ModelParams params, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
    train_set.validate();

    const SeededRng root(cfg.seed);
    const auto param_list = params.tensors();
    AdamState adam;
    SgdState sgd;
    if (cfg.optimizer == OptimizerKind::Adam) {
        adam = AdamState::for_tensors(std::vector<const Tensor*>(param_list.begin(), param_list.end()));
    } else {
        sgd = SgdState::for_tensors(std::vector<const Tensor*>(param_list.begin(), param_list.end()), cfg.momentum);
    }

    std::vector<std::size_t> order(train_set.size());
    TrainResult result;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        SeededRng shuffle_rng = root.child("shuffle").child(epoch);
        shuffle(order, shuffle_rng);
        const SeededRng dropout_rng = root.child("dropout").child(epoch);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            const std::span<const std::size_t> batch(order.data() + start, len);
            auto bg = batch_gradient(params, train_set, batch, cfg.dropout_rate, dropout_rng);
            if (!std::isfinite(bg.mean_loss)) throw std::runtime_error("train: non-finite loss");
            loss_sum += bg.mean_loss * static_cast<double>(len);
            correct += bg.correct;
            const auto grads = grad_tensors(bg.grads);
            if (cfg.optimizer == OptimizerKind::Adam) {
                adam_step(adam, param_list, grads, cfg.learning_rate);
            } else {
                sgd_step(sgd, param_list, grads, cfg.learning_rate);
            }
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(order.size());
        m.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        m.test_acc = test_set ? evaluate_accuracy(params, *test_set, Deterministic{}, 1, root.child("eval"))
                              : std::numeric_limits<double>::quiet_NaN();
        result.history.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    result.params = std::move(params);
    return result;
}

double evaluate_accuracy(const ModelParams& params, const Dataset& data, const ForwardMode& mode,
                         std::size_t passes, const SeededRng& rng) {
    if (passes < 1) throw std::invalid_argument("evaluate_accuracy: need at least one pass");
    validate_mode(mode);
    if (data.empty()) return 0.0;
    if (!is_stochastic(mode)) passes = 1;
    std::vector<std::size_t> hits(data.size(), 0);

#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t i = 0; i < data.size(); ++i) {
        const SeededRng example_rng = rng.child(i);
        for (std::size_t p = 0; p < passes; ++p) {
            SeededRng pass_rng = example_rng.child(p);
            if (forward(params, data.images[i], mode, pass_rng).label == data.labels[i]) ++hits[i];
        }
    }
    const auto total = std::accumulate(hits.begin(), hits.end(), std::size_t{0});
    return static_cast<double>(total) / static_cast<double>(data.size() * passes);
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& history) {
    out << "epoch,train_loss,train_acc,test_acc\n";
    const auto flags = out.flags();
    out << std::setprecision(6) << std::fixed;
    for (const auto& m : history) {
        out << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',';
        if (std::isnan(m.test_acc)) out << "";
        else out << m.test_acc;
        out << '\n';
    }
    out.flags(flags);
}

}  // namespace dgrd
