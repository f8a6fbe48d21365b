#include "dgrd/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dgrd/kernels.hpp"

namespace dgrd {

namespace {

constexpr std::size_t kKernelExtent = 3;

char layer_code(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return 'C';
        case LayerKind::MaxPool: return 'P';
        case LayerKind::Dense: return 'D';
        case LayerKind::Relu: return 'R';
        case LayerKind::Softmax: return 'S';
    }
    return '?';
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture

std::vector<Shape> Architecture::output_shapes() const {
    if (input_shape.size() != 3) throw ShapeError("architecture", "input rank", 3, input_shape.size());
    if (layers.size() < 2) throw ArchitectureError("architecture needs at least a dense and a softmax layer");
    if (layers.back().kind != LayerKind::Softmax) throw ArchitectureError("last layer must be softmax");
    if (layers[layers.size() - 2].kind != LayerKind::Dense) {
        throw ArchitectureError("softmax must follow the dense logits layer");
    }
    if (dropout_layer >= layers.size() || layers[dropout_layer].kind != LayerKind::Dense) {
        throw ArchitectureError("dropout layer must index a dense layer");
    }
    if (dropout_layer + 1 >= layers.size() || layers[dropout_layer + 1].kind != LayerKind::Relu) {
        throw ArchitectureError("dropout layer must be followed by a ReLU");
    }

    std::vector<Shape> shapes;
    shapes.reserve(layers.size());
    Shape cur = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& layer = layers[i];
        const std::string where = "layer " + std::to_string(i);
        switch (layer.kind) {
            case LayerKind::Conv:
                if (layer.units == 0) throw ArchitectureError(where + ": conv needs filters");
                if (cur.size() != 3) throw ShapeError(where + " conv", "input rank", 3, cur.size());
                if (cur[0] < kKernelExtent) throw ShapeError(where + " conv", "height", kKernelExtent, cur[0]);
                if (cur[1] < kKernelExtent) throw ShapeError(where + " conv", "width", kKernelExtent, cur[1]);
                cur = {cur[0] - kKernelExtent + 1, cur[1] - kKernelExtent + 1, layer.units};
                break;
            case LayerKind::MaxPool:
                if (cur.size() != 3) throw ShapeError(where + " maxpool", "input rank", 3, cur.size());
                if (cur[0] % 2) throw ShapeError(where + " maxpool", "height (must be even)", cur[0] + 1, cur[0]);
                if (cur[1] % 2) throw ShapeError(where + " maxpool", "width (must be even)", cur[1] + 1, cur[1]);
                cur = {cur[0] / 2, cur[1] / 2, cur[2]};
                break;
            case LayerKind::Dense:
                if (layer.units == 0) throw ArchitectureError(where + ": dense needs units");
                cur = {layer.units};
                break;
            case LayerKind::Relu:
                break;
            case LayerKind::Softmax:
                if (i + 1 != layers.size()) throw ArchitectureError(where + ": softmax must be last");
                if (cur.size() != 1 || cur[0] < 2) throw ShapeError(where + " softmax", "class count", 2, shape_size(cur));
                break;
        }
        shapes.push_back(cur);
    }
    return shapes;
}

std::size_t Architecture::num_classes() const {
    return output_shapes().back()[0];
}

std::size_t Architecture::dropout_site() const {
    validate();
    return dropout_layer + 1;
}

std::vector<std::size_t> Architecture::hidden_activation_sites() const {
    validate();
    std::vector<std::size_t> sites;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::Relu) sites.push_back(i);
    }
    return sites;
}

std::size_t Architecture::parameter_count() const {
    return ModelParams{*this, zero_params(*this)}.parameter_count();
}

std::string Architecture::descriptor() const {
    std::ostringstream os;
    os << name << ';';
    for (std::size_t i = 0; i < input_shape.size(); ++i) os << (i ? "x" : "") << input_shape[i];
    os << ';';
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (i) os << ',';
        os << layer_code(layers[i].kind);
        if (layers[i].has_params()) os << layers[i].units;
    }
    os << ";drop=" << dropout_layer;
    return os.str();
}

Architecture Architecture::from_descriptor(const std::string& text) {
    auto fail = [&](const std::string& why) {
        return ArchitectureError("bad architecture descriptor '" + text + "': " + why);
    };
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ';');) parts.push_back(part);
    if (parts.size() != 4) throw fail("expected 4 fields");

    Architecture arch;
    arch.name = parts[0];
    std::stringstream dims(parts[1]);
    for (std::string d; std::getline(dims, d, 'x');) {
        try {
            arch.input_shape.push_back(std::stoul(d));
        } catch (const std::exception&) {
            throw fail("bad input extent");
        }
    }
    std::stringstream toks(parts[2]);
    for (std::string tok; std::getline(toks, tok, ',');) {
        if (tok.empty()) throw fail("empty layer token");
        std::size_t units = 0;
        if (tok.size() > 1) {
            try {
                units = std::stoul(tok.substr(1));
            } catch (const std::exception&) {
                throw fail("bad layer width");
            }
        }
        switch (tok[0]) {
            case 'C': arch.layers.push_back(LayerSpec::conv(units)); break;
            case 'P': arch.layers.push_back(LayerSpec::maxpool()); break;
            case 'D': arch.layers.push_back(LayerSpec::dense(units)); break;
            case 'R': arch.layers.push_back(LayerSpec::relu()); break;
            case 'S': arch.layers.push_back(LayerSpec::softmax()); break;
            default: throw fail("unknown layer code");
        }
    }
    if (parts[3].rfind("drop=", 0) != 0) throw fail("missing drop=");
    try {
        arch.dropout_layer = std::stoul(parts[3].substr(5));
    } catch (const std::exception&) {
        throw fail("bad dropout index");
    }
    arch.validate();
    return arch;
}

std::uint64_t Architecture::fingerprint() const {
    // The name is presentation only; the structure decides compatibility.
    const std::string d = descriptor();
    return fnv1a64(std::string_view(d).substr(d.find(';')));
}

namespace {

Architecture table_one(std::string name, Shape input, std::size_t conv_a, std::size_t conv_b,
                       std::size_t fc) {
    Architecture a;
    a.name = std::move(name);
    a.input_shape = std::move(input);
    a.layers = {LayerSpec::conv(conv_a), LayerSpec::relu(),    LayerSpec::conv(conv_a),
                LayerSpec::relu(),       LayerSpec::maxpool(), LayerSpec::conv(conv_b),
                LayerSpec::relu(),       LayerSpec::conv(conv_b), LayerSpec::relu(),
                LayerSpec::maxpool(),    LayerSpec::dense(fc), LayerSpec::relu(),
                LayerSpec::dense(fc),    LayerSpec::relu(),    LayerSpec::dense(10),
                LayerSpec::softmax()};
    a.dropout_layer = 10;  // "Fully connected 1"
    a.validate();
    return a;
}

}  // namespace

Architecture mnist_architecture() {
    return table_one("mnist", {28, 28, 1}, 32, 64, 200);
}

Architecture cifar10_architecture() {
    return table_one("cifar10", {32, 32, 3}, 64, 128, 256);
}

Architecture tiny_architecture() {
    Architecture a;
    a.name = "tiny";
    a.input_shape = {32, 32, 3};
    a.layers = {LayerSpec::conv(8),  LayerSpec::relu(),    LayerSpec::conv(8),
                LayerSpec::relu(),   LayerSpec::maxpool(), LayerSpec::conv(16),
                LayerSpec::relu(),   LayerSpec::maxpool(), LayerSpec::dense(64),
                LayerSpec::relu(),   LayerSpec::dense(10), LayerSpec::softmax()};
    a.dropout_layer = 8;
    a.validate();
    return a;
}

Architecture architecture_by_name(const std::string& name) {
    if (name == "mnist") return mnist_architecture();
    if (name == "cifar10") return cifar10_architecture();
    if (name == "tiny") return tiny_architecture();
    throw ArchitectureError("unknown architecture '" + name + "' (expected mnist, cifar10 or tiny)");
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
}

std::vector<Tensor*> ModelParams::tensors() {
    std::vector<Tensor*> out;
    for (auto& layer : layers) {
        if (layer.weights.empty()) continue;
        out.push_back(&layer.weights);
        out.push_back(&layer.bias);
    }
    return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& layer : layers) {
        if (layer.weights.empty()) continue;
        out.push_back(&layer.weights);
        out.push_back(&layer.bias);
    }
    return out;
}

std::vector<LayerParams> zero_params(const Architecture& arch) {
    const auto shapes = arch.output_shapes();
    std::vector<LayerParams> layers(arch.layers.size());
    Shape in = arch.input_shape;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& spec = arch.layers[i];
        if (spec.kind == LayerKind::Conv) {
            layers[i].weights = Tensor({kKernelExtent, kKernelExtent, in[2], spec.units});
            layers[i].bias = Tensor({spec.units});
        } else if (spec.kind == LayerKind::Dense) {
            layers[i].weights = Tensor({spec.units, shape_size(in)});
            layers[i].bias = Tensor({spec.units});
        }
        in = shapes[i];
    }
    return layers;
}

ModelParams init_params(const Architecture& arch, SeededRng& rng) {
    ModelParams params{arch, zero_params(arch)};
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        auto& w = params.layers[i].weights;
        if (w.empty()) continue;
        const std::size_t fan_in = w.size() / arch.layers[i].units;
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : w.data()) v = stddev * rng.normal();
    }
    return params;
}

// ---------------------------------------------------------------------------
// Modes

void validate_mode(const ForwardMode& mode) {
    auto check_rate = [](double r) {
        if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
    };
    if (const auto* d = std::get_if<TrainDropout>(&mode)) check_rate(d->rate);
    if (const auto* d = std::get_if<TestDropout>(&mode)) check_rate(d->rate);
    if (const auto* s = std::get_if<Sap>(&mode)) {
        if (s->plan.samples && *s->plan.samples == 0) throw std::invalid_argument("SAP needs at least one sample");
    }
}

bool is_stochastic(const ForwardMode& mode) {
    if (std::holds_alternative<Deterministic>(mode)) return false;
    if (const auto* d = std::get_if<TrainDropout>(&mode)) return d->rate > 0.0;
    if (const auto* d = std::get_if<TestDropout>(&mode)) return d->rate > 0.0;
    return true;
}

std::string mode_label(const ForwardMode& mode) {
    std::ostringstream os;
    if (std::holds_alternative<Deterministic>(mode)) os << "deterministic";
    if (const auto* d = std::get_if<TrainDropout>(&mode)) os << "train-dropout(" << d->rate << ")";
    if (const auto* d = std::get_if<TestDropout>(&mode)) os << "test-dropout(" << d->rate << ")";
    if (const auto* s = std::get_if<Sap>(&mode)) {
        os << "sap(";
        if (s->plan.samples) os << *s->plan.samples; else os << "units";
        os << (s->plan.scope == SapScope::AllHidden ? ",all" : ",dropout-site") << ")";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// SAP

Tensor sap_probabilities(const Tensor& activations) {
    double total = 0.0;
    for (double v : activations.data()) total += std::abs(v);
    if (!(total > 0.0)) throw SapError("SAP: activation vector is all zero, sampling distribution undefined");
    Tensor p(activations.shape());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::abs(activations[i]) / total;
    return p;
}

double sap_keep_probability(double p, std::size_t samples) {
    if (p >= 1.0) return 1.0;
    // 1 - (1 - p)^r, evaluated without cancellation for small p.
    return -std::expm1(static_cast<double>(samples) * std::log1p(-p));
}

Tensor sap_keep_probabilities(const Tensor& probabilities, std::size_t samples) {
    Tensor q(probabilities.shape());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = sap_keep_probability(probabilities[i], samples);
    return q;
}

Tensor sap_multiplier(const Tensor& activations, std::size_t samples, SeededRng& rng) {
    const Tensor p = sap_probabilities(activations);
    std::vector<double> cdf(p.size());
    double running = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        running += p[i];
        cdf[i] = running;
    }
    std::vector<char> kept(p.size(), 0);
    for (std::size_t s = 0; s < samples; ++s) {
        const double u = rng.uniform() * running;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        auto idx = static_cast<std::size_t>(it - cdf.begin());
        if (idx >= p.size()) idx = p.size() - 1;
        // Skip zero-probability cells that share a cdf value with a neighbour.
        while (p[idx] == 0.0 && idx > 0) --idx;
        kept[idx] = 1;
    }
    Tensor m(activations.shape());
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (kept[i]) m[i] = 1.0 / sap_keep_probability(p[i], samples);
    }
    return m;
}

Tensor sap_reweight(const Tensor& activations, const Tensor& kept, std::size_t samples) {
    require_same_shape("sap kept set", activations, kept);
    const Tensor p = sap_probabilities(activations);
    Tensor m(activations.shape());
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (kept[i] != 0.0 && p[i] > 0.0) m[i] = 1.0 / sap_keep_probability(p[i], samples);
    }
    return m;
}

// out_j = k_j h_j / q_j(h), q_j = 1 - (1 - p_j)^r, p_j = |h_j| / S.
// dh_k = k_k g_k (q_k - p_k dq_k) / q_k^2 + sign(h_k) / S^2 * sum_j a_j |h_j|
// with dq_j = r (1 - p_j)^(r-1) and a_j = k_j g_j h_j dq_j / q_j^2.
Tensor sap_backward(const Tensor& activations, const Tensor& kept, std::size_t samples, const Tensor& grad_out) {
    require_same_shape("sap kept set", activations, kept);
    require_same_shape("sap gradient", activations, grad_out);
    double total = 0.0;
    for (double v : activations.data()) total += std::abs(v);
    if (!(total > 0.0)) throw SapError("SAP: activation vector is all zero, sampling distribution undefined");
    const double r = static_cast<double>(samples);
    Tensor dh(activations.shape());
    double shared = 0.0;
    for (std::size_t j = 0; j < dh.size(); ++j) {
        const double h = activations[j];
        if (kept[j] == 0.0 || h == 0.0) continue;
        const double p = std::abs(h) / total;
        const double q = sap_keep_probability(p, samples);
        const double dq = p >= 1.0 ? (samples == 1 ? 1.0 : 0.0) : r * std::exp((r - 1.0) * std::log1p(-p));
        const double g = grad_out[j];
        dh[j] = g * (q - p * dq) / (q * q);
        shared += g * h * dq / (q * q) * std::abs(h);
    }
    const double scale_all = shared / (total * total);
    for (std::size_t k = 0; k < dh.size(); ++k) {
        const double h = activations[k];
        if (h != 0.0) dh[k] += (h > 0.0 ? 1.0 : -1.0) * scale_all;
    }
    return dh;
}

// ---------------------------------------------------------------------------
// Forward / backward

const SubNetwork::Site* SubNetwork::site_for(std::size_t layer) const {
    for (const auto& s : sites) {
        if (s.layer == layer) return &s;
    }
    return nullptr;
}

const Tensor* SubNetwork::multiplier_for(std::size_t layer) const {
    const Site* s = site_for(layer);
    return s ? &s->multiplier : nullptr;
}

void validate_input(const Architecture& arch, const Tensor& input) {
    if (input.size() != shape_size(arch.input_shape)) {
        throw ShapeError("forward", "input size", shape_size(arch.input_shape), input.size());
    }
    for (double v : input.data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("forward: input pixel outside [0, 1]");
    }
}

namespace {

Tensor apply_layer(const LayerSpec& spec, const LayerParams& lp, const Tensor& in) {
    switch (spec.kind) {
        case LayerKind::Conv: return kernels::conv2d(in, lp.weights, lp.bias);
        case LayerKind::MaxPool: return kernels::maxpool2(in);
        case LayerKind::Dense: return kernels::dense(in, lp.weights, lp.bias);
        case LayerKind::Relu: return kernels::relu(in);
        case LayerKind::Softmax: break;
    }
    throw ArchitectureError("softmax is not applied as a hidden layer");
}

void multiply_in_place(Tensor& a, const Tensor& m) {
    require_same_shape("mask", a, m);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= m[i];
}

// Builds the per-site multiplier for the requested mode, or returns an empty
// tensor when the layer output stays untouched.
struct MaskPlanner {
    const Architecture& arch;
    const ForwardMode& mode;
    std::size_t dropout_site;
    std::vector<std::size_t> sap_sites;

    MaskPlanner(const Architecture& a, const ForwardMode& m)
        : arch(a), mode(m), dropout_site(a.dropout_site()) {
        if (const auto* s = std::get_if<Sap>(&mode)) {
            sap_sites = s->plan.scope == SapScope::AllHidden ? a.hidden_activation_sites()
                                                             : std::vector<std::size_t>{dropout_site};
        }
    }

    std::optional<SubNetwork::Site> site(std::size_t layer, const Tensor& activation, SeededRng& rng) const {
        double rate = 0.0;
        if (const auto* d = std::get_if<TrainDropout>(&mode)) rate = d->rate;
        if (const auto* d = std::get_if<TestDropout>(&mode)) rate = d->rate;
        if (rate > 0.0 && layer == dropout_site) {
            Tensor m = kernels::bernoulli_mask(activation.shape(), 1.0 - rate, rng);
            scale(m, 1.0 / (1.0 - rate));
            return SubNetwork::Site{layer, std::move(m), 0, {}};
        }
        if (const auto* s = std::get_if<Sap>(&mode)) {
            if (std::find(sap_sites.begin(), sap_sites.end(), layer) != sap_sites.end()) {
                const std::size_t samples = s->plan.samples.value_or(activation.size());
                return SubNetwork::Site{layer, sap_multiplier(activation, samples, rng), samples, activation};
            }
        }
        return std::nullopt;
    }
};

template <class SiteFn>
ForwardRecord run_forward(const ModelParams& params, const Tensor& input, SiteFn&& make_site) {
    const auto& arch = params.arch;
    validate_input(arch, input);
    ForwardRecord rec;
    rec.inputs.reserve(arch.layers.size());
    Tensor a = input.reshaped(arch.input_shape);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& spec = arch.layers[i];
        if (spec.kind == LayerKind::Softmax) {
            rec.probs = kernels::softmax(a);
            rec.label = kernels::argmax(rec.probs);
            rec.logits = std::move(a);
            break;
        }
        rec.inputs.push_back(std::move(a));
        a = apply_layer(spec, params.layers[i], rec.inputs.back());
        if (auto site = make_site(i, a)) {
            multiply_in_place(a, site->multiplier);
            rec.subnet.sites.push_back(std::move(*site));
        }
    }
    return rec;
}

template <class Visit>
Tensor run_backward(const ModelParams& params, const ForwardRecord& record, const Tensor& grad_logits,
                    Visit&& visit_params) {
    const auto& arch = params.arch;
    if (grad_logits.size() != record.logits.size()) {
        throw ShapeError("backward", "logit gradient length", record.logits.size(), grad_logits.size());
    }
    Tensor g = grad_logits.reshaped(record.logits.shape());
    for (std::size_t idx = record.inputs.size(); idx-- > 0;) {
        if (const auto* site = record.subnet.site_for(idx)) {
            if (site->sap_samples > 0) g = sap_backward(site->activation, site->multiplier, site->sap_samples, g);
            else multiply_in_place(g, site->multiplier);
        }
        const auto& in = record.inputs[idx];
        const auto& lp = params.layers[idx];
        switch (arch.layers[idx].kind) {
            case LayerKind::Conv: {
                auto grads = visit_params.wants_params()
                                 ? kernels::conv2d_backward(in, lp.weights, g, kernels::GradScope::InputAndParams)
                                 : kernels::conv2d_backward(in, lp.weights, g, kernels::GradScope::InputOnly);
                visit_params(idx, std::move(grads.kernels), std::move(grads.bias));
                g = std::move(grads.input);
                break;
            }
            case LayerKind::Dense: {
                auto grads = visit_params.wants_params()
                                 ? kernels::dense_backward(in, lp.weights, g, kernels::GradScope::InputAndParams)
                                 : kernels::dense_backward(in, lp.weights, g, kernels::GradScope::InputOnly);
                visit_params(idx, std::move(grads.weights), std::move(grads.bias));
                g = std::move(grads.input);
                break;
            }
            case LayerKind::MaxPool: g = kernels::maxpool2_backward(in, g); break;
            case LayerKind::Relu: g = kernels::relu_backward(in, g); break;
            case LayerKind::Softmax: break;
        }
    }
    return g;
}

struct IgnoreParams {
    bool wants_params() const { return false; }
    void operator()(std::size_t, Tensor&&, Tensor&&) const {}
};

struct CollectParams {
    std::vector<LayerParams>* out;
    bool wants_params() const { return true; }
    void operator()(std::size_t layer, Tensor&& w, Tensor&& b) const {
        (*out)[layer].weights = std::move(w);
        (*out)[layer].bias = std::move(b);
    }
};

}  // namespace

ForwardRecord forward_record(const ModelParams& params, const Tensor& input, const ForwardMode& mode,
                             SeededRng& rng) {
    validate_mode(mode);
    const MaskPlanner planner(params.arch, mode);
    return run_forward(params, input, [&](std::size_t layer, const Tensor& a) { return planner.site(layer, a, rng); });
}

ForwardRecord forward_pinned(const ModelParams& params, const Tensor& input, const SubNetwork& subnet) {
    return run_forward(params, input, [&](std::size_t layer, const Tensor& a) -> std::optional<SubNetwork::Site> {
        const auto* site = subnet.site_for(layer);
        if (!site) return std::nullopt;
        if (site->sap_samples == 0) return *site;
        return SubNetwork::Site{layer, sap_reweight(a, site->multiplier, site->sap_samples), site->sap_samples, a};
    });
}

Prediction forward(const ModelParams& params, const Tensor& input, const ForwardMode& mode, SeededRng& rng) {
    auto rec = forward_record(params, input, mode, rng);
    return {std::move(rec.logits), std::move(rec.probs), rec.label};
}

Tensor backward_input(const ModelParams& params, const ForwardRecord& record, const Tensor& grad_logits) {
    return run_backward(params, record, grad_logits, IgnoreParams{});
}

ParamGradients backward_params(const ModelParams& params, const ForwardRecord& record,
                               const Tensor& grad_logits) {
    ParamGradients out;
    out.layers.resize(params.layers.size());
    out.input = run_backward(params, record, grad_logits, CollectParams{&out.layers});
    return out;
}

ObjectiveValue evaluate_objective(const Objective& objective, const Tensor& logits, std::size_t target) {
    if (target >= logits.size()) throw ShapeError("objective", "target index", logits.size(), target);
    if (std::holds_alternative<CrossEntropy>(objective)) {
        auto sx = kernels::softmax_xent(logits, target);
        return {sx.loss, std::move(sx.grad)};
    }
    const double kappa = std::get<CwMargin>(objective).kappa;
    std::size_t other = target == 0 ? 1 : 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (i != target && logits[i] > logits[other]) other = i;
    }
    const double margin = logits[other] - logits[target];
    ObjectiveValue out{std::max(margin, -kappa), Tensor(logits.shape())};
    if (margin > -kappa) {
        out.grad_logits[other] = 1.0;
        out.grad_logits[target] = -1.0;
    }
    return out;
}

Tensor input_gradient(const ModelParams& params, const Tensor& input, std::size_t target,
                      const Objective& objective, const ForwardMode& mode, SeededRng& rng) {
    const auto rec = forward_record(params, input, mode, rng);
    const auto obj = evaluate_objective(objective, rec.logits, target);
    return backward_input(params, rec, obj.grad_logits).reshaped(input.shape());
}

Tensor input_gradient_pinned(const ModelParams& params, const Tensor& input, std::size_t target,
                             const Objective& objective, const SubNetwork& subnet) {
    const auto rec = forward_pinned(params, input, subnet);
    const auto obj = evaluate_objective(objective, rec.logits, target);
    return backward_input(params, rec, obj.grad_logits).reshaped(input.shape());
}

}  // namespace dgrd
