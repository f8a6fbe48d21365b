#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include "dgrd/kernels.hpp"
#include "dgrd/training.hpp"

namespace dgrd::oracle {

Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    std::vector<std::size_t> all(x.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return central_difference_at(f, x, all, h);
}

Tensor central_difference_at(const std::function<double(const Tensor&)>& f, const Tensor& x,
                             const std::vector<std::size_t>& coords, double h) {
    Tensor g(x.shape());
    Tensor probe = x;
    for (std::size_t i : coords) {
        const double keep = probe[i];
        probe[i] = keep + h;
        const double up = f(probe);
        probe[i] = keep - h;
        const double down = f(probe);
        probe[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
    if (a.size() != b.size()) throw std::invalid_argument("relative_error: size mismatch");
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

Tensor uniform_tensor(const Shape& shape, SeededRng& rng, double lo, double hi) {
    Tensor t(shape);
    for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

Tensor away_from_zero(const Shape& shape, SeededRng& rng, double gap) {
    Tensor t(shape);
    for (auto& v : t.data()) {
        const double mag = gap + (1.0 - gap) * rng.uniform();
        v = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

Tensor distinct_values(const Shape& shape, SeededRng& rng, double gap) {
    Tensor t(shape);
    std::vector<double> values(t.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = gap * static_cast<double>(i) - 0.5;
    shuffle(values, rng);
    std::copy(values.begin(), values.end(), t.data().begin());
    return t;
}

Architecture small_architecture() {
    Architecture a;
    a.name = "small";
    a.input_shape = {8, 8, 1};
    a.layers = {LayerSpec::conv(3),   LayerSpec::relu(), LayerSpec::maxpool(), LayerSpec::dense(12),
                LayerSpec::relu(),    LayerSpec::dense(4), LayerSpec::softmax()};
    a.dropout_layer = 3;
    a.validate();
    return a;
}

Architecture mlp_architecture(std::size_t features, std::size_t hidden, std::size_t classes) {
    Architecture a;
    a.name = "mlp";
    a.input_shape = {1, features, 1};
    a.layers = {LayerSpec::dense(hidden), LayerSpec::relu(), LayerSpec::dense(classes), LayerSpec::softmax()};
    a.dropout_layer = 0;
    a.validate();
    return a;
}

Dataset quadrant_set(std::size_t n, std::uint64_t seed) {
    SeededRng rng(seed);
    Dataset d;
    d.split = "quadrants";
    d.image_shape = {8, 8, 1};
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::size_t>(rng.below(4));
        Tensor img = uniform_tensor({8, 8, 1}, rng, 0.0, 0.5);
        const std::size_t y0 = (label / 2) * 4, x0 = (label % 2) * 4;
        for (std::size_t y = y0; y < y0 + 4; ++y) {
            for (std::size_t x = x0; x < x0 + 4; ++x) img[y * 8 + x] += 0.5;
        }
        d.images.push_back(std::move(img));
        d.labels.push_back(label);
    }
    return d;
}

const ModelParams& trained_quadrant_model(double dropout_rate) {
    static std::mutex lock;
    static std::map<double, ModelParams> cache;
    std::lock_guard<std::mutex> guard(lock);
    auto it = cache.find(dropout_rate);
    if (it == cache.end()) {
        SeededRng init(17);
        TrainConfig cfg;
        cfg.epochs = 15;
        cfg.batch_size = 16;
        cfg.learning_rate = 0.01;
        cfg.dropout_rate = dropout_rate;
        cfg.seed = 3;
        auto res = train(init_params(small_architecture(), init), quadrant_set(400, 1), nullptr, cfg);
        it = cache.emplace(dropout_rate, std::move(res.params)).first;
    }
    return it->second;
}

bool clear_of_kinks(const ModelParams& params, const ForwardRecord& record, double gap) {
    const auto& layers = params.arch.layers;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Tensor& in = record.inputs[i];
        if (layers[i].kind == LayerKind::Relu) {
            for (double v : in.data()) {
                if (std::abs(v) < gap) return false;
            }
        }
        if (layers[i].kind == LayerKind::MaxPool) {
            const std::size_t h = in.dim(0), w = in.dim(1), c = in.dim(2);
            for (std::size_t oy = 0; oy < h / 2; ++oy) {
                for (std::size_t ox = 0; ox < w / 2; ++ox) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        double best = -1e300, second = -1e300;
                        for (std::size_t dy = 0; dy < 2; ++dy) {
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                const double v = in[((2 * oy + dy) * w + (2 * ox + dx)) * c + ch];
                                if (v > best) {
                                    second = best;
                                    best = v;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                        }
                        if (best > 0.0 && best - second < gap) return false;
                    }
                }
            }
        }
    }
    return true;
}

namespace {

double projected(const Tensor& y, const Tensor& g) { return dot(y, g); }

std::vector<std::size_t> sample_coords(std::size_t n, std::size_t count, SeededRng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    shuffle(idx, rng);
    idx.resize(std::min(n, count));
    return idx;
}

// Analytic gradient restricted to coords, so it can be compared with a
// partial finite difference.
Tensor restrict_to(const Tensor& full, const std::vector<std::size_t>& coords) {
    Tensor out(full.shape());
    for (std::size_t i : coords) out[i] = full[i];
    return out;
}

ModelParams random_model(const Architecture& arch, SeededRng& rng) {
    ModelParams p = init_params(arch, rng);
    for (auto& layer : p.layers) {
        for (auto& b : layer.bias.data()) b = 0.1 * (rng.uniform() - 0.5);
    }
    return p;
}

// A model, an input and a recorded pass that stays away from kinks.
struct EndToEnd {
    ModelParams params;
    Tensor x;
    ForwardRecord record;
};

EndToEnd draw_end_to_end(const ForwardMode& mode, SeededRng& rng) {
    const Architecture arch = small_architecture();
    for (int attempt = 0; attempt < 200; ++attempt) {
        EndToEnd e{random_model(arch, rng), uniform_tensor(arch.input_shape, rng, 0.05, 0.95), {}};
        SeededRng pass = rng.child(static_cast<std::uint64_t>(attempt));
        try {
            e.record = forward_record(e.params, e.x, mode, pass);
        } catch (const SapError&) {
            continue;
        }
        if (clear_of_kinks(e.params, e.record)) return e;
    }
    throw std::runtime_error("could not draw a kink-free end-to-end instance");
}

double objective_at(const ModelParams& params, const Tensor& x, const SubNetwork& subnet, std::size_t target,
                    const Objective& objective) {
    return evaluate_objective(objective, forward_pinned(params, x, subnet).logits, target).value;
}

}  // namespace

std::vector<OracleCase> gradient_oracle_suite(std::size_t instances, std::uint64_t seed) {
    SeededRng root(seed);
    std::vector<OracleCase> cases;
    auto run = [&](const std::string& name, const std::function<double(SeededRng&)>& one) {
        OracleCase c{name, instances, 0.0};
        SeededRng r = root.child(name);
        for (std::size_t i = 0; i < instances; ++i) {
            SeededRng ri = r.child(i);
            c.max_error = std::max(c.max_error, one(ri));
        }
        cases.push_back(c);
    };

    run("conv2d", [](SeededRng& rng) {
        const Tensor x = uniform_tensor({6, 6, 2}, rng);
        const Tensor k = uniform_tensor({3, 3, 2, 3}, rng);
        const Tensor b = uniform_tensor({3}, rng);
        const Tensor g = uniform_tensor(kernels::conv2d_output_shape(x.shape(), k.shape()), rng);
        const auto an = kernels::conv2d_backward(x, k, g, kernels::GradScope::InputAndParams);
        const double ex = relative_error(
            an.input, central_difference([&](const Tensor& v) { return projected(kernels::conv2d(v, k, b), g); }, x));
        const double ek = relative_error(
            an.kernels, central_difference([&](const Tensor& v) { return projected(kernels::conv2d(x, v, b), g); }, k));
        const double eb = relative_error(
            an.bias, central_difference([&](const Tensor& v) { return projected(kernels::conv2d(x, k, v), g); }, b));
        return std::max({ex, ek, eb});
    });

    run("dense", [](SeededRng& rng) {
        const Tensor x = uniform_tensor({7}, rng);
        const Tensor w = uniform_tensor({5, 7}, rng);
        const Tensor b = uniform_tensor({5}, rng);
        const Tensor g = uniform_tensor({5}, rng);
        const auto an = kernels::dense_backward(x, w, g, kernels::GradScope::InputAndParams);
        const double ex = relative_error(
            an.input, central_difference([&](const Tensor& v) { return projected(kernels::dense(v, w, b), g); }, x));
        const double ew = relative_error(
            an.weights, central_difference([&](const Tensor& v) { return projected(kernels::dense(x, v, b), g); }, w));
        const double eb = relative_error(
            an.bias, central_difference([&](const Tensor& v) { return projected(kernels::dense(x, w, v), g); }, b));
        return std::max({ex, ew, eb});
    });

    run("relu", [](SeededRng& rng) {
        const Tensor x = away_from_zero({4, 4, 3}, rng);
        const Tensor g = uniform_tensor(x.shape(), rng);
        return relative_error(kernels::relu_backward(x, g),
                              central_difference([&](const Tensor& v) { return projected(kernels::relu(v), g); }, x));
    });

    run("maxpool2", [](SeededRng& rng) {
        const Tensor x = distinct_values({6, 6, 2}, rng);
        const Tensor g = uniform_tensor({3, 3, 2}, rng);
        return relative_error(kernels::maxpool2_backward(x, g),
                              central_difference([&](const Tensor& v) { return projected(kernels::maxpool2(v), g); }, x));
    });

    run("sap reweight", [](SeededRng& rng) {
        const Tensor h = uniform_tensor({5, 5, 2}, rng, 0.01, 1.0);
        Tensor kept(h.shape());
        for (double& k : kept.data()) k = rng.bernoulli(0.6) ? 1.0 : 0.0;
        kept[0] = 1.0;
        const auto samples = static_cast<std::size_t>(1 + rng.below(60));
        const Tensor g = uniform_tensor(h.shape(), rng);
        auto f = [&](const Tensor& v) {
            Tensor out = sap_reweight(v, kept, samples);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] *= v[i];
            return projected(out, g);
        };
        return relative_error(sap_backward(h, kept, samples, g), central_difference(f, h));
    });

    run("softmax_xent", [](SeededRng& rng) {
        const Tensor z = uniform_tensor({6}, rng, -3.0, 3.0);
        const auto t = static_cast<std::size_t>(rng.below(6));
        return relative_error(kernels::softmax_xent(z, t).grad,
                              central_difference([&](const Tensor& v) { return kernels::softmax_xent(v, t).loss; }, z));
    });

    auto input_case = [](const ForwardMode& mode, const Objective& objective) {
        return [mode, objective](SeededRng& rng) {
            EndToEnd e = draw_end_to_end(mode, rng);
            // Lowest logit as target keeps the C&W margin active.
            std::size_t target = 0;
            for (std::size_t i = 1; i < e.record.logits.size(); ++i) {
                if (e.record.logits[i] < e.record.logits[target]) target = i;
            }
            const Tensor an = input_gradient_pinned(e.params, e.x, target, objective, e.record.subnet);
            const Tensor fd = central_difference(
                [&](const Tensor& v) { return objective_at(e.params, v, e.record.subnet, target, objective); }, e.x);
            return relative_error(an, fd);
        };
    };
    run("input-gradient deterministic xent", input_case(Deterministic{}, CrossEntropy{}));
    run("input-gradient deterministic cw", input_case(Deterministic{}, CwMargin{}));
    run("input-gradient pinned test-dropout(0.5)", input_case(TestDropout{0.5}, CwMargin{}));
    run("input-gradient pinned sap", input_case(Sap{}, CrossEntropy{}));

    run("parameter gradients pinned train-dropout(0.3)", [](SeededRng& rng) {
        EndToEnd e = draw_end_to_end(TrainDropout{0.3}, rng);
        const auto t = static_cast<std::size_t>(rng.below(e.record.logits.size()));
        const auto obj = evaluate_objective(CrossEntropy{}, e.record.logits, t);
        const auto an = backward_params(e.params, e.record, obj.grad_logits);
        double worst = 0.0;
        for (std::size_t li = 0; li < e.params.layers.size(); ++li) {
            for (int which = 0; which < 2; ++which) {
                Tensor& slot = which == 0 ? e.params.layers[li].weights : e.params.layers[li].bias;
                if (slot.empty()) continue;
                const Tensor& grad = which == 0 ? an.layers[li].weights : an.layers[li].bias;
                const auto coords = sample_coords(slot.size(), 12, rng);
                const Tensor base = slot;
                const Tensor fd = central_difference_at(
                    [&](const Tensor& v) {
                        slot = v;
                        const double val = objective_at(e.params, e.x, e.record.subnet, t, CrossEntropy{});
                        slot = base;
                        return val;
                    },
                    base, coords);
                worst = std::max(worst, relative_error(restrict_to(grad, coords), fd));
            }
        }
        return worst;
    });

    return cases;
}

}  // namespace dgrd::oracle
