#include "dgrd/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dgrd/kernels.hpp"
#include "dgrd/training.hpp"

namespace dgrd {

namespace {

constexpr double kTanhShrink = 0.999999;

AttackResult finish(const Tensor& x, Tensor adversarial, std::size_t target, bool success,
                    std::size_t iterations, std::uint64_t seed) {
    AttackResult r;
    r.distortion = measure_distortion(x, adversarial);
    r.adversarial = std::move(adversarial);
    r.target = target;
    r.success = success;
    r.iterations = iterations;
    r.seed = seed;
    return r;
}

void check_target(const ModelParams& params, std::size_t target) {
    const std::size_t classes = params.arch.num_classes();
    if (target >= classes) throw std::invalid_argument("attack target " + std::to_string(target) + " outside " +
                                                       std::to_string(classes) + " classes");
}

// max_{i != t} Z_i - Z_t
double margin(const Tensor& logits, std::size_t target) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (i != target) best = std::max(best, logits[i]);
    }
    return best - logits[target];
}

}  // namespace

// ---------------------------------------------------------------------------
// Settings

void AttackSpec::validate() const {
    if (grad_samples < 1) throw std::invalid_argument("grad_samples must be at least 1");
    if (const auto* f = std::get_if<Fgsm>(&kind)) {
        if (!(f->epsilon > 0.0)) throw std::invalid_argument("FGSM epsilon must be positive");
    }
    if (const auto* j = std::get_if<Jsma>(&kind)) {
        if (!(j->theta > 0.0)) throw std::invalid_argument("JSMA theta must be positive");
        if (!(j->gamma > 0.0 && j->gamma <= 1.0)) throw std::invalid_argument("JSMA gamma must lie in (0, 1]");
    }
    if (const auto* c = std::get_if<CwL2>(&kind)) {
        if (!(c->kappa >= 0.0)) throw std::invalid_argument("C&W kappa must be non-negative");
        if (c->binary_search_steps < 1 || c->max_iterations < 1) {
            throw std::invalid_argument("C&W needs at least one search step and one iteration");
        }
        if (!(c->learning_rate > 0.0)) throw std::invalid_argument("C&W learning rate must be positive");
        if (!(c->c_min > 0.0 && c->c_min <= c->c_max)) throw std::invalid_argument("C&W c range must be positive and ordered");
        if (!(c->c_init >= c->c_min && c->c_init <= c->c_max)) throw std::invalid_argument("C&W c_init outside c range");
    }
}

std::string attack_name(const AttackKind& kind) {
    if (std::holds_alternative<Fgsm>(kind)) return "fgsm";
    if (std::holds_alternative<Jsma>(kind)) return "jsma";
    return "cw-l2";
}

void validate_policy(const SuccessPolicy& policy) {
    if (const auto* m = std::get_if<MajorityOf>(&policy)) {
        if (m->m < 1 || m->m % 2 == 0) throw std::invalid_argument("MajorityOf needs an odd pass count");
    }
}

std::string policy_label(const SuccessPolicy& policy) {
    if (const auto* m = std::get_if<MajorityOf>(&policy)) return "majority-of-" + std::to_string(m->m);
    return "single-pass";
}

// ---------------------------------------------------------------------------
// Norms

double distortion_norm(const Tensor& x, const Tensor& adversarial, Norm p) {
    if (x.size() != adversarial.size()) throw ShapeError("distortion_norm", "length", x.size(), adversarial.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = std::abs(adversarial[i] - x[i]);
        switch (p) {
            case Norm::L0: acc += d != 0.0 ? 1.0 : 0.0; break;
            case Norm::L1: acc += d; break;
            case Norm::L2: acc += d * d; break;
            case Norm::Linf: acc = std::max(acc, d); break;
        }
    }
    return p == Norm::L2 ? std::sqrt(acc) : acc;
}

Distortion measure_distortion(const Tensor& x, const Tensor& adversarial) {
    return {distortion_norm(x, adversarial, Norm::L0), distortion_norm(x, adversarial, Norm::L1),
            distortion_norm(x, adversarial, Norm::L2), distortion_norm(x, adversarial, Norm::Linf)};
}

// ---------------------------------------------------------------------------
// Building blocks

Tensor expected_input_gradient(const ModelParams& params, const Tensor& x, std::size_t target,
                               const Objective& objective, const ForwardMode& mode, std::size_t k,
                               SeededRng& rng) {
    if (k < 1) throw std::invalid_argument("expected_input_gradient: k must be at least 1");
    if (!is_stochastic(mode)) k = 1;
    Tensor mean = input_gradient(params, x, target, objective, mode, rng);
    for (std::size_t s = 1; s < k; ++s) add_scaled(mean, 1.0, input_gradient(params, x, target, objective, mode, rng));
    if (k > 1) scale(mean, 1.0 / static_cast<double>(k));
    return mean;
}

bool judge_success(const ModelParams& params, const Tensor& adversarial, std::size_t target,
                   const ForwardMode& mode, const SuccessPolicy& policy, SeededRng& rng) {
    validate_policy(policy);
    std::size_t passes = 1;
    if (const auto* m = std::get_if<MajorityOf>(&policy)) passes = m->m;
    if (!is_stochastic(mode)) passes = 1;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < passes; ++i) {
        if (forward(params, adversarial, mode, rng).label == target) ++hits;
    }
    return 2 * hits > passes;
}

Tensor logit_jacobian(const ModelParams& params, const ForwardRecord& record) {
    const std::size_t classes = record.logits.size();
    const std::size_t n = record.inputs.front().size();
    Tensor jac({classes, n});
    for (std::size_t j = 0; j < classes; ++j) {
        Tensor onehot(record.logits.shape());
        onehot[j] = 1.0;
        const Tensor row = backward_input(params, record, onehot);
        std::copy(row.raw(), row.raw() + n, jac.raw() + j * n);
    }
    return jac;
}

PixelPair saliency_pair(const Tensor& jacobian, std::size_t target, const std::vector<std::size_t>& domain) {
    if (domain.size() < 2) throw std::invalid_argument("saliency_pair: need at least two candidate pixels");
    const std::size_t classes = jacobian.dim(0);
    const std::size_t n = jacobian.dim(1);
    if (target >= classes) throw ShapeError("saliency_pair", "target index", classes, target);
    std::vector<double> alpha(domain.size()), beta(domain.size());
    for (std::size_t d = 0; d < domain.size(); ++d) {
        const std::size_t px = domain[d];
        if (px >= n) throw ShapeError("saliency_pair", "pixel index", n, px);
        double others = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            if (j != target) others += jacobian[j * n + px];
        }
        alpha[d] = jacobian[target * n + px];
        beta[d] = others;
    }
    PixelPair best{domain[0], domain[1], false};
    double best_score = 0.0;
    for (std::size_t a = 0; a < domain.size(); ++a) {
        for (std::size_t b = a + 1; b < domain.size(); ++b) {
            const double al = alpha[a] + alpha[b];
            const double be = beta[a] + beta[b];
            if (!(al > 0.0 && be < 0.0)) continue;
            const double score = al * -be;
            if (!best.scored || score > best_score) {
                best = {domain[a], domain[b], true};
                best_score = score;
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// FGSM

AttackResult fgsm(const ModelParams& params, const Tensor& x, std::size_t target, const Fgsm& cfg,
                  const ForwardMode& mode, SeededRng& rng, const AttackOptions& opt) {
    check_target(params, target);
    if (!(cfg.epsilon >= 0.0)) throw std::invalid_argument("FGSM epsilon must be non-negative");
    const std::uint64_t seed = rng.seed();
    const Tensor g = expected_input_gradient(params, x, target, CrossEntropy{}, mode, opt.grad_samples, rng);
    Tensor adv = x;
    for (std::size_t i = 0; i < adv.size(); ++i) {
        const double s = (g[i] > 0.0) - (g[i] < 0.0);
        adv[i] = std::clamp(x[i] - cfg.epsilon * s, 0.0, 1.0);
    }
    SeededRng judge = rng.child("judge");
    const bool ok = judge_success(params, adv, target, mode, opt.policy, judge);
    return finish(x, std::move(adv), target, ok, 1, seed);
}

// ---------------------------------------------------------------------------
// JSMA

AttackResult jsma(const ModelParams& params, const Tensor& x, std::size_t target, const Jsma& cfg,
                  const ForwardMode& mode, SeededRng& rng, const AttackOptions& opt) {
    check_target(params, target);
    AttackSpec{cfg, opt.grad_samples}.validate();
    const std::uint64_t seed = rng.seed();
    const std::size_t n = x.size();
    const auto budget = static_cast<std::size_t>(std::floor(cfg.gamma * static_cast<double>(n)));
    const std::size_t max_pairs = budget / 2;
    const std::size_t k = is_stochastic(mode) ? opt.grad_samples : 1;

    Tensor adv = x;
    std::vector<std::size_t> domain;
    for (std::size_t i = 0; i < n; ++i) {
        if (adv[i] < 1.0) domain.push_back(i);
    }

    std::size_t iterations = 0;
    while (true) {
        auto rec = forward_record(params, adv, mode, rng);
        if (rec.label == target) break;
        if (iterations >= max_pairs || domain.size() < 2) break;
        Tensor jac = logit_jacobian(params, rec);
        for (std::size_t s = 1; s < k; ++s) add_scaled(jac, 1.0, logit_jacobian(params, forward_record(params, adv, mode, rng)));
        if (k > 1) scale(jac, 1.0 / static_cast<double>(k));

        const PixelPair pair = saliency_pair(jac, target, domain);
        adv[pair.p] = std::min(1.0, adv[pair.p] + cfg.theta);
        adv[pair.q] = std::min(1.0, adv[pair.q] + cfg.theta);
        std::erase(domain, pair.p);
        std::erase(domain, pair.q);
        ++iterations;
    }
    SeededRng judge = rng.child("judge");
    const bool ok = judge_success(params, adv, target, mode, opt.policy, judge);
    return finish(x, std::move(adv), target, ok, iterations, seed);
}

// ---------------------------------------------------------------------------
// C&W L2

AttackResult cw_l2(const ModelParams& params, const Tensor& x, std::size_t target, const CwL2& cfg,
                   const ForwardMode& mode, SeededRng& rng, const AttackOptions& opt) {
    check_target(params, target);
    AttackSpec{cfg, opt.grad_samples}.validate();
    validate_input(params.arch, x);
    const std::uint64_t seed = rng.seed();
    const std::size_t n = x.size();
    const std::size_t k = is_stochastic(mode) ? opt.grad_samples : 1;
    const Objective objective = CwMargin{cfg.kappa};

    Tensor w0(x.shape());
    for (std::size_t i = 0; i < n; ++i) w0[i] = std::atanh((2.0 * x[i] - 1.0) * kTanhShrink);

    double lower = 0.0;
    double upper = std::numeric_limits<double>::infinity();
    double c = cfg.c_init;
    double best_l2 = std::numeric_limits<double>::infinity();
    double best_f = std::numeric_limits<double>::infinity();
    std::optional<Tensor> best_adv;
    Tensor lowest_f_adv = x;
    double c_best = c;
    std::size_t total_iterations = 0;
    const std::size_t check_every = std::max<std::size_t>(1, cfg.max_iterations / 10);

    for (std::size_t step = 0; step < cfg.binary_search_steps; ++step) {
        Tensor w = w0;
        Tensor grad_w(x.shape());
        std::vector<Tensor*> wp{&w};
        std::vector<const Tensor*> gp{&grad_w};
        AdamState adam = AdamState::for_tensors(std::vector<const Tensor*>{&w});
        bool step_success = false;
        double previous = std::numeric_limits<double>::infinity();

        for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
            Tensor xp(x.shape());
            for (std::size_t i = 0; i < n; ++i) xp[i] = std::clamp((std::tanh(w[i]) + 1.0) * 0.5, 0.0, 1.0);

            double f_mean = 0.0;
            Tensor grad_x(x.shape());
            bool perceived = false;
            for (std::size_t s = 0; s < k; ++s) {
                const auto rec = forward_record(params, xp, mode, rng);
                const auto obj = evaluate_objective(objective, rec.logits, target);
                if (s == 0) perceived = rec.label == target && margin(rec.logits, target) <= -cfg.kappa;
                f_mean += obj.value;
                add_scaled(grad_x, 1.0, backward_input(params, rec, obj.grad_logits).reshaped(x.shape()));
            }
            f_mean /= static_cast<double>(k);
            scale(grad_x, c / static_cast<double>(k));

            double l2sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = xp[i] - x[i];
                l2sq += d * d;
                grad_x[i] += 2.0 * d;
            }
            const double loss = l2sq + c * f_mean;
            if (opt.observer) opt.observer(step, it, c, loss);

            if (perceived && l2sq < best_l2) {
                best_l2 = l2sq;
                best_adv = xp;
                c_best = c;
            }
            step_success = step_success || perceived;
            if (f_mean < best_f) {
                best_f = f_mean;
                if (!best_adv) lowest_f_adv = xp;
            }

            if (cfg.abort_early && it > 0 && it % check_every == 0) {
                if (loss > previous * 0.9999) break;
                previous = loss;
            }

            for (std::size_t i = 0; i < n; ++i) {
                const double t = std::tanh(w[i]);
                grad_w[i] = grad_x[i] * 0.5 * (1.0 - t * t);
            }
            adam_step(adam, wp, gp, cfg.learning_rate);
            ++total_iterations;
        }

        if (step_success) {
            upper = std::min(upper, c);
            c = 0.5 * (lower + upper);
        } else {
            lower = std::max(lower, c);
            c = std::isinf(upper) ? std::min(c * 2.0, cfg.c_max) : 0.5 * (lower + upper);
        }
        c = std::clamp(c, cfg.c_min, cfg.c_max);
    }

    bool ok = false;
    Tensor adv = best_adv ? *best_adv : lowest_f_adv;
    if (best_adv) {
        SeededRng judge = rng.child("judge");
        ok = judge_success(params, adv, target, mode, opt.policy, judge);
    }
    AttackResult r = finish(x, std::move(adv), target, ok, total_iterations, seed);
    r.c_final = best_adv ? c_best : c;
    r.best_objective = best_f;
    return r;
}

AttackResult run_attack(const ModelParams& params, const Tensor& x, std::size_t target, const AttackSpec& spec,
                        const ForwardMode& mode, const SuccessPolicy& policy, SeededRng& rng) {
    spec.validate();
    const AttackOptions opt{spec.grad_samples, policy, {}};
    return std::visit(
        [&](const auto& cfg) -> AttackResult {
            using T = std::decay_t<decltype(cfg)>;
            if constexpr (std::is_same_v<T, Fgsm>) return fgsm(params, x, target, cfg, mode, rng, opt);
            else if constexpr (std::is_same_v<T, Jsma>) return jsma(params, x, target, cfg, mode, rng, opt);
            else return cw_l2(params, x, target, cfg, mode, rng, opt);
        },
        spec.kind);
}

// ---------------------------------------------------------------------------
// Campaigns

CampaignError::CampaignError(std::size_t image_id, std::size_t target, const std::string& what)
    : std::runtime_error("attack on image " + std::to_string(image_id) + ", target " + std::to_string(target) +
                         " failed: " + what),
      image_id_(image_id),
      target_(target) {}

CampaignSummary summarize(const std::vector<PairResult>& pairs) {
    CampaignSummary s;
    double l0 = 0.0, l2 = 0.0, linf = 0.0;
    for (const auto& p : pairs) {
        if (p.skipped) {
            ++s.skipped;
            continue;
        }
        ++s.pairs;
        if (!p.result.success) continue;
        ++s.successes;
        l0 += p.result.distortion.l0;
        l2 += p.result.distortion.l2;
        linf += p.result.distortion.linf;
    }
    if (s.pairs > 0) s.asr = static_cast<double>(s.successes) / static_cast<double>(s.pairs);
    if (s.successes > 0) {
        const double k = static_cast<double>(s.successes);
        s.mean_l0 = l0 / k;
        s.mean_l2 = l2 / k;
        s.mean_linf = linf / k;
    }
    return s;
}

std::vector<std::size_t> select_images(const ModelParams& params, const Dataset& data, std::size_t count,
                                       std::uint64_t seed, std::vector<std::size_t>* skipped) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SeededRng perm = SeededRng(seed).child("images");
    shuffle(order, perm);

    std::vector<std::size_t> chosen;
    SeededRng unused(0);
    for (std::size_t idx : order) {
        if (chosen.size() >= count) break;
        if (forward(params, data.images[idx], Deterministic{}, unused).label == data.labels[idx]) {
            chosen.push_back(idx);
        } else if (skipped) {
            skipped->push_back(idx);
        }
    }
    return chosen;
}

CampaignResult run_campaign(const ModelParams& params, const Dataset& data, const AttackSpec& spec,
                            const ForwardMode& mode, const CampaignConfig& cfg) {
    spec.validate();
    validate_mode(mode);
    validate_policy(cfg.policy);
    CampaignResult out;
    const auto images = select_images(params, data, cfg.images, cfg.seed, &out.skipped_images);
    const std::size_t classes = params.arch.num_classes();

    struct Job {
        std::size_t image;
        std::size_t target;
    };
    std::vector<Job> jobs;
    for (std::size_t idx : images) {
        for (std::size_t t = 0; t < classes; ++t) {
            if (t != data.labels[idx]) jobs.push_back({idx, t});
        }
    }
    out.pairs.resize(jobs.size());
    std::vector<std::string> errors(jobs.size());
    const SeededRng root = SeededRng(cfg.seed).child("attack");

#pragma omp parallel for schedule(dynamic)
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        auto& pr = out.pairs[j];
        pr.image_id = jobs[j].image;
        pr.true_label = data.labels[jobs[j].image];
        pr.target = jobs[j].target;
        SeededRng pair_rng = root.child(jobs[j].image).child(jobs[j].target);
        try {
            pr.result = run_attack(params, data.images[jobs[j].image], jobs[j].target, spec, mode, cfg.policy,
                                   pair_rng);
        } catch (const SapError& e) {
            pr.skipped = true;
            pr.skip_reason = e.what();
            pr.result.target = jobs[j].target;
            pr.result.seed = pair_rng.seed();
        } catch (const std::exception& e) {
            errors[j] = e.what();
        }
    }
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (!errors[j].empty()) throw CampaignError(jobs[j].image, jobs[j].target, errors[j]);
    }
    out.summary = summarize(out.pairs);
    return out;
}

}  // namespace dgrd
