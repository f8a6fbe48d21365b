#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dgrd/dataset.hpp"
#include "dgrd/network.hpp"

namespace dgrd {

// ---------------------------------------------------------------------------
// Attack settings

struct Fgsm {
    double epsilon = 0.25;
};

struct Jsma {
    double theta = 1.0;   // per-step pixel increase
    double gamma = 0.145; // max fraction of pixels modified
};

struct CwL2 {
    double kappa = 0.0;
    std::size_t binary_search_steps = 10;
    std::size_t max_iterations = 100;
    double learning_rate = 0.1;
    double c_init = 1e-2;
    double c_min = 1e-4;
    double c_max = 1e6;
    bool abort_early = true;
};

using AttackKind = std::variant<Fgsm, Jsma, CwL2>;

struct AttackSpec {
    AttackKind kind = CwL2{};
    std::size_t grad_samples = 1;  // k sub-network gradients averaged per step

    /// Throws std::invalid_argument when a field is out of range.
    void validate() const;
};

std::string attack_name(const AttackKind& kind);

struct SinglePass {};
struct MajorityOf {
    std::size_t m = 1;  // odd
};
using SuccessPolicy = std::variant<SinglePass, MajorityOf>;

void validate_policy(const SuccessPolicy& policy);
std::string policy_label(const SuccessPolicy& policy);

// ---------------------------------------------------------------------------
// Results

enum class Norm { L0, L1, L2, Linf };

/// Throws ShapeError on mismatched sizes.
double distortion_norm(const Tensor& x, const Tensor& adversarial, Norm p);

struct Distortion {
    double l0 = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
};
Distortion measure_distortion(const Tensor& x, const Tensor& adversarial);

struct AttackResult {
    Tensor adversarial;
    std::size_t target = 0;
    bool success = false;
    Distortion distortion;
    std::size_t iterations = 0;
    std::optional<double> c_final;        // C&W only
    std::optional<double> best_objective; // C&W only: lowest margin value seen
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Building blocks

/// Mean of k single-sub-network input gradients. Deterministic mode computes
/// one gradient regardless of k.
Tensor expected_input_gradient(const ModelParams& params, const Tensor& x, std::size_t target,
                               const Objective& objective, const ForwardMode& mode, std::size_t k,
                               SeededRng& rng);

/// SinglePass: one fresh pass must output t. MajorityOf(m): t must win more
/// than half of m fresh passes.
bool judge_success(const ModelParams& params, const Tensor& adversarial, std::size_t target,
                   const ForwardMode& mode, const SuccessPolicy& policy, SeededRng& rng);

/// Rows of d(logit_j)/d(input) for one recorded pass, as a classes x n tensor.
Tensor logit_jacobian(const ModelParams& params, const ForwardRecord& record);

/// Pixel pair chosen by the saliency map: among domain pixels p < q, the pair
/// maximising a * |b| with a = J_t[p] + J_t[q] > 0 and b = sum over j != t of
/// J_j[p] + J_j[q] < 0. Falls back to the first two domain pixels when no
/// pair qualifies. Requires at least two domain pixels.
struct PixelPair {
    std::size_t p = 0;
    std::size_t q = 0;
    bool scored = false;  // false when the fallback pair was used
};
PixelPair saliency_pair(const Tensor& jacobian, std::size_t target, const std::vector<std::size_t>& domain);

// ---------------------------------------------------------------------------
// Attacks

/// Observer for the C&W inner loop: (search step, iteration, c, objective).
using CwObserver = std::function<void(std::size_t, std::size_t, double, double)>;

struct AttackOptions {
    std::size_t grad_samples = 1;
    SuccessPolicy policy = SinglePass{};
    CwObserver observer;
};

AttackResult fgsm(const ModelParams& params, const Tensor& x, std::size_t target, const Fgsm& cfg,
                  const ForwardMode& mode, SeededRng& rng, const AttackOptions& opt = {});

AttackResult jsma(const ModelParams& params, const Tensor& x, std::size_t target, const Jsma& cfg,
                  const ForwardMode& mode, SeededRng& rng, const AttackOptions& opt = {});

AttackResult cw_l2(const ModelParams& params, const Tensor& x, std::size_t target, const CwL2& cfg,
                   const ForwardMode& mode, SeededRng& rng, const AttackOptions& opt = {});

AttackResult run_attack(const ModelParams& params, const Tensor& x, std::size_t target, const AttackSpec& spec,
                        const ForwardMode& mode, const SuccessPolicy& policy, SeededRng& rng);

// ---------------------------------------------------------------------------
// Campaigns over (image, target) pairs

struct CampaignConfig {
    std::size_t images = 100;  // correctly classified images to attack
    std::uint64_t seed = 1;
    SuccessPolicy policy = SinglePass{};
};

struct PairResult {
    std::size_t image_id = 0;  // index into the dataset
    std::size_t true_label = 0;
    std::size_t target = 0;
    bool skipped = false;      // the defender could not evaluate this input (SapError)
    std::string skip_reason;
    AttackResult result;
};

/// Aggregates over attacked (non-skipped) pairs. Distortion means cover
/// successful pairs only; every optional is empty when its denominator is 0.
struct CampaignSummary {
    std::size_t pairs = 0;
    std::size_t skipped = 0;
    std::size_t successes = 0;
    std::optional<double> asr;
    std::optional<double> mean_l0;
    std::optional<double> mean_l2;
    std::optional<double> mean_linf;
};
CampaignSummary summarize(const std::vector<PairResult>& pairs);

struct CampaignResult {
    std::vector<PairResult> pairs;              // image order, then target order
    std::vector<std::size_t> skipped_images;    // misclassified by the deterministic model
    CampaignSummary summary;
};

/// Raised when an attack fails for a reason other than SapError; names the
/// pair so the failure can be reproduced.
class CampaignError : public std::runtime_error {
public:
    CampaignError(std::size_t image_id, std::size_t target, const std::string& what);
    std::size_t image_id() const noexcept { return image_id_; }
    std::size_t target() const noexcept { return target_; }

private:
    std::size_t image_id_;
    std::size_t target_;
};

/// Images are drawn from a seeded permutation of the dataset; those the
/// deterministic model misclassifies are skipped and recorded. Every other
/// class is attacked as a target. Pair (i, t) uses
/// SeededRng(seed).child("attack").child(i).child(t).
CampaignResult run_campaign(const ModelParams& params, const Dataset& data, const AttackSpec& spec,
                            const ForwardMode& mode, const CampaignConfig& cfg);

/// Same seeded image selection as run_campaign.
std::vector<std::size_t> select_images(const ModelParams& params, const Dataset& data, std::size_t count,
                                       std::uint64_t seed, std::vector<std::size_t>* skipped = nullptr);

}  // namespace dgrd
