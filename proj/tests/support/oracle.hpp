#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgrd/dataset.hpp"
#include "dgrd/network.hpp"

// Finite-difference gradient oracles and small fixtures shared by the unit
// tests and the acceptance runner.
namespace dgrd::oracle {

inline constexpr double kStep = 1e-4;

/// Central differences of f at x, one coordinate at a time.
Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = kStep);

/// Central differences restricted to `coords`; other entries stay 0.
Tensor central_difference_at(const std::function<double(const Tensor&)>& f, const Tensor& x,
                             const std::vector<std::size_t>& coords, double h = kStep);

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor).
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

Tensor uniform_tensor(const Shape& shape, SeededRng& rng, double lo = -1.0, double hi = 1.0);
/// Uniform values whose magnitude is at least `gap`.
Tensor away_from_zero(const Shape& shape, SeededRng& rng, double gap = 1e-3);
/// Distinct values spaced at least `gap` apart, shuffled.
Tensor distinct_values(const Shape& shape, SeededRng& rng, double gap = 1e-2);

/// Conv, relu, maxpool, dense chain on 8x8x1 inputs with 4 classes; dropout
/// follows the first dense layer.
Architecture small_architecture();
/// Dense(hidden), ReLU, Dense(classes) on 1 x features x 1 inputs.
Architecture mlp_architecture(std::size_t features, std::size_t hidden, std::size_t classes);

/// True when every ReLU pre-activation and every positive max-pool winner in
/// the recorded pass sits at least `gap` away from its kink.
bool clear_of_kinks(const ModelParams& params, const ForwardRecord& record, double gap = 1e-3);

/// 8x8x1 images of 4 classes: class c brightens quadrant c over uniform
/// noise. Learnable by small_architecture in a few epochs.
Dataset quadrant_set(std::size_t n, std::uint64_t seed);
/// small_architecture trained on quadrant_set(400, 1) with the given
/// dropout rate; cached per rate within the process.
const ModelParams& trained_quadrant_model(double dropout_rate = 0.0);

struct OracleCase {
    std::string name;
    std::size_t instances = 0;
    double max_error = 0.0;
};

/// Every layer primitive plus end-to-end input and parameter gradients,
/// `instances` random instances each.
std::vector<OracleCase> gradient_oracle_suite(std::size_t instances, std::uint64_t seed);

}  // namespace dgrd::oracle
