#pragma once

#include <cstddef>

#include "dgrd/rng.hpp"
#include "dgrd/tensor.hpp"

// Forward and backward passes for the fixed layer set.
//
// Layouts: images and feature maps are H x W x C, convolution kernels are
// kh x kw x C x K (one 3-D filter per output channel), dense weights are
// m x n acting on the flattened input. Convolutions use stride 1 and no
// padding.
//
// dgrd::kernels holds the OpenMP-parallel implementations used everywhere.
// dgrd::kernels::serial holds straightforward loop implementations kept as
// the reference for tests and the benchmark.
namespace dgrd::kernels {

enum class GradScope { InputOnly, InputAndParams };

struct ConvGrads {
    Tensor input;
    Tensor kernels;  // empty for GradScope::InputOnly
    Tensor bias;     // empty for GradScope::InputOnly
};

struct DenseGrads {
    Tensor input;    // same shape as the forward input
    Tensor weights;  // empty for GradScope::InputOnly
    Tensor bias;
};

struct SoftmaxXent {
    Tensor probs;
    double loss = 0.0;
    Tensor grad;  // d loss / d logits = probs - onehot(target)
};

Shape conv2d_output_shape(const Shape& input, const Shape& kernels);

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          GradScope scope);

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                          GradScope scope);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

Tensor maxpool2(const Tensor& input);
/// Routes each output gradient to the first maximal cell of its window in
/// row-major scan order.
Tensor maxpool2_backward(const Tensor& input, const Tensor& grad_out);

Tensor softmax(const Tensor& logits);
SoftmaxXent softmax_xent(const Tensor& logits, std::size_t target);

/// Index of the largest element; lowest index wins ties.
std::size_t argmax(const Tensor& values);

/// Independent Bernoulli(keep_prob) draws in {0, 1}. Throws
/// std::invalid_argument unless 0 < keep_prob <= 1.
Tensor bernoulli_mask(const Shape& shape, double keep_prob, SeededRng& rng);

Tensor clip01(const Tensor& input);

namespace serial {

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          GradScope scope);
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                          GradScope scope);
Tensor maxpool2(const Tensor& input);
Tensor maxpool2_backward(const Tensor& input, const Tensor& grad_out);

}  // namespace serial

}  // namespace dgrd::kernels
