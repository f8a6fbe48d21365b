// Serial reference kernels against the OpenMP/Eigen kernels on the shapes of
// the MNIST model.

#include <benchmark/benchmark.h>

#include "dgrd/kernels.hpp"

namespace k = dgrd::kernels;
using dgrd::SeededRng;
using dgrd::Shape;
using dgrd::Tensor;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
    SeededRng rng(seed);
    Tensor t(shape);
    for (double& v : t.data()) v = 2.0 * rng.uniform() - 1.0;
    return t;
}

// Second convolution of the MNIST model: 26x26x32 -> 24x24x32.
struct ConvCase {
    Tensor input = random_tensor({26, 26, 32}, 1);
    Tensor kernels = random_tensor({3, 3, 32, 32}, 2);
    Tensor bias = random_tensor({32}, 3);
    Tensor grad_out = random_tensor({24, 24, 32}, 4);
};

// First dense layer: 1024 -> 200.
struct DenseCase {
    Tensor input = random_tensor({4, 4, 64}, 5);
    Tensor weights = random_tensor({200, 1024}, 6);
    Tensor bias = random_tensor({200}, 7);
    Tensor grad_out = random_tensor({200}, 8);
};

void BM_conv2d_serial(benchmark::State& state) {
    ConvCase c;
    for (auto _ : state) benchmark::DoNotOptimize(k::serial::conv2d(c.input, c.kernels, c.bias));
}
void BM_conv2d_parallel(benchmark::State& state) {
    ConvCase c;
    for (auto _ : state) benchmark::DoNotOptimize(k::conv2d(c.input, c.kernels, c.bias));
}
void BM_conv2d_backward_serial(benchmark::State& state) {
    ConvCase c;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            k::serial::conv2d_backward(c.input, c.kernels, c.grad_out, k::GradScope::InputAndParams));
    }
}
void BM_conv2d_backward_parallel(benchmark::State& state) {
    ConvCase c;
    for (auto _ : state) {
        benchmark::DoNotOptimize(k::conv2d_backward(c.input, c.kernels, c.grad_out, k::GradScope::InputAndParams));
    }
}
void BM_dense_serial(benchmark::State& state) {
    DenseCase c;
    for (auto _ : state) benchmark::DoNotOptimize(k::serial::dense(c.input, c.weights, c.bias));
}
void BM_dense_parallel(benchmark::State& state) {
    DenseCase c;
    for (auto _ : state) benchmark::DoNotOptimize(k::dense(c.input, c.weights, c.bias));
}
void BM_dense_backward_serial(benchmark::State& state) {
    DenseCase c;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            k::serial::dense_backward(c.input, c.weights, c.grad_out, k::GradScope::InputAndParams));
    }
}
void BM_dense_backward_parallel(benchmark::State& state) {
    DenseCase c;
    for (auto _ : state) {
        benchmark::DoNotOptimize(k::dense_backward(c.input, c.weights, c.grad_out, k::GradScope::InputAndParams));
    }
}
void BM_maxpool2_serial(benchmark::State& state) {
    const Tensor x = random_tensor({24, 24, 32}, 9);
    for (auto _ : state) benchmark::DoNotOptimize(k::serial::maxpool2(x));
}
void BM_maxpool2_parallel(benchmark::State& state) {
    const Tensor x = random_tensor({24, 24, 32}, 9);
    for (auto _ : state) benchmark::DoNotOptimize(k::maxpool2(x));
}

}  // namespace

BENCHMARK(BM_conv2d_serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv2d_parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv2d_backward_serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_conv2d_backward_parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_dense_serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_dense_parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_dense_backward_serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_dense_backward_parallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_maxpool2_serial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_maxpool2_parallel)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
