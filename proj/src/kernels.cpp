#include "dgrd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Core>

namespace dgrd::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

// Rows of the im2col matrix handled per task. Fixed so that chunked
// reductions give the same bits regardless of the thread count.
constexpr std::size_t kRowChunk = 64;
// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::size_t kParallelWork = 1u << 15;

struct ConvGeometry {
    std::size_t h, w, c;     // input
    std::size_t kh, kw, k;   // kernels
    std::size_t oh, ow;      // output
    std::size_t patch() const { return kh * kw * c; }
    std::size_t positions() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernels) {
    if (input.size() != 3) throw ShapeError("conv2d", "input rank", 3, input.size());
    if (kernels.size() != 4) throw ShapeError("conv2d", "kernel rank", 4, kernels.size());
    if (kernels[2] != input[2]) throw ShapeError("conv2d", "channels", input[2], kernels[2]);
    if (input[0] < kernels[0]) throw ShapeError("conv2d", "height", kernels[0], input[0]);
    if (input[1] < kernels[1]) throw ShapeError("conv2d", "width", kernels[1], input[1]);
    ConvGeometry g{input[0], input[1], input[2], kernels[0], kernels[1], kernels[3], 0, 0};
    g.oh = g.h - g.kh + 1;
    g.ow = g.w - g.kw + 1;
    return g;
}

void check_bias(const char* op, const Tensor& bias, std::size_t expected) {
    if (bias.size() != expected) throw ShapeError(op, "bias length", expected, bias.size());
}

void check_grad_out(const char* op, const Tensor& grad_out, const Shape& expected) {
    if (grad_out.size() != shape_size(expected)) {
        throw ShapeError(op, "gradient length", shape_size(expected), grad_out.size());
    }
}

// Fills rows [row0, row0 + rows) of the im2col matrix into dst (rows x patch).
void im2col_rows(const ConvGeometry& g, const double* in, std::size_t row0, std::size_t rows,
                 double* dst) {
    const std::size_t span = g.kw * g.c;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t p = row0 + r;
        const std::size_t oy = p / g.ow;
        const std::size_t ox = p % g.ow;
        double* out = dst + r * g.patch();
        for (std::size_t dy = 0; dy < g.kh; ++dy) {
            const double* src = in + ((oy + dy) * g.w + ox) * g.c;
            std::copy(src, src + span, out + dy * span);
        }
    }
}

std::size_t chunk_count(std::size_t rows) {
    return (rows + kRowChunk - 1) / kRowChunk;
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& kernels) {
    const auto g = conv_geometry(input, kernels);
    return {g.oh, g.ow, g.k};
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    const auto g = conv_geometry(input.shape(), kernels.shape());
    check_bias("conv2d", bias, g.k);
    Tensor out({g.oh, g.ow, g.k});

    const std::size_t positions = g.positions();
    const std::size_t chunks = chunk_count(positions);
    const ConstMatrixMap weights(kernels.raw(), g.patch(), g.k);
    const ConstVectorMap b(bias.raw(), g.k);
    const bool parallel = positions * g.patch() * g.k >= kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
    for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
        const std::size_t row0 = chunk * kRowChunk;
        const std::size_t rows = std::min(kRowChunk, positions - row0);
        RowMatrix cols(rows, g.patch());
        im2col_rows(g, input.raw(), row0, rows, cols.data());
        MatrixMap dst(out.raw() + row0 * g.k, rows, g.k);
        dst.noalias() = cols * weights;
        dst.rowwise() += b.transpose();
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          GradScope scope) {
    const auto g = conv_geometry(input.shape(), kernels.shape());
    check_grad_out("conv2d_backward", grad_out, {g.oh, g.ow, g.k});

    const std::size_t positions = g.positions();
    const std::size_t patch = g.patch();
    const std::size_t chunks = chunk_count(positions);
    const bool with_params = scope == GradScope::InputAndParams;
    const ConstMatrixMap weights(kernels.raw(), patch, g.k);
    const ConstMatrixMap dout(grad_out.raw(), positions, g.k);
    const bool parallel = positions * patch * g.k >= kParallelWork;

    RowMatrix dcols(positions, patch);
    std::vector<RowMatrix> partial_dw(with_params ? chunks : 0);

#pragma omp parallel for schedule(static) if (parallel)
    for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
        const std::size_t row0 = chunk * kRowChunk;
        const std::size_t rows = std::min(kRowChunk, positions - row0);
        const auto dout_rows = dout.middleRows(row0, rows);
        dcols.middleRows(row0, rows).noalias() = dout_rows * weights.transpose();
        if (with_params) {
            RowMatrix cols(rows, patch);
            im2col_rows(g, input.raw(), row0, rows, cols.data());
            partial_dw[chunk].noalias() = cols.transpose() * dout_rows;
        }
    }

    ConvGrads grads;
    grads.input = Tensor(input.shape());
    // col2im: scatter patch gradients back onto the input grid.
    double* din = grads.input.raw();
    const std::size_t span = g.kw * g.c;
    for (std::size_t p = 0; p < positions; ++p) {
        const std::size_t oy = p / g.ow;
        const std::size_t ox = p % g.ow;
        const double* src = dcols.data() + p * patch;
        for (std::size_t dy = 0; dy < g.kh; ++dy) {
            double* dst = din + ((oy + dy) * g.w + ox) * g.c;
            const double* row = src + dy * span;
            for (std::size_t i = 0; i < span; ++i) dst[i] += row[i];
        }
    }

    if (with_params) {
        grads.kernels = Tensor(kernels.shape());
        MatrixMap dw(grads.kernels.raw(), patch, g.k);
        for (const auto& part : partial_dw) dw += part;
        grads.bias = Tensor({g.k});
        VectorMap db(grads.bias.raw(), g.k);
        db = dout.colwise().sum().transpose();
    }
    return grads;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (weights.rank() != 2) throw ShapeError("dense", "weight rank", 2, weights.rank());
    const std::size_t m = weights.dim(0);
    const std::size_t n = weights.dim(1);
    if (input.size() != n) throw ShapeError("dense", "input length", n, input.size());
    check_bias("dense", bias, m);

    Tensor out({m});
    const ConstMatrixMap w(weights.raw(), m, n);
    const ConstVectorMap x(input.raw(), n);
    const ConstVectorMap b(bias.raw(), m);
    VectorMap z(out.raw(), m);
    const std::size_t blocks = chunk_count(m);
    const bool parallel = m * n >= kParallelWork;

#pragma omp parallel for schedule(static) if (parallel)
    for (std::size_t blk = 0; blk < blocks; ++blk) {
        const std::size_t r0 = blk * kRowChunk;
        const std::size_t rows = std::min(kRowChunk, m - r0);
        z.segment(r0, rows).noalias() = w.middleRows(r0, rows) * x + b.segment(r0, rows);
    }
    return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                          GradScope scope) {
    if (weights.rank() != 2) throw ShapeError("dense_backward", "weight rank", 2, weights.rank());
    const std::size_t m = weights.dim(0);
    const std::size_t n = weights.dim(1);
    if (input.size() != n) throw ShapeError("dense_backward", "input length", n, input.size());
    check_grad_out("dense_backward", grad_out, {m});

    const ConstMatrixMap w(weights.raw(), m, n);
    const ConstVectorMap gvec(grad_out.raw(), m);
    const ConstVectorMap x(input.raw(), n);
    const bool parallel = m * n >= kParallelWork;

    DenseGrads grads;
    grads.input = Tensor(input.shape());
    VectorMap dx(grads.input.raw(), n);
    const std::size_t col_blocks = chunk_count(n);
#pragma omp parallel for schedule(static) if (parallel)
    for (std::size_t blk = 0; blk < col_blocks; ++blk) {
        const std::size_t c0 = blk * kRowChunk;
        const std::size_t cols = std::min(kRowChunk, n - c0);
        dx.segment(c0, cols).noalias() = w.middleCols(c0, cols).transpose() * gvec;
    }

    if (scope == GradScope::InputAndParams) {
        grads.weights = Tensor(weights.shape());
        MatrixMap dw(grads.weights.raw(), m, n);
        const std::size_t row_blocks = chunk_count(m);
#pragma omp parallel for schedule(static) if (parallel)
        for (std::size_t blk = 0; blk < row_blocks; ++blk) {
            const std::size_t r0 = blk * kRowChunk;
            const std::size_t rows = std::min(kRowChunk, m - r0);
            dw.middleRows(r0, rows).noalias() = gvec.segment(r0, rows) * x.transpose();
        }
        grads.bias = grad_out.reshaped({m});
    }
    return grads;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    const double* in = input.raw();
    double* o = out.raw();
    for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
    require_same_shape("relu_backward", input, grad_out);
    Tensor out(input.shape());
    const double* in = input.raw();
    const double* g = grad_out.raw();
    double* o = out.raw();
    for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] > 0.0 ? g[i] : 0.0;
    return out;
}

namespace {

struct PoolGeometry {
    std::size_t h, w, c, oh, ow;
};

PoolGeometry pool_geometry(const char* op, const Shape& input) {
    if (input.size() != 3) throw ShapeError(op, "input rank", 3, input.size());
    if (input[0] % 2) throw ShapeError(op, "height (must be even)", input[0] + 1, input[0]);
    if (input[1] % 2) throw ShapeError(op, "width (must be even)", input[1] + 1, input[1]);
    return {input[0], input[1], input[2], input[0] / 2, input[1] / 2};
}

// Flat input index of the window maximum; first in row-major scan on ties.
inline std::size_t window_argmax(const PoolGeometry& g, const double* in, std::size_t oy,
                                 std::size_t ox, std::size_t ch) {
    std::size_t best = ((2 * oy) * g.w + 2 * ox) * g.c + ch;
    for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * oy + dy) * g.w + 2 * ox + dx) * g.c + ch;
            if (in[idx] > in[best]) best = idx;
        }
    }
    return best;
}

}  // namespace

Tensor maxpool2(const Tensor& input) {
    const auto g = pool_geometry("maxpool2", input.shape());
    Tensor out({g.oh, g.ow, g.c});
    const double* in = input.raw();
    double* o = out.raw();
#pragma omp parallel for schedule(static) if (input.size() >= kParallelWork)
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
            for (std::size_t ch = 0; ch < g.c; ++ch) {
                o[(oy * g.ow + ox) * g.c + ch] = in[window_argmax(g, in, oy, ox, ch)];
            }
        }
    }
    return out;
}

Tensor maxpool2_backward(const Tensor& input, const Tensor& grad_out) {
    const auto g = pool_geometry("maxpool2_backward", input.shape());
    check_grad_out("maxpool2_backward", grad_out, {g.oh, g.ow, g.c});
    Tensor out(input.shape());
    const double* in = input.raw();
    const double* go = grad_out.raw();
    double* o = out.raw();
    // Windows do not overlap, so rows write disjoint cells.
#pragma omp parallel for schedule(static) if (input.size() >= kParallelWork)
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
            for (std::size_t ch = 0; ch < g.c; ++ch) {
                o[window_argmax(g, in, oy, ox, ch)] += go[(oy * g.ow + ox) * g.c + ch];
            }
        }
    }
    return out;
}

Tensor softmax(const Tensor& logits) {
    if (logits.size() < 2) throw ShapeError("softmax", "class count", 2, logits.size());
    Tensor out(logits.shape());
    const double shift = *std::max_element(logits.data().begin(), logits.data().end());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - shift);
        total += out[i];
    }
    for (double& v : out.data()) v /= total;
    return out;
}

SoftmaxXent softmax_xent(const Tensor& logits, std::size_t target) {
    if (target >= logits.size()) throw ShapeError("softmax_xent", "target index", logits.size(), target);
    SoftmaxXent r;
    r.probs = softmax(logits);
    // log p_t computed from the shifted logits so it stays finite.
    const double shift = *std::max_element(logits.data().begin(), logits.data().end());
    double total = 0.0;
    for (double z : logits.data()) total += std::exp(z - shift);
    r.loss = -(logits[target] - shift - std::log(total));
    r.grad = r.probs;
    r.grad[target] -= 1.0;
    return r;
}

std::size_t argmax(const Tensor& values) {
    if (values.empty()) throw ShapeError("argmax", "element count", 1, 0);
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

Tensor bernoulli_mask(const Shape& shape, double keep_prob, SeededRng& rng) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
        throw std::invalid_argument("bernoulli_mask: keep probability must lie in (0, 1]");
    }
    Tensor mask(shape);
    if (keep_prob == 1.0) {
        mask.fill(1.0);
        return mask;
    }
    for (double& v : mask.data()) v = rng.bernoulli(keep_prob) ? 1.0 : 0.0;
    return mask;
}

Tensor clip01(const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::clamp(input[i], 0.0, 1.0);
    return out;
}

// ---------------------------------------------------------------------------
// Serial reference implementations.

namespace serial {

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    const auto g = conv_geometry(input.shape(), kernels.shape());
    check_bias("conv2d", bias, g.k);
    Tensor out({g.oh, g.ow, g.k});
    for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
            for (std::size_t k = 0; k < g.k; ++k) {
                double acc = bias[k];
                for (std::size_t dy = 0; dy < g.kh; ++dy)
                    for (std::size_t dx = 0; dx < g.kw; ++dx)
                        for (std::size_t c = 0; c < g.c; ++c)
                            acc += input[((oy + dy) * g.w + ox + dx) * g.c + c] *
                                   kernels[((dy * g.kw + dx) * g.c + c) * g.k + k];
                out[(oy * g.ow + ox) * g.k + k] = acc;
            }
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                          GradScope scope) {
    const auto g = conv_geometry(input.shape(), kernels.shape());
    check_grad_out("conv2d_backward", grad_out, {g.oh, g.ow, g.k});
    const bool with_params = scope == GradScope::InputAndParams;
    ConvGrads grads;
    grads.input = Tensor(input.shape());
    if (with_params) {
        grads.kernels = Tensor(kernels.shape());
        grads.bias = Tensor({g.k});
    }
    for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
            for (std::size_t k = 0; k < g.k; ++k) {
                const double go = grad_out[(oy * g.ow + ox) * g.k + k];
                if (with_params) grads.bias[k] += go;
                for (std::size_t dy = 0; dy < g.kh; ++dy)
                    for (std::size_t dx = 0; dx < g.kw; ++dx)
                        for (std::size_t c = 0; c < g.c; ++c) {
                            const std::size_t in_idx = ((oy + dy) * g.w + ox + dx) * g.c + c;
                            const std::size_t k_idx = ((dy * g.kw + dx) * g.c + c) * g.k + k;
                            grads.input[in_idx] += go * kernels[k_idx];
                            if (with_params) grads.kernels[k_idx] += go * input[in_idx];
                        }
            }
    return grads;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (weights.rank() != 2) throw ShapeError("dense", "weight rank", 2, weights.rank());
    const std::size_t m = weights.dim(0);
    const std::size_t n = weights.dim(1);
    if (input.size() != n) throw ShapeError("dense", "input length", n, input.size());
    check_bias("dense", bias, m);
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        double acc = bias[i];
        for (std::size_t j = 0; j < n; ++j) acc += weights[i * n + j] * input[j];
        out[i] = acc;
    }
    return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                          GradScope scope) {
    if (weights.rank() != 2) throw ShapeError("dense_backward", "weight rank", 2, weights.rank());
    const std::size_t m = weights.dim(0);
    const std::size_t n = weights.dim(1);
    if (input.size() != n) throw ShapeError("dense_backward", "input length", n, input.size());
    check_grad_out("dense_backward", grad_out, {m});
    DenseGrads grads;
    grads.input = Tensor(input.shape());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) grads.input[j] += weights[i * n + j] * grad_out[i];
    if (scope == GradScope::InputAndParams) {
        grads.weights = Tensor(weights.shape());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) grads.weights[i * n + j] = grad_out[i] * input[j];
        grads.bias = grad_out.reshaped({m});
    }
    return grads;
}

Tensor maxpool2(const Tensor& input) {
    const auto g = pool_geometry("maxpool2", input.shape());
    Tensor out({g.oh, g.ow, g.c});
    for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
            for (std::size_t ch = 0; ch < g.c; ++ch) {
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx)
                        best = std::max(best, input[((2 * oy + dy) * g.w + 2 * ox + dx) * g.c + ch]);
                out[(oy * g.ow + ox) * g.c + ch] = best;
            }
    return out;
}

Tensor maxpool2_backward(const Tensor& input, const Tensor& grad_out) {
    const auto g = pool_geometry("maxpool2_backward", input.shape());
    check_grad_out("maxpool2_backward", grad_out, {g.oh, g.ow, g.c});
    Tensor out(input.shape());
    for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox)
            for (std::size_t ch = 0; ch < g.c; ++ch) {
                std::size_t best_idx = 0;
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = ((2 * oy + dy) * g.w + 2 * ox + dx) * g.c + ch;
                        if (input[idx] > best) {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                out[best_idx] += grad_out[(oy * g.ow + ox) * g.c + ch];
            }
    return out;
}

}  // namespace serial

}  // namespace dgrd::kernels
