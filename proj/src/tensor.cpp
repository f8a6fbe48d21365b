#include "dgrd/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace dgrd {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

std::string shape_error_message(const std::string& op, const std::string& axis,
                                std::size_t expected, std::size_t actual) {
    std::ostringstream os;
    os << op << ": " << axis << " mismatch (expected " << expected << ", got " << actual << ")";
    return os.str();
}

void check_extents(const Shape& shape) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == 0) {
            throw ShapeError("tensor", "axis " + std::to_string(i), 1, 0);
        }
    }
}

}  // namespace

ShapeError::ShapeError(std::string op, std::string axis, std::size_t expected, std::size_t actual)
    : std::invalid_argument(shape_error_message(op, axis, expected, actual)),
      op_(std::move(op)),
      axis_(std::move(axis)),
      expected_(expected),
      actual_(actual) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_extents(shape_);
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("tensor", "element count", shape_size(shape_), data_.size());
    }
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("reshape", "element count", data_.size(), shape_size(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank()) throw ShapeError(op, "rank", a.rank(), b.rank());
    for (std::size_t i = 0; i < a.rank(); ++i) {
        if (a.dim(i) != b.dim(i)) throw ShapeError(op, "axis " + std::to_string(i), a.dim(i), b.dim(i));
    }
}

void add_scaled(Tensor& y, double alpha, const Tensor& x) {
    require_same_shape("add_scaled", y, x);
    double* yd = y.raw();
    const double* xd = x.raw();
    for (std::size_t i = 0; i < y.size(); ++i) yd[i] += alpha * xd[i];
}

void scale(Tensor& y, double alpha) {
    for (double& v : y.data()) v *= alpha;
}

Tensor difference(const Tensor& a, const Tensor& b) {
    require_same_shape("difference", a, b);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ShapeError("dot", "element count", a.size(), b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double squared_norm(const Tensor& a) {
    return dot(a, a);
}

}  // namespace dgrd
