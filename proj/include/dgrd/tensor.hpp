#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgrd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised when operands disagree on an extent. Carries the operation and the
/// axis that failed so callers can report it without parsing the message.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(std::string op, std::string axis, std::size_t expected, std::size_t actual);

    const std::string& op() const noexcept { return op_; }
    const std::string& axis() const noexcept { return axis_; }
    std::size_t expected() const noexcept { return expected_; }
    std::size_t actual() const noexcept { return actual_; }

private:
    std::string op_;
    std::string axis_;
    std::size_t expected_;
    std::size_t actual_;
};

/// Allocator with 64-byte alignment so vectorized kernels see the same
/// layout on every run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles tagged with its shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* raw() noexcept { return data_.data(); }
    const double* raw() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Same data viewed under a different shape of equal size.
    Tensor reshaped(Shape shape) const;

    void fill(double value);
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    AlignedBuffer data_;
};

// Elementwise helpers used by the optimizers and attacks.
void add_scaled(Tensor& y, double alpha, const Tensor& x);  // y += alpha * x
void scale(Tensor& y, double alpha);
Tensor difference(const Tensor& a, const Tensor& b);         // a - b
double dot(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& a);

void require_same_shape(const char* op, const Tensor& a, const Tensor& b);

}  // namespace dgrd
