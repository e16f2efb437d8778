#pragma once

#include <span>
#include <string>
#include <vector>

namespace brio {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major tensor of 64-bit floats. A rank-0 shape is a scalar.
class Tensor {
public:
    Tensor() = default;
    /// Zero-filled.
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    /// Like the value constructor but rejects NaN and infinities.
    static Tensor from_external(Shape shape, std::vector<double> values);
    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor filled(Shape shape, double v);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return values_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    const double* data() const { return values_.data(); }
    double* data() { return values_.data(); }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    /// Value of a one-element tensor.
    double item() const;
    double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

    bool all_finite() const;
    /// Same values under a new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    bool operator==(const Tensor& o) const = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

// Raw kernels shared by the tape ops and the inference path.
namespace kernels {

/// C (+)= op(A) * op(B) with op(A) m x k and op(B) k x n, row-major storage.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

}  // namespace kernels

}  // namespace brio
