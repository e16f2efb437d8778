#include "brio/tensor.hpp"

#include <cmath>
#include <numeric>

#include "brio/common.hpp"

namespace brio {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_numel(shape_)) {
        throw Error("tensor shape " + shape_str(shape_) + " does not match " +
                    std::to_string(values_.size()) + " values");
    }
}

Tensor Tensor::from_external(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape), std::move(values));
    if (!t.all_finite()) {
        throw Error("non-finite value in external tensor data");
    }
    return t;
}

Tensor Tensor::filled(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), v);
    return t;
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw Error("item() on tensor of shape " + shape_str(shape_));
    }
    return values_[0];
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), values_);
}

namespace kernels {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
    if (!accumulate) {
        std::fill(c, c + m * n, 0.0);
    }
    if (!trans_a && !trans_b) {
        // a: m x k, b: k x n
        for (std::size_t i = 0; i < m; ++i) {
            double* ci = c + i * n;
            const double* ai = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = ai[p];
                const double* bp = b + p * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    } else if (!trans_a && trans_b) {
        // a: m x k, b: n x k
        for (std::size_t i = 0; i < m; ++i) {
            const double* ai = a + i * k;
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* bj = b + j * k;
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
                ci[j] += s;
            }
        }
    } else if (trans_a && !trans_b) {
        // a: k x m, b: k x n
        for (std::size_t p = 0; p < k; ++p) {
            const double* ap = a + p * m;
            const double* bp = b + p * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double av = ap[i];
                double* ci = c + i * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    } else {
        // a: k x m, b: n x k
        for (std::size_t i = 0; i < m; ++i) {
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
                ci[j] += s;
            }
        }
    }
}

}  // namespace kernels

}  // namespace brio
