#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "brio/tape.hpp"

namespace brio {

/// Builds a scalar on `tape` from leaves bound to the parameters, in order.
using ScalarFunction = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct ParamGradCheck {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<ParamGradCheck> params;
    double max_rel_error = 0.0;
    bool pass = true;
};

struct GradCheckOptions {
    double eps = 1e-5;
    double tol = 1e-4;
    /// 0 checks every element; otherwise this many evenly spaced elements per tensor.
    std::size_t max_elements_per_param = 0;
};

/// Compares reverse-mode gradients of f with central differences
/// (f(θ+eps) − f(θ−eps)) / (2 eps), element by element. The relative error
/// uses max(|analytic|, |numeric|, 1e-8) as denominator. Parameters are
/// perturbed in place and restored.
GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor>& params,
                           const std::vector<std::string>& names, const GradCheckOptions& opts = {});

}  // namespace brio
