#include "brio/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "brio/common.hpp"

namespace brio {

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& params) {
    Tape tape(false);
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    return f(tape, vars).value().item();
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor>& params,
                           const std::vector<std::string>& names, const GradCheckOptions& opts) {
    if (!(opts.eps > 0.0)) {
        throw Error("grad_check: eps must be positive");
    }
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& p : params) vars.push_back(tape.parameter(p));
        Var root = f(tape, vars);
        tape.backward(root);
        for (const Var& v : vars) analytic.push_back(tape.grad(v));
    }

    GradCheckReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        ParamGradCheck pc;
        pc.name = p < names.size() ? names[p] : "param" + std::to_string(p);
        Tensor& theta = params[p];
        const std::size_t n = theta.numel();
        const std::size_t checks =
            opts.max_elements_per_param == 0 ? n : std::min(n, opts.max_elements_per_param);
        for (std::size_t c = 0; c < checks; ++c) {
            const std::size_t i = checks == n ? c : (c * n) / checks;
            const double saved = theta[i];
            theta[i] = saved + opts.eps;
            const double up = evaluate(f, params);
            theta[i] = saved - opts.eps;
            const double down = evaluate(f, params);
            theta[i] = saved;
            const double numeric = (up - down) / (2.0 * opts.eps);
            const double a = analytic[p][i];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
            pc.max_rel_error = std::max(pc.max_rel_error, rel);
            pc.max_abs_error = std::max(pc.max_abs_error, abs_err);
            ++pc.checked;
        }
        pc.pass = pc.max_rel_error <= opts.tol;
        report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
        report.pass = report.pass && pc.pass;
        report.params.push_back(std::move(pc));
    }
    return report;
}

}  // namespace brio
