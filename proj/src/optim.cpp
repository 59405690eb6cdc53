#include "pvp/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pvp/error.hpp"

namespace pvp {

Schedule::Schedule(double base_lr, std::size_t total_epochs) : base_lr_(base_lr), total_epochs_(total_epochs) {
    if (!(base_lr >= 0.0)) throw ParameterError("learning rate must be non-negative");
    if (total_epochs == 0) throw ParameterError("schedule needs at least one epoch");
}

double Schedule::lr(double epoch) const {
    const double e = std::clamp(epoch, 0.0, static_cast<double>(total_epochs_));
    if (e == static_cast<double>(total_epochs_)) return 0.0;
    return base_lr_ * 0.5 * (1.0 + std::cos(std::numbers::pi * e / static_cast<double>(total_epochs_)));
}

void sgd_step(Tensor& param, const Tensor& grad, double lr) {
    if (param.shape() != grad.shape()) {
        throw ContractError("sgd_step: parameter shape " + shape_string(param.shape()) + " vs gradient shape " +
                            shape_string(grad.shape()));
    }
    if (lr == 0.0) return;
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr) {
    if (params.size() != grads.size()) throw ContractError("sgd_step: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != grads[i].shape()) {
            throw ContractError("sgd_step: shape mismatch at parameter " + std::to_string(i));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) sgd_step(params[i], grads[i], lr);
}

GradResult grad(const LossFn& loss, std::span<const Tensor> params) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    const ad::Var out = loss(tape, vars);
    if (out.value().size() != 1) {
        throw ContractError("grad: loss must be scalar, got shape " + shape_string(out.value().shape()));
    }
    tape.backward(out);
    GradResult r;
    r.value = out.value()[0];
    for (const auto& v : vars) r.grads.push_back(tape.grad(v));
    return r;
}

double evaluate(const LossFn& loss, std::span<const Tensor> params) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& p : params) vars.push_back(tape.constant(p));
    const ad::Var out = loss(tape, vars);
    if (out.value().size() != 1) throw ContractError("evaluate: loss must be scalar");
    return out.value()[0];
}

GradCheckReport finite_diff_report(const LossFn& loss, std::span<const Tensor> params, double eps) {
    if (!(eps > 0.0)) throw ParameterError("finite_diff_check: eps must be positive");
    const auto analytic = grad(loss, params);
    std::vector<Tensor> work(params.begin(), params.end());
    GradCheckReport report;
    for (std::size_t p = 0; p < work.size(); ++p) {
        for (std::size_t i = 0; i < work[p].size(); ++i) {
            const double orig = work[p][i];
            work[p][i] = orig + eps;
            const double up = evaluate(loss, work);
            work[p][i] = orig - eps;
            const double down = evaluate(loss, work);
            work[p][i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic.grads[p][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
            const double err = std::abs(a - numeric) / denom;
            ++report.checked;
            if (err > report.max_relative_error) {
                report.max_relative_error = err;
                report.worst_param = p;
                report.worst_element = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

double finite_diff_check(const LossFn& loss, std::span<const Tensor> params, double eps) {
    return finite_diff_report(loss, params, eps).max_relative_error;
}

}  // namespace pvp
