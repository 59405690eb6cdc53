#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "pvp/autodiff.hpp"
#include "pvp/tensor.hpp"

namespace pvp {

/// Cosine annealing: lr(e) = base_lr · ½ · (1 + cos(π·e / total_epochs)).
/// `e` may be fractional so the rate can decay within an epoch.
class Schedule {
public:
    Schedule(double base_lr, std::size_t total_epochs);

    double lr(double epoch) const;
    double base_lr() const noexcept { return base_lr_; }
    std::size_t total_epochs() const noexcept { return total_epochs_; }

private:
    double base_lr_;
    std::size_t total_epochs_;
};

/// θ ← θ − lr·g, element-wise. ContractError on any shape mismatch.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr);
void sgd_step(Tensor& param, const Tensor& grad, double lr);

/// A loss built on a tape from parameter handles.
using LossFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

struct GradResult {
    double value = 0.0;
    std::vector<Tensor> grads;
};

/// Evaluates `loss` at `params` and returns one gradient per parameter.
GradResult grad(const LossFn& loss, std::span<const Tensor> params);

/// Forward value only.
double evaluate(const LossFn& loss, std::span<const Tensor> params);

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

/// Compares analytic gradients against central differences for every scalar
/// parameter. Relative error uses max(|analytic|, |numeric|, 1e-12) as denominator.
GradCheckReport finite_diff_report(const LossFn& loss, std::span<const Tensor> params, double eps);
double finite_diff_check(const LossFn& loss, std::span<const Tensor> params, double eps);

}  // namespace pvp
