#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "radnmt/autodiff.hpp"

namespace radnmt {

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Builds a scalar loss on the given tape. Must be deterministic.
using LossFn = std::function<Var(Tape&)>;

/// |a - n| / max(|a|, |n|, 1e-8)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares reverse-mode gradients of `loss` against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps), coordinate by coordinate.
/// Parameter values are restored afterwards; existing gradients are overwritten.
inline GradCheckResult grad_check(const LossFn& loss, std::span<const NamedParam> params, double eps = 1e-5) {
  std::vector<bool> had_grad;
  for (const auto& p : params) {
    had_grad.push_back(p.tensor->requires_grad());
    p.tensor->set_requires_grad(true);
  }
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto evaluate = [&] {
    Tape tape;
    return loss(tape).value()[0];
  };
  GradCheckResult result;
  for (const auto& p : params) {
    auto data = p.tensor->data();
    const auto grad = p.tensor->grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = evaluate();
      data[i] = saved - eps;
      const double down = evaluate();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(grad[i], numeric);
      ++result.coordinates;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        result.worst_param = p.name;
        result.worst_index = i;
        result.worst_analytic = grad[i];
        result.worst_numeric = numeric;
      }
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k)
    if (!had_grad[k]) params[k].tensor->set_requires_grad(false);
  return result;
}

}  // namespace radnmt
