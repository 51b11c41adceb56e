#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "unigrf/errors.hpp"
#include "unigrf/tensor.hpp"

namespace unigrf::ad {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// with step `eps`, coordinate by coordinate over every tensor in `params`.
/// Relative error is |a - n| / max(1e-8, |a| + |n|). `loss_fn` must rebuild its
/// graph from the current parameter values on every call.
template <typename T>
GradCheckResult finite_difference_check(const std::function<Tensor<T>()>& loss_fn,
                                        std::span<Tensor<T>> params, double eps = 1e-5) {
  if (!(eps > 0.0)) throw ContractError("finite_difference_check: eps must be positive");
  zero_grads(params);
  backward(loss_fn());

  GradCheckResult result;
  for (auto& p : params) {
    auto values = p.mutable_values();
    const auto grad = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      values[i] = static_cast<T>(original + eps);
      const double up = static_cast<double>(loss_fn().item());
      values[i] = static_cast<T>(original - eps);
      const double down = static_cast<double>(loss_fn().item());
      values[i] = original;

      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      if (!std::isfinite(numeric) || !std::isfinite(analytic))
        throw NumericError("finite_difference_check: non-finite value at " + p.name() + "[" +
                           std::to_string(i) + "]");
      const double denom = std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      const double rel = std::abs(analytic - numeric) / denom;
      if (result.worst_parameter.empty() || rel > result.max_relative_error)
        result = {rel, p.name(), i, analytic, numeric};
    }
  }
  return result;
}

}  // namespace unigrf::ad
