#pragma once

// Adaptive loss weighting. Each stage's convergence rate is the ratio of its
// current to previous smoothed loss; a softmax over rate/T, scaled per stage,
// turns the rates into loss weights so the slower stage gets more weight.

#include <cstddef>
#include <string_view>
#include <utility>

#include "unigrf/tensor.hpp"

namespace unigrf::weighting {

enum class Granularity { step, epoch };

Granularity parse_granularity(std::string_view name);
std::string_view granularity_name(Granularity g);

struct WeighterConfig {
  double temperature = 1.0;
  double lambda_a = 1.0;  // retrieval scale
  double lambda_b = 1.0;  // ranking scale
  double ema_decay = 0.9;
  Granularity granularity = Granularity::step;
  /// Disables adaptation: weights stay (lambda_a, lambda_b).
  bool fixed = false;
  /// Sets lambda_b to the first-epoch ratio of mean retrieval to mean ranking loss.
  bool auto_scale = false;

  void validate() const;
};

struct Weights {
  double a = 0.5;
  double b = 0.5;
};

struct Rates {
  double a = 1.0;
  double b = 1.0;
};

struct WeighterState {
  WeighterConfig config;
  double smoothed_a = 0.0;
  double smoothed_b = 0.0;
  Rates rates;
  Weights weights;
  std::size_t step = 0;  // number of updates applied

  explicit WeighterState(WeighterConfig cfg = {});
};

/// Advances the EMAs with the current losses and returns the new rates.
/// The first call bootstraps the EMAs to the losses and yields rates of 1.
Rates update_rates(double loss_a, double loss_b, WeighterState& state);

/// lambda-scaled two-way softmax over r/T, computed shift-stably.
Weights compute_weights(const Rates& rates, double temperature, double lambda_a, double lambda_b);

/// update_rates followed by compute_weights (or the fixed weights); stores both in `state`.
Weights advance(double loss_a, double loss_b, WeighterState& state);

/// w_a * L_a + w_b * L_b with the weights held constant.
template <typename T>
ad::Tensor<T> combine(double w_a, const ad::Tensor<T>& loss_a, double w_b, const ad::Tensor<T>& loss_b);

}  // namespace unigrf::weighting
