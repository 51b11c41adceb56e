#include "unigrf/weighter.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "unigrf/errors.hpp"
#include "unigrf/log.hpp"

namespace unigrf::weighting {

Granularity parse_granularity(std::string_view name) {
  if (name == "step") return Granularity::step;
  if (name == "epoch") return Granularity::epoch;
  throw ConfigError("weighter granularity must be 'step' or 'epoch', got '" + std::string(name) + "'");
}

std::string_view granularity_name(Granularity g) { return g == Granularity::step ? "step" : "epoch"; }

void WeighterConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("weighter: temperature must be > 0");
  if (!(lambda_a > 0.0) || !(lambda_b > 0.0)) throw ConfigError("weighter: lambda_a and lambda_b must be > 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("weighter: ema_decay must lie in [0, 1)");
}

WeighterState::WeighterState(WeighterConfig cfg) : config(cfg) {
  config.validate();
  weights = config.fixed ? Weights{config.lambda_a, config.lambda_b}
                         : compute_weights(rates, config.temperature, config.lambda_a, config.lambda_b);
}

namespace {

double ratio(double current, double previous, const char* stage) {
  if (!(previous > 0.0)) {
    warn(std::string("non-positive smoothed ") + stage + " loss; rate clamped to 1");
    return 1.0;
  }
  return current / previous;
}

}  // namespace

Rates update_rates(double loss_a, double loss_b, WeighterState& state) {
  if (!std::isfinite(loss_a) || !std::isfinite(loss_b))
    throw NumericError("weighter: non-finite stage loss (" + std::to_string(loss_a) + ", " +
                       std::to_string(loss_b) + ")");
  if (state.step == 0) {
    state.smoothed_a = loss_a;
    state.smoothed_b = loss_b;
    state.rates = {1.0, 1.0};
  } else {
    const double beta = state.config.ema_decay;
    const double next_a = beta * state.smoothed_a + (1.0 - beta) * loss_a;
    const double next_b = beta * state.smoothed_b + (1.0 - beta) * loss_b;
    state.rates = {ratio(next_a, state.smoothed_a, "retrieval"), ratio(next_b, state.smoothed_b, "ranking")};
    state.smoothed_a = next_a;
    state.smoothed_b = next_b;
  }
  ++state.step;
  return state.rates;
}

Weights compute_weights(const Rates& rates, double temperature, double lambda_a, double lambda_b) {
  // Only the smaller share is divided out; the larger is its complement, so
  // the two shares sum to exactly 1 and the larger rate gets the larger share.
  const double za = rates.a / temperature;
  const double zb = rates.b / temperature;
  const double e = std::exp(-std::abs(za - zb));
  const double small = e / (1.0 + e);
  const double large = 1.0 - small;
  return za >= zb ? Weights{lambda_a * large, lambda_b * small} : Weights{lambda_a * small, lambda_b * large};
}

Weights advance(double loss_a, double loss_b, WeighterState& state) {
  const auto rates = update_rates(loss_a, loss_b, state);
  state.weights = state.config.fixed
                      ? Weights{state.config.lambda_a, state.config.lambda_b}
                      : compute_weights(rates, state.config.temperature, state.config.lambda_a,
                                        state.config.lambda_b);
  return state.weights;
}

template <typename T>
ad::Tensor<T> combine(double w_a, const ad::Tensor<T>& loss_a, double w_b, const ad::Tensor<T>& loss_b) {
  return ad::add(ad::scale(loss_a, static_cast<T>(w_a)), ad::scale(loss_b, static_cast<T>(w_b)));
}

template ad::Tensor<float> combine(double, const ad::Tensor<float>&, double, const ad::Tensor<float>&);
template ad::Tensor<double> combine(double, const ad::Tensor<double>&, double, const ad::Tensor<double>&);

}  // namespace unigrf::weighting
