#include "unigrf/optimizer.hpp"

#include <cmath>
#include <string>

#include "unigrf/errors.hpp"

namespace unigrf::ad {

template <typename T>
Adam<T>::Adam(AdamOptions options) : options_(options) {
  set_learning_rate(options.learning_rate);
}

template <typename T>
void Adam<T>::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw ContractError("Adam: learning rate must be positive");
  options_.learning_rate = lr;
}

template <typename T>
void Adam<T>::step(std::span<Tensor<T>> params) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }
  if (m_.size() != params.size())
    throw ContractError("Adam: parameter list changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (m_[k].size() != params[k].size())
      throw ContractError("Adam: moment buffer not congruent with " + params[k].name());
    for (T g : params[k].grad()) {
      if (!std::isfinite(g))
        throw NumericError("Adam: non-finite gradient in parameter " + params[k].name());
    }
  }

  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const T lr = static_cast<T>(options_.learning_rate);
  const T eps = static_cast<T>(options_.epsilon);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    const auto grad = params[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = grad[i];
      m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1.0 - b1) * g;
      v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1.0 - b2) * g * g;
      const T m_hat = m[i] / static_cast<T>(c1);
      const T v_hat = v[i] / static_cast<T>(c2);
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace unigrf::ad
