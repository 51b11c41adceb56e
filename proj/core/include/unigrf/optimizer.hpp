#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "unigrf/tensor.hpp"

namespace unigrf::ad {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected adaptive-moment optimizer. Moment buffers are created on the
/// first step and stay congruent with the parameters they track.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {});

  /// Applies one update to every parameter from its accumulated gradient.
  /// A NaN/Inf anywhere aborts the whole step before any value is written
  /// (NumericError names the parameter).
  void step(std::span<Tensor<T>> params);

  std::int64_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr);

  std::span<const std::vector<T>> first_moments() const { return m_; }
  std::span<const std::vector<T>> second_moments() const { return v_; }

 private:
  AdamOptions options_;
  std::int64_t step_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace unigrf::ad
