#pragma once

#include <cstdint>
#include <vector>

#include "hstr/nn.hpp"

namespace hstr {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over every array in a ParameterSet. The set must
/// not gain or lose parameters after construction.
class Adam {
 public:
  explicit Adam(ParameterSet& params, AdamConfig config = {});

  /// Applies one bias-corrected update from the current gradients. Any
  /// non-finite gradient aborts the step before a single value changes and
  /// throws NumericalError naming the parameter.
  void step();

  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }
  int64_t step_count() const { return steps_; }

  std::vector<float>& first_moment(size_t i) { return m_[i]; }
  std::vector<float>& second_moment(size_t i) { return v_[i]; }
  const std::vector<float>& first_moment(size_t i) const { return m_[i]; }
  const std::vector<float>& second_moment(size_t i) const { return v_[i]; }
  /// Used when resuming from a checkpoint.
  void set_step_count(int64_t steps) { steps_ = steps; }

  ParameterSet& params() { return params_; }

 private:
  ParameterSet& params_;
  AdamConfig config_;
  int64_t steps_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace hstr
