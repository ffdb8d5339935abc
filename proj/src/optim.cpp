#include "hstr/optim.hpp"

#include <cmath>

#include "hstr/parallel.hpp"

namespace hstr {

Adam::Adam(ParameterSet& params, AdamConfig config) : params_(params), config_(config) {
  for (const auto& p : params_.items()) {
    m_.emplace_back(static_cast<size_t>(p.value.numel()), 0.0f);
    v_.emplace_back(static_cast<size_t>(p.value.numel()), 0.0f);
  }
}

void Adam::step() {
  auto& items = params_.items();
  if (items.size() != m_.size()) throw std::logic_error("parameter set changed after optimizer construction");

  // Validate everything first so a bad gradient leaves all state untouched.
  for (auto& p : items) {
    if (!p.value.has_grad()) continue;
    for (float g : p.value.grad())
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + p.name);
  }

  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = config_.lr, eps = config_.eps;

  for (size_t k = 0; k < items.size(); ++k) {
    DiffArray& value = items[k].value;
    float* data = value.data().data();
    float* m = m_[k].data();
    float* v = v_[k].data();
    const float* g = value.has_grad() ? value.grad().data() : nullptr;
    parallel_for(value.numel(), [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) {
        double gi = g ? g[i] : 0.0;
        double mi = b1 * m[i] + (1.0 - b1) * gi;
        double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        data[i] = static_cast<float>(data[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
      }
    }, 4096);
  }
}

}  // namespace hstr
