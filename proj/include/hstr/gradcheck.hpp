#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "hstr/tensor.hpp"

namespace hstr {

struct GradCheckOptions {
  double eps = 1e-3;
  double rel_tol = 1e-3;
  /// Discrepancies at or below this magnitude count as exact.
  double abs_floor = 1e-5;
  int probes = 20;
  uint64_t seed = 7;
};

struct GradCheckResult {
  std::string name;
  int probes = 0;
  int failures = 0;
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool passed() const { return probes > 0 && failures == 0; }
};

template <typename T>
using BasicGradFn = std::function<BasicDiffArray<T>(const std::vector<BasicDiffArray<T>>&)>;

/// Central finite-difference check of fn's gradient with respect to every
/// input. The scalar checked is a fixed random projection of fn's output.
/// Probes are spread across all inputs; each perturbs one element by +-eps.
///
/// Run it in double: with float storage the rounding of each output (about
/// 6e-8 relative) divided by the step swamps small gradient components.
template <typename T>
GradCheckResult check_gradients(const std::string& name, const std::type_identity_t<BasicGradFn<T>>& fn,
                                std::vector<BasicDiffArray<T>> inputs, const GradCheckOptions& options = {});

/// Checks every differentiable primitive on randomized shapes no larger than
/// 2x4x8x8, plus a composite chain of five or more primitives. Instantiated
/// for float and double; the kernels are the same templates in both.
template <typename T = double>
std::vector<GradCheckResult> run_primitive_gradchecks(const GradCheckOptions& options = {});

}  // namespace hstr
