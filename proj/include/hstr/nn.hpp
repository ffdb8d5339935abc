#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hstr/ops.hpp"

namespace hstr {

struct NamedParameter {
  std::string name;
  DiffArray value;
};

/// Ordered registry of learnable arrays under hierarchical dotted names.
class ParameterSet {
 public:
  DiffArray add(std::string name, DiffArray value);
  const std::vector<NamedParameter>& items() const { return items_; }
  std::vector<NamedParameter>& items() { return items_; }
  const DiffArray* find(const std::string& name) const;
  size_t size() const { return items_.size(); }
  int64_t element_count() const;
  void zero_grad();

 private:
  std::vector<NamedParameter> items_;
};

/// Deterministic generator used for weight init and data augmentation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive
  bool bernoulli(double p) { return uniform() < p; }
  uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with a stream index (splitmix64 finalizer).
uint64_t derive_seed(uint64_t seed, uint64_t stream);

/// Convolution followed by an optional per-channel PReLU.
struct ConvLayer {
  ConvParams conv;
  DiffArray slope;  // undefined when the layer has no activation

  DiffArray operator()(const DiffArray& x) const;
};

struct ConvSpec {
  int64_t in = 0;
  int64_t out = 0;
  int kernel = 3;
  int stride = 1;
  bool activation = true;
  bool zero_init = false;
};

/// Registers `<name>.weight`, `<name>.bias` and, with activation,
/// `<name>.slope`. Weights are Kaiming-uniform over fan-in, bias zero,
/// slope 0.25. Padding keeps "same" geometry for stride 1.
ConvLayer make_conv(ParameterSet& params, const std::string& name, const ConvSpec& spec, Rng& rng);

inline constexpr float kPreluInit = 0.25f;

}  // namespace hstr
