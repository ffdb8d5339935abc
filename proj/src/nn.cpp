#include "hstr/nn.hpp"

#include <cmath>

namespace hstr {

DiffArray ParameterSet::add(std::string name, DiffArray value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name " + name);
  value.set_requires_grad(true);
  items_.push_back({std::move(name), std::move(value)});
  return items_.back().value;
}

const DiffArray* ParameterSet::find(const std::string& name) const {
  for (const auto& item : items_)
    if (item.name == name) return &item.value;
  return nullptr;
}

int64_t ParameterSet::element_count() const {
  int64_t total = 0;
  for (const auto& item : items_) total += item.value.numel();
  return total;
}

void ParameterSet::zero_grad() {
  for (auto& item : items_) item.value.zero_grad();
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi <= lo) return lo;
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(engine_() % span);
}

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

DiffArray ConvLayer::operator()(const DiffArray& x) const {
  DiffArray y = conv2d(x, conv);
  return slope.defined() ? prelu(y, slope) : y;
}

ConvLayer make_conv(ParameterSet& params, const std::string& name, const ConvSpec& spec, Rng& rng) {
  ConvLayer layer;
  Shape ws{spec.out, spec.in, spec.kernel, spec.kernel};
  std::vector<float> w(static_cast<size_t>(ws.numel()), 0.0f);
  if (!spec.zero_init) {
    const double fan_in = static_cast<double>(spec.in * spec.kernel * spec.kernel);
    const double gain = std::sqrt(2.0 / (1.0 + kPreluInit * kPreluInit));
    const double bound = gain * std::sqrt(3.0 / fan_in);
    for (float& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
  }
  layer.conv.weight = params.add(name + ".weight", DiffArray::from(ws, std::move(w)));
  layer.conv.bias = params.add(name + ".bias", DiffArray::zeros({1, spec.out, 1, 1}));
  layer.conv.stride = spec.stride;
  layer.conv.padding = spec.kernel / 2;
  if (spec.activation) layer.slope = params.add(name + ".slope", DiffArray::full({1, spec.out, 1, 1}, kPreluInit));
  return layer;
}

}  // namespace hstr
