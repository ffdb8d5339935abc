#include "hstr/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "hstr/nn.hpp"
#include "hstr/ops.hpp"

namespace hstr {

namespace {

std::vector<double> projection_for(const Shape& s, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> r(static_cast<size_t>(s.numel()));
  for (double& v : r) v = rng.uniform(-1.0, 1.0);
  return r;
}

}  // namespace

template <typename T>
GradCheckResult check_gradients(const std::string& name, const std::type_identity_t<BasicGradFn<T>>& fn,
                                std::vector<BasicDiffArray<T>> inputs,
                                const GradCheckOptions& options) {
  auto start = std::chrono::steady_clock::now();
  GradCheckResult result;
  result.name = name;

  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  BasicDiffArray<T> y = fn(inputs);
  const std::vector<double> r = projection_for(y.shape(), derive_seed(options.seed, 1));
  std::vector<T> rf(r.begin(), r.end());
  BasicDiffArray<T> loss = sum(mul(y, BasicDiffArray<T>::from(y.shape(), rf)));
  loss.backward();

  std::vector<std::vector<T>> analytic;
  for (auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

  Rng rng(derive_seed(options.seed, 2));
  NoGradGuard no_grad;
  for (int probe = 0; probe < options.probes; ++probe) {
    // Cycle through inputs so each one is probed.
    size_t which = static_cast<size_t>(probe) % inputs.size();
    BasicDiffArray<T>& in = inputs[which];
    int64_t idx = rng.uniform_int(0, in.numel() - 1);
    T& slot = in.data()[static_cast<size_t>(idx)];
    const T saved = slot;

    slot = static_cast<T>(saved + options.eps);
    const double step_up = static_cast<double>(slot) - saved;
    BasicDiffArray<T> y_up = fn(inputs);
    slot = static_cast<T>(saved - options.eps);
    const double step_down = saved - static_cast<double>(slot);
    BasicDiffArray<T> y_down = fn(inputs);
    slot = saved;

    // Outputs untouched by the probe cancel exactly.
    double diff = 0.0;
    auto up = y_up.data();
    auto down = y_down.data();
    for (size_t i = 0; i < up.size(); ++i)
      if (up[i] != down[i]) diff += r[i] * (static_cast<double>(up[i]) - static_cast<double>(down[i]));
    const double numeric = diff / (step_up + step_down);
    const double exact = analytic[which][static_cast<size_t>(idx)];
    const double err = std::abs(numeric - exact);
    const double rel = err / std::max({std::abs(numeric), std::abs(exact), options.abs_floor});
    result.max_rel_error = std::max(result.max_rel_error, rel);
    if (!(err <= options.abs_floor || rel <= options.rel_tol)) ++result.failures;
    ++result.probes;
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

namespace {

template <typename T>
BasicDiffArray<T> random_array(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(static_cast<size_t>(s.numel()));
  for (T& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return BasicDiffArray<T>::from(s, std::move(v));
}

// Values bounded away from zero by `margin` so probes never straddle a kink.
template <typename T>
BasicDiffArray<T> away_from_zero(Shape s, Rng& rng, double margin) {
  std::vector<T> v(static_cast<size_t>(s.numel()));
  for (T& x : v) {
    double mag = rng.uniform(margin, 1.0);
    x = static_cast<T>(rng.bernoulli(0.5) ? mag : -mag);
  }
  return BasicDiffArray<T>::from(s, std::move(v));
}

// Coordinates whose fractional part stays inside [margin, 1 - margin].
double off_integer(Rng& rng, double lo, double hi, double margin) {
  double base = std::floor(rng.uniform(lo, hi));
  return base + rng.uniform(margin, 1.0 - margin);
}

Shape random_shape(Rng& rng, int64_t max_c = 4, int64_t min_hw = 4) {
  return {rng.uniform_int(1, 2), rng.uniform_int(1, max_c), 2 * rng.uniform_int(min_hw / 2, 4),
          2 * rng.uniform_int(min_hw / 2, 4)};
}

}  // namespace

template <typename T>
std::vector<GradCheckResult> run_primitive_gradchecks(const GradCheckOptions& options) {
  std::vector<GradCheckResult> out;
  Rng rng(options.seed);
  const double margin = 0.05;

  {
    // Fixed shape from the conv example plus a randomized 'same' conv.
    BasicDiffArray<T> x = random_array<T>({2, 4, 8, 8}, rng);
    BasicDiffArray<T> w = random_array<T>({6, 4, 3, 3}, rng);
    BasicDiffArray<T> b = random_array<T>({1, 6, 1, 1}, rng);
    out.push_back(check_gradients<T>("conv2d", [](const std::vector<BasicDiffArray<T>>& in) {
      return conv2d(in[0], BasicConvParams<T>{in[1], in[2], 2, 1});
    }, {x, w, b}, options));
    Shape s = random_shape(rng);
    int64_t co = rng.uniform_int(1, 4);
    BasicDiffArray<T> x2 = random_array<T>(s, rng);
    BasicDiffArray<T> w2 = random_array<T>({co, s.c, 3, 3}, rng);
    BasicDiffArray<T> b2 = random_array<T>({1, co, 1, 1}, rng);
    GradCheckResult r = check_gradients<T>("conv2d_same", [](const std::vector<BasicDiffArray<T>>& in) {
      return conv2d(in[0], BasicConvParams<T>{in[1], in[2], 1, 1});
    }, {x2, w2, b2}, options);
    out.back().probes += r.probes;
    out.back().failures += r.failures;
    out.back().max_rel_error = std::max(out.back().max_rel_error, r.max_rel_error);
    out.back().seconds += r.seconds;
  }
  {
    Shape s{rng.uniform_int(1, 2), rng.uniform_int(1, 4), 4, 4};
    int64_t co = rng.uniform_int(1, 4);
    BasicDiffArray<T> x = random_array<T>(s, rng);
    BasicDiffArray<T> w = random_array<T>({s.c, co, 3, 3}, rng);
    BasicDiffArray<T> b = random_array<T>({1, co, 1, 1}, rng);
    out.push_back(check_gradients<T>("conv_transpose2d", [](const std::vector<BasicDiffArray<T>>& in) {
      return conv_transpose2d(in[0], BasicDeconvParams<T>{in[1], in[2], 2, 1, 1});
    }, {x, w, b}, options));
  }
  {
    Shape s = random_shape(rng);
    BasicDiffArray<T> x = random_array<T>(s, rng);
    std::vector<T> g(static_cast<size_t>(s.n * 2 * s.plane()));
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t c = 0; c < 2; ++c)
        for (int64_t i = 0; i < s.plane(); ++i)
          g[static_cast<size_t>((n * 2 + c) * s.plane() + i)] =
              static_cast<T>(off_integer(rng, -1.0, static_cast<double>(c == 0 ? s.w : s.h), margin));
    BasicDiffArray<T> grid = BasicDiffArray<T>::from({s.n, 2, s.h, s.w}, std::move(g));
    out.push_back(check_gradients<T>("bilinear_sample", [](const std::vector<BasicDiffArray<T>>& in) {
      return bilinear_sample(in[0], in[1]);
    }, {x, grid}, options));
  }
  {
    // Small instance from the deformable example: 1x2x6x6 input, 3x3 kernel.
    BasicDiffArray<T> x = random_array<T>({1, 2, 6, 6}, rng);
    BasicDiffArray<T> w = random_array<T>({3, 2, 3, 3}, rng);
    BasicDiffArray<T> b = random_array<T>({1, 3, 1, 1}, rng);
    std::vector<T> o(18 * 36);
    for (T& v : o) v = static_cast<T>(off_integer(rng, -2.0, 2.0, margin));
    BasicDiffArray<T> offsets = BasicDiffArray<T>::from({1, 18, 6, 6}, std::move(o));
    out.push_back(check_gradients<T>("deformable_conv2d", [](const std::vector<BasicDiffArray<T>>& in) {
      return deformable_conv2d(in[0], in[1], BasicConvParams<T>{in[2], in[3], 1, 1});
    }, {x, offsets, w, b}, options));
  }
  {
    Shape s = random_shape(rng);
    BasicDiffArray<T> x = away_from_zero<T>(s, rng, margin);
    BasicDiffArray<T> a = random_array<T>({1, s.c, 1, 1}, rng, 0.0, 0.5);
    out.push_back(check_gradients<T>("prelu", [](const std::vector<BasicDiffArray<T>>& in) { return prelu(in[0], in[1]); },
                                  {x, a}, options));
  }
  {
    BasicDiffArray<T> x = random_array<T>(random_shape(rng), rng, -3.0, 3.0);
    out.push_back(check_gradients<T>("sigmoid", [](const std::vector<BasicDiffArray<T>>& in) { return sigmoid(in[0]); },
                                  {x}, options));
  }
  {
    Shape s = random_shape(rng);
    s.h /= 2;
    s.w /= 2;
    BasicDiffArray<T> x = random_array<T>(s, rng);
    out.push_back(check_gradients<T>("upsample_nearest2x",
                                  [](const std::vector<BasicDiffArray<T>>& in) { return upsample_nearest2x(in[0]); }, {x},
                                  options));
    BasicDiffArray<T> x2 = random_array<T>(s, rng);
    out.push_back(check_gradients<T>("upsample_bilinear2x",
                                  [](const std::vector<BasicDiffArray<T>>& in) { return upsample_bilinear2x(in[0]); }, {x2},
                                  options));
    BasicDiffArray<T> x3 = random_array<T>(random_shape(rng), rng);
    int64_t oh = rng.uniform_int(3, 8), ow = rng.uniform_int(3, 8);
    out.push_back(check_gradients<T>("resize_bilinear", [oh, ow](const std::vector<BasicDiffArray<T>>& in) {
      return resize_bilinear(in[0], oh, ow);
    }, {x3}, options));
  }
  {
    BasicDiffArray<T> x = random_array<T>(random_shape(rng), rng);
    out.push_back(check_gradients<T>("avg_pool2x", [](const std::vector<BasicDiffArray<T>>& in) { return avg_pool2x(in[0]); },
                                  {x}, options));
    BasicDiffArray<T> x2 = random_array<T>(random_shape(rng), rng);
    out.push_back(check_gradients<T>("global_avg_pool",
                                  [](const std::vector<BasicDiffArray<T>>& in) { return global_avg_pool(in[0]); }, {x2},
                                  options));
  }
  {
    Shape s = random_shape(rng);
    BasicDiffArray<T> a = random_array<T>(s, rng);
    BasicDiffArray<T> b = random_array<T>({s.n, 1, s.h, s.w}, rng);
    out.push_back(check_gradients<T>("add", [](const std::vector<BasicDiffArray<T>>& in) { return add(in[0], in[1]); },
                                  {a, b}, options));
    BasicDiffArray<T> c = random_array<T>(s, rng);
    BasicDiffArray<T> d = random_array<T>({s.n, s.c, 1, 1}, rng);
    out.push_back(check_gradients<T>("mul", [](const std::vector<BasicDiffArray<T>>& in) { return mul(in[0], in[1]); },
                                  {c, d}, options));
    BasicDiffArray<T> e = random_array<T>(s, rng);
    BasicDiffArray<T> f = random_array<T>(s, rng);
    out.push_back(check_gradients<T>("sub_affine", [](const std::vector<BasicDiffArray<T>>& in) {
      return affine(sub(in[0], in[1]), 0.75, 0.1);
    }, {e, f}, options));
  }
  {
    Shape s = random_shape(rng);
    BasicDiffArray<T> a = random_array<T>(s, rng);
    BasicDiffArray<T> b = random_array<T>({s.n, rng.uniform_int(1, 3), s.h, s.w}, rng);
    out.push_back(check_gradients<T>("concat_channels", [](const std::vector<BasicDiffArray<T>>& in) {
      return concat_channels<T>({in[0], in[1]});
    }, {a, b}, options));
    BasicDiffArray<T> c = random_array<T>({s.n, 4, s.h, s.w}, rng);
    out.push_back(check_gradients<T>("slice_channels", [](const std::vector<BasicDiffArray<T>>& in) {
      return slice_channels(in[0], 1, 2);
    }, {c}, options));
  }
  {
    Shape s = random_shape(rng);
    BasicDiffArray<T> t = random_array<T>(s, rng);
    BasicDiffArray<T> d = away_from_zero<T>(s, rng, margin);
    std::vector<T> p(t.data().begin(), t.data().end());
    for (size_t i = 0; i < p.size(); ++i) p[i] += d.data()[i];
    BasicDiffArray<T> pred = BasicDiffArray<T>::from(s, std::move(p));
    out.push_back(check_gradients<T>("l1_loss", [](const std::vector<BasicDiffArray<T>>& in) { return l1_loss(in[0], in[1]); },
                                  {pred, t}, options));
  }
  {
    // conv -> sigmoid -> bilinear_sample -> upsample -> mul -> avg_pool ->
    // concat -> conv: chain-rule integrity across eight primitives.
    Shape s{2, 3, 4, 4};
    BasicDiffArray<T> x = random_array<T>(s, rng);
    BasicDiffArray<T> w1 = random_array<T>({4, 3, 3, 3}, rng, -0.5, 0.5);
    BasicDiffArray<T> b1 = random_array<T>({1, 4, 1, 1}, rng);
    std::vector<T> g(static_cast<size_t>(2 * 2 * 16));
    for (T& v : g) v = static_cast<T>(off_integer(rng, 0.0, 3.0, margin));
    BasicDiffArray<T> grid = BasicDiffArray<T>::from({2, 2, 4, 4}, std::move(g));
    BasicDiffArray<T> gate = random_array<T>({2, 4, 1, 1}, rng);
    BasicDiffArray<T> w2 = random_array<T>({2, 7, 3, 3}, rng, -0.5, 0.5);
    BasicDiffArray<T> b2 = random_array<T>({1, 2, 1, 1}, rng);
    out.push_back(check_gradients<T>("composite_chain", [](const std::vector<BasicDiffArray<T>>& in) {
      BasicDiffArray<T> h = sigmoid(conv2d(in[0], BasicConvParams<T>{in[1], in[2], 1, 1}));
      h = bilinear_sample(h, in[3]);
      h = mul(upsample_bilinear2x(h), in[4]);
      h = avg_pool2x(h);
      h = concat_channels<T>({h, in[0]});
      return conv2d(h, BasicConvParams<T>{in[5], in[6], 1, 1});
    }, {x, w1, b1, grid, gate, w2, b2}, options));
  }
  return out;
}

template GradCheckResult check_gradients<float>(const std::string&, const std::type_identity_t<BasicGradFn<float>>&,
                                               std::vector<DiffArray>, const GradCheckOptions&);
template GradCheckResult check_gradients<double>(const std::string&, const std::type_identity_t<BasicGradFn<double>>&,
                                                std::vector<DiffArray64>, const GradCheckOptions&);
template std::vector<GradCheckResult> run_primitive_gradchecks<float>(const GradCheckOptions&);
template std::vector<GradCheckResult> run_primitive_gradchecks<double>(const GradCheckOptions&);

}  // namespace hstr
