#include <cmath>

#include "doctest.h"
#include "hstr/gradcheck.hpp"
#include "hstr/nn.hpp"
#include "hstr/ops.hpp"
#include "hstr/parallel.hpp"

using namespace hstr;

namespace {

DiffArray random_array(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(static_cast<size_t>(s.numel()));
  for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return DiffArray::from(s, std::move(v));
}

// Direct nested-loop convolution in double, independent of im2col/GEMM.
std::vector<double> naive_conv(const DiffArray& x, const DiffArray& w, const DiffArray& b, int stride, int pad) {
  const Shape is = x.shape(), ws = w.shape();
  int64_t oh = (is.h + 2 * pad - ws.h) / stride + 1, ow = (is.w + 2 * pad - ws.w) / stride + 1;
  std::vector<double> out(static_cast<size_t>(is.n * ws.n * oh * ow));
  size_t i = 0;
  for (int64_t n = 0; n < is.n; ++n)
    for (int64_t o = 0; o < ws.n; ++o)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx, ++i) {
          double acc = b.data()[static_cast<size_t>(o)];
          for (int64_t c = 0; c < is.c; ++c)
            for (int64_t ky = 0; ky < ws.h; ++ky)
              for (int64_t kx = 0; kx < ws.w; ++kx) {
                int64_t iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                if (iy < 0 || iy >= is.h || ix < 0 || ix >= is.w) continue;
                acc += static_cast<double>(x.at(n, c, iy, ix)) * w.at(o, c, ky, kx);
              }
          out[i] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 gives 9") {
  DiffArray x = DiffArray::full({1, 1, 3, 3}, 1.0f);
  ConvParams p{DiffArray::full({1, 1, 3, 3}, 1.0f), DiffArray::zeros({1, 1, 1, 1}), 1, 0};
  DiffArray y = conv2d(x, p);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 9.0f);
}

TEST_CASE("conv2d: identity 1x1 kernel reproduces input exactly") {
  Rng rng(1);
  DiffArray x = random_array({2, 1, 5, 7}, rng);
  ConvParams p{DiffArray::full({1, 1, 1, 1}, 1.0f), DiffArray::zeros({1, 1, 1, 1}), 1, 0};
  DiffArray y = conv2d(x, p);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < y.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: strided shape and agreement with direct loops") {
  Rng rng(2);
  DiffArray x = random_array({2, 4, 8, 8}, rng);
  DiffArray w = random_array({6, 4, 3, 3}, rng);
  DiffArray b = random_array({1, 6, 1, 1}, rng);
  DiffArray y = conv2d(x, ConvParams{w, b, 2, 1});
  CHECK(y.shape() == Shape{2, 6, 4, 4});
  auto ref = naive_conv(x, w, b, 2, 1);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));

  auto wide = [](const DiffArray& a) {
    return DiffArray64::from(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
  };
  GradCheckResult r = check_gradients<double>("conv2d", [](const std::vector<DiffArray64>& in) {
    return conv2d(in[0], BasicConvParams<double>{in[1], in[2], 2, 1});
  }, {wide(x), wide(w), wide(b)});
  CHECK(r.passed());
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("conv2d: shape mismatch names both shapes") {
  DiffArray x = DiffArray::zeros({1, 3, 8, 8});
  ConvParams p{DiffArray::zeros({4, 2, 3, 3}), DiffArray::zeros({1, 4, 1, 1}), 1, 1};
  try {
    conv2d(x, p);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("1x3x8x8") != std::string::npos);
    CHECK(msg.find("4x2x3x3") != std::string::npos);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  Rng rng(3);
  DiffArray w = random_array({3, 2, 3, 3}, rng);
  DiffArray x = random_array({1, 2, 8, 8}, rng);
  DiffArray u = random_array({1, 3, 4, 4}, rng);
  DiffArray y = conv2d(x, ConvParams{w, DiffArray::zeros({1, 3, 1, 1}), 2, 1});
  DiffArray z = conv_transpose2d(u, DeconvParams{w, DiffArray::zeros({1, 2, 1, 1}), 2, 1, 1});
  REQUIRE(z.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (size_t i = 0; i < y.data().size(); ++i) lhs += static_cast<double>(y.data()[i]) * u.data()[i];
  for (size_t i = 0; i < z.data().size(); ++i) rhs += static_cast<double>(z.data()[i]) * x.data()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("bilinear_sample: identity grid, integer and half-pixel shifts") {
  const int64_t h = 4, w = 6;
  std::vector<float> ramp;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) ramp.push_back(static_cast<float>(x));
  DiffArray img = DiffArray::from({1, 1, h, w}, ramp);

  auto mesh = [&](float dx) {
    std::vector<float> g;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) g.push_back(static_cast<float>(x) + dx);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) g.push_back(static_cast<float>(y));
    return DiffArray::from({1, 2, h, w}, g);
  };

  DiffArray same = bilinear_sample(img, mesh(0.0f));
  for (size_t i = 0; i < ramp.size(); ++i) CHECK(same.data()[i] == ramp[i]);

  DiffArray shifted = bilinear_sample(img, mesh(1.0f));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x + 1 < w; ++x) CHECK(shifted.at(0, 0, y, x) == static_cast<float>(x + 1));
  // Clamp-to-edge on the last column.
  CHECK(shifted.at(0, 0, 0, w - 1) == static_cast<float>(w - 1));

  DiffArray two = DiffArray::from({1, 1, 1, 2}, {0.0f, 2.0f});
  DiffArray half = bilinear_sample(two, DiffArray::from({1, 2, 1, 1}, {0.5f, 0.0f}));
  CHECK(half.item() == 1.0f);
}

TEST_CASE("bilinear_sample: batch mismatch rejected") {
  CHECK_THROWS_AS(bilinear_sample(DiffArray::zeros({2, 1, 4, 4}), DiffArray::zeros({1, 2, 4, 4})), ShapeError);
}

TEST_CASE("deformable_conv2d: zero offsets equal conv2d") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    int64_t n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 4), h = rng.uniform_int(3, 9),
            w = rng.uniform_int(3, 9), co = rng.uniform_int(1, 5);
    int stride = static_cast<int>(rng.uniform_int(1, 2));
    DiffArray x = random_array({n, c, h, w}, rng);
    ConvParams p{random_array({co, c, 3, 3}, rng), random_array({1, co, 1, 1}, rng), stride, 1};
    DiffArray ref = conv2d(x, p);
    DiffArray off = DiffArray::zeros({n, 18, ref.shape().h, ref.shape().w});
    DiffArray y = deformable_conv2d(x, off, p);
    REQUIRE(y.shape() == ref.shape());
    for (size_t i = 0; i < y.data().size(); ++i) CHECK(std::abs(y.data()[i] - ref.data()[i]) <= 1e-6f);
  }
}

TEST_CASE("deformable_conv2d: (+1, 0) offsets on a translated image match conv2d interior") {
  Rng rng(5);
  const int64_t h = 8, w = 10;
  DiffArray base = random_array({1, 2, h, w}, rng);
  // shifted(x) = base(x - 1): sampling one pixel right undoes the shift.
  DiffArray shifted = DiffArray::zeros({1, 2, h, w});
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 1; x < w; ++x) shifted.at(0, c, y, x) = base.at(0, c, y, x - 1);
  ConvParams p{random_array({3, 2, 3, 3}, rng), random_array({1, 3, 1, 1}, rng), 1, 1};
  std::vector<float> o(static_cast<size_t>(18 * h * w), 0.0f);
  for (int64_t k = 0; k < 9; ++k)
    for (int64_t i = 0; i < h * w; ++i) o[static_cast<size_t>(2 * k * h * w + i)] = 1.0f;
  DiffArray y = deformable_conv2d(shifted, DiffArray::from({1, 18, h, w}, o), p);
  DiffArray ref = conv2d(base, p);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t yy = 1; yy < h - 1; ++yy)
      for (int64_t x = 1; x < w - 2; ++x) CHECK(y.at(0, c, yy, x) == doctest::Approx(ref.at(0, c, yy, x)).epsilon(1e-5));
}

TEST_CASE("deformable_conv2d: offset channel count checked") {
  DiffArray x = DiffArray::zeros({1, 2, 6, 6});
  ConvParams p{DiffArray::zeros({3, 2, 3, 3}), DiffArray::zeros({1, 3, 1, 1}), 1, 1};
  CHECK_THROWS_AS(deformable_conv2d(x, DiffArray::zeros({1, 16, 6, 6}), p), ShapeError);
}

TEST_CASE("l1_loss examples") {
  DiffArray t = DiffArray::from({1, 1, 1, 2}, {0.0f, 4.0f});
  CHECK(l1_loss(t, t).item() == 0.0f);
  CHECK(l1_loss(affine(t, 1.0f, 0.5f), t).item() == doctest::Approx(0.5));
  DiffArray p = DiffArray::from({1, 1, 1, 2}, {1.0f, 2.0f}, true);
  DiffArray loss = l1_loss(p, t);
  CHECK(loss.item() == doctest::Approx(1.5));
  loss.backward();
  CHECK(p.grad()[0] == doctest::Approx(0.5));
  CHECK(p.grad()[1] == doctest::Approx(-0.5));
  CHECK_THROWS_AS(l1_loss(p, DiffArray::zeros({1, 1, 2, 1})), ShapeError);
}

TEST_CASE("sigmoid stays strictly inside (0, 1)") {
  DiffArray x = DiffArray::from({1, 1, 1, 4}, {-1000.0f, -50.0f, 50.0f, 1000.0f});
  DiffArray y = sigmoid(x);
  for (float v : y.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("broadcasting mul backward reduces over broadcast dims") {
  DiffArray a = DiffArray::from({1, 2, 1, 2}, {1, 2, 3, 4}, true);
  DiffArray m = DiffArray::from({1, 1, 1, 2}, {10, 20}, true);
  DiffArray y = sum(mul(a, m));
  CHECK(y.item() == doctest::Approx(10 + 40 + 30 + 80));
  y.backward();
  CHECK(m.grad()[0] == doctest::Approx(4.0));
  CHECK(m.grad()[1] == doctest::Approx(6.0));
  CHECK(a.grad()[3] == doctest::Approx(20.0));
}

TEST_CASE("forward evaluation is deterministic across thread counts") {
  Rng rng(6);
  DiffArray x = random_array({2, 4, 16, 16}, rng);
  ConvParams p{random_array({8, 4, 3, 3}, rng), random_array({1, 8, 1, 1}, rng), 1, 1};
  DiffArray off = random_array({2, 18, 16, 16}, rng, -2, 2);
  set_num_threads(1);
  DiffArray a = deformable_conv2d(x, off, p);
  set_num_threads(4);
  DiffArray b = deformable_conv2d(x, off, p);
  DiffArray c = deformable_conv2d(x, off, p);
  set_num_threads(1);
  for (size_t i = 0; i < a.data().size(); ++i) {
    CHECK(a.data()[i] == b.data()[i]);
    CHECK(b.data()[i] == c.data()[i]);
  }
}

TEST_CASE("every primitive passes the finite-difference suite") {
  for (const GradCheckResult& r : run_primitive_gradchecks<double>()) {
    INFO(r.name << " max rel error " << r.max_rel_error);
    CHECK(r.probes >= 20);
    CHECK(r.passed());
  }
}

TEST_CASE("gradient check catches a wrong backward") {
  // y = x * x with a backward that forgets the factor 2.
  auto bad_square = [](const std::vector<DiffArray64>& in) {
    const DiffArray64& x = in[0];
    DiffArray64 y = detail::make_result<double>(x.shape(), {x.node()}, [](detail::Node<double>& self) {
      auto g = self.inputs[0]->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.inputs[0]->data[i];
    });
    for (size_t i = 0; i < y.data().size(); ++i) y.data()[i] = x.data()[i] * x.data()[i];
    return y;
  };
  DiffArray64 x = DiffArray64::full({1, 1, 2, 2}, 0.7);
  GradCheckResult r = check_gradients<double>("bad_square", bad_square, {x});
  CHECK_FALSE(r.passed());
  CHECK(r.max_rel_error > 0.4);
}

TEST_CASE("float kernels agree with finite differences at float resolution") {
  GradCheckOptions loose;
  loose.eps = 1e-2;
  loose.rel_tol = 5e-2;
  loose.abs_floor = 1e-3;
  for (const GradCheckResult& r : run_primitive_gradchecks<float>(loose)) {
    INFO(r.name << " max rel error " << r.max_rel_error);
    CHECK(r.passed());
  }
}

TEST_CASE("backward frees interior graph but keeps leaf gradients") {
  DiffArray x = DiffArray::from({1, 1, 1, 3}, {1, -2, 3}, true);
  DiffArray y = sum(mul(x, x));
  y.backward();
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
  for (float g : x.grad()) CHECK(std::isfinite(g));
}
