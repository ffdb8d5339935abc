#include "doctest.h"

#include <cmath>

#include "hstr/data.hpp"
#include "hstr/metrics.hpp"

using namespace hstr;

namespace {

// Same formula as the reference computation that produced kReferenceSsim.
std::pair<Frame, Frame> fixture_pair() {
  Frame a(32, 32), b(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        const double va = 0.5 + 0.3 * std::sin(0.37 * x + 0.23 * y + c);
        const double vb = std::clamp(va + 0.1 * std::cos(0.51 * x - 0.17 * y * (c + 1)), 0.0, 1.0);
        a.at(y, x, c) = static_cast<float>(va);
        b.at(y, x, c) = static_cast<float>(vb);
      }
  return {a, b};
}

// scikit-image 0.25 structural_similarity(gaussian_weights=True, sigma=1.5,
// use_sample_covariance=False, data_range=1, channel_axis=2).
constexpr double kReferenceSsim = 0.8929455443955895;
constexpr double kReferenceNegative = -0.7464754634358277;

Frame negative(const Frame& f) {
  Frame out = f;
  for (float& v : out.pixels) v = 1.0f - v;
  return out;
}

}  // namespace

TEST_CASE("psnr: closed-form values") {
  Frame a(8, 8, 0.5f), b(8, 8, 0.6f), c(8, 8, 0.0f);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(0.0005));
  CHECK(psnr(a, c) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-6));
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK_THROWS_AS(psnr(a, Frame(8, 9)), std::invalid_argument);
}

TEST_CASE("ssim: identical frames score one") {
  auto [a, b] = fixture_pair();
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  Frame flat(16, 16, 0.3f);
  CHECK(ssim(flat, flat) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim: matches the reference implementation on the fixture") {
  auto [a, b] = fixture_pair();
  CHECK(std::abs(ssim(a, b) - kReferenceSsim) <= 1e-4);
  CHECK(std::abs(ssim(a, negative(a)) - kReferenceNegative) <= 1e-4);
}

TEST_CASE("ssim: a textured frame against its negative is anticorrelated") {
  auto [a, b] = fixture_pair();
  CHECK(ssim(a, negative(a)) < 0.0);
  CHECK(ssim(b, negative(b)) < 0.0);
}

TEST_CASE("metrics: symmetric and invariant under a shared flip") {
  auto [a, b] = fixture_pair();
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK(psnr(flip_horizontal(a), flip_horizontal(b)) == doctest::Approx(psnr(a, b)).epsilon(1e-12));
  CHECK(ssim(flip_horizontal(a), flip_horizontal(b)) == doctest::Approx(ssim(a, b)).epsilon(1e-12));
}

TEST_CASE("ssim: rejects frames smaller than the window") {
  Frame a(10, 32), b(10, 32);
  CHECK_THROWS_AS(ssim(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ssim(Frame(16, 16), Frame(16, 17)), std::invalid_argument);
}
