#include "hstr/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hstr {

namespace {

void require_match(const Frame& a, const Frame& b, const char* who) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument(std::string(who) + ": frames differ in size (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                std::to_string(b.height) + ")");
  if (a.pixels.empty()) throw std::invalid_argument(std::string(who) + ": empty frames");
}

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    total += w[static_cast<size_t>(i)];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable valid-mode filtering of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& img, int64_t h, int64_t w,
                                 const std::array<double, kWindow>& k) {
  const int64_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> tmp(static_cast<size_t>(h * ow));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kWindow; ++t) acc += k[static_cast<size_t>(t)] * img[static_cast<size_t>(y * w + x + t)];
      tmp[static_cast<size_t>(y * ow + x)] = acc;
    }
  std::vector<double> out(static_cast<size_t>(oh * ow));
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kWindow; ++t) acc += k[static_cast<size_t>(t)] * tmp[static_cast<size_t>((y + t) * ow + x)];
      out[static_cast<size_t>(y * ow + x)] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Frame& a, const Frame& b) {
  require_match(a, b, "psnr");
  double se = 0.0;
  for (size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.pixels.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim(const Frame& a, const Frame& b) {
  require_match(a, b, "ssim");
  if (a.height < kWindow || a.width < kWindow)
    throw std::invalid_argument("ssim: frames must be at least 11x11, got " + std::to_string(a.width) + "x" +
                                std::to_string(a.height));
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto k = gaussian_window();
  const int64_t h = a.height, w = a.width, n = h * w;
  double total = 0.0;
  size_t count = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> x(static_cast<size_t>(n)), y(x.size()), xx(x.size()), yy(x.size()), xy(x.size());
    for (int64_t i = 0; i < n; ++i) {
      const double u = a.pixels[static_cast<size_t>(i * 3 + c)], v = b.pixels[static_cast<size_t>(i * 3 + c)];
      x[static_cast<size_t>(i)] = u;
      y[static_cast<size_t>(i)] = v;
      xx[static_cast<size_t>(i)] = u * u;
      yy[static_cast<size_t>(i)] = v * v;
      xy[static_cast<size_t>(i)] = u * v;
    }
    auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
    auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k), sxy = filter_valid(xy, h, w, k);
    for (size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace hstr
