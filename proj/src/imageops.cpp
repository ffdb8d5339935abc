#include "hstr/imageops.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "hstr/ops.hpp"
#include "hstr/parallel.hpp"

namespace hstr {

namespace fs = std::filesystem;

FlowField::FlowField(int64_t h, int64_t w, float dx, float dy)
    : height(h), width(w), vectors(static_cast<size_t>(h * w * 2)) {
  for (size_t i = 0; i < vectors.size(); i += 2) {
    vectors[i] = dx;
    vectors[i + 1] = dy;
  }
}

namespace {

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

// Contributing source indices and normalized weights for each output sample.
struct Contributions {
  int64_t taps = 0;
  std::vector<int64_t> index;  // out * taps
  std::vector<double> weight;
};

Contributions contributions(int64_t in, int64_t out) {
  const double scale = static_cast<double>(out) / static_cast<double>(in);
  const double shrink = std::min(scale, 1.0);
  const double support = 2.0 / shrink;
  Contributions c;
  c.taps = static_cast<int64_t>(std::ceil(2.0 * support)) + 2;
  c.index.resize(static_cast<size_t>(out * c.taps));
  c.weight.resize(c.index.size());
  for (int64_t i = 0; i < out; ++i) {
    const double center = (static_cast<double>(i) + 0.5) / scale - 0.5;
    const int64_t left = static_cast<int64_t>(std::floor(center - support));
    double total = 0.0;
    for (int64_t t = 0; t < c.taps; ++t) {
      const int64_t j = left + t;
      const double w = shrink * cubic(shrink * (center - static_cast<double>(j)));
      c.index[static_cast<size_t>(i * c.taps + t)] = std::clamp<int64_t>(j, 0, in - 1);
      c.weight[static_cast<size_t>(i * c.taps + t)] = w;
      total += w;
    }
    for (int64_t t = 0; t < c.taps; ++t) c.weight[static_cast<size_t>(i * c.taps + t)] /= total;
  }
  return c;
}

}  // namespace

Frame bicubic_resize(const Frame& frame, int64_t out_h, int64_t out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("bicubic_resize: output size " + std::to_string(out_h) + "x" +
                                std::to_string(out_w) + " is empty");
  if (frame.height < 1 || frame.width < 1) throw std::invalid_argument("bicubic_resize: empty input frame");
  if (out_h == frame.height && out_w == frame.width) return frame;

  const Contributions cx = contributions(frame.width, out_w);
  const Contributions cy = contributions(frame.height, out_h);
  // Horizontal pass into a double buffer, then vertical.
  std::vector<double> tmp(static_cast<size_t>(frame.height * out_w * 3));
  parallel_for(frame.height, [&](int64_t y0, int64_t y1) {
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = 0; x < out_w; ++x)
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int64_t t = 0; t < cx.taps; ++t) {
            size_t k = static_cast<size_t>(x * cx.taps + t);
            acc += cx.weight[k] * frame.at(y, cx.index[k], c);
          }
          tmp[static_cast<size_t>((y * out_w + x) * 3 + c)] = acc;
        }
  });
  Frame out(out_h, out_w);
  parallel_for(out_h, [&](int64_t y0, int64_t y1) {
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = 0; x < out_w; ++x)
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (int64_t t = 0; t < cy.taps; ++t) {
            size_t k = static_cast<size_t>(y * cy.taps + t);
            acc += cy.weight[k] * tmp[static_cast<size_t>((cy.index[k] * out_w + x) * 3 + c)];
          }
          out.at(y, x, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
        }
  });
  return out;
}

Frame bicubic_resize(const Frame& frame, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("bicubic_resize: scale must be positive");
  if (scale == 1.0) return frame;
  return bicubic_resize(frame, std::llround(static_cast<double>(frame.height) * scale),
                        std::llround(static_cast<double>(frame.width) * scale));
}

Frame center_crop_divisible(const Frame& frame, int64_t factor) {
  const int64_t h = frame.height / factor * factor;
  const int64_t w = frame.width / factor * factor;
  if (h == frame.height && w == frame.width) return frame;
  if (h < 1 || w < 1)
    throw std::invalid_argument("frame " + std::to_string(frame.width) + "x" + std::to_string(frame.height) +
                                " is smaller than factor " + std::to_string(factor));
  const int64_t oy = (frame.height - h) / 2, ox = (frame.width - w) / 2;
  Frame out(h, w);
  for (int64_t y = 0; y < h; ++y)
    std::copy_n(frame.pixels.begin() + ((y + oy) * frame.width + ox) * 3, w * 3, out.pixels.begin() + y * w * 3);
  return out;
}

Frame simulate_lr(const Frame& hr, int factor) {
  if (factor < 2) throw std::invalid_argument("simulate_lr: factor must be at least 2, got " + std::to_string(factor));
  Frame base = center_crop_divisible(hr, factor);
  Frame low = bicubic_resize(base, base.height / factor, base.width / factor);
  return bicubic_resize(low, base.height, base.width);
}

DiffArray rescale_flow(const DiffArray& flow, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("rescale_flow: scale must be positive");
  if (scale == 1.0) return flow;
  const Shape s = flow.shape();
  int64_t h = std::llround(static_cast<double>(s.h) * scale);
  int64_t w = std::llround(static_cast<double>(s.w) * scale);
  if (h < 1 || w < 1) throw ShapeError("rescale_flow: field " + s.str() + " vanishes at scale " + std::to_string(scale));
  DiffArray resized = (scale == 0.5 && s.h % 2 == 0 && s.w % 2 == 0) ? avg_pool2x(flow) : resize_bilinear(flow, h, w);
  return affine(resized, static_cast<float>(scale));
}

FlowField rescale_flow(const FlowField& flow, double scale) {
  NoGradGuard guard;
  return array_to_flow(rescale_flow(flow_to_array(flow), scale));
}

// PNG ------------------------------------------------------------------------

Frame load_frame(const fs::path& path) {
  if (!fs::exists(path)) throw FileNotFound("image not found: " + path.string());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw ImageError("cannot decode " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ImageError("cannot decode " + path.string() + ": " + msg);
  }
  Frame f(image.height, image.width);
  for (size_t i = 0; i < buf.size(); ++i) f.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  return f;
}

void save_frame(const Frame& frame, const fs::path& path) {
  if (frame.height < 1 || frame.width < 1) throw ImageError("cannot save empty frame to " + path.string());
  std::vector<unsigned char> buf(frame.pixels.size());
  for (size_t i = 0; i < buf.size(); ++i) {
    float v = std::isfinite(frame.pixels[i]) ? std::clamp(frame.pixels[i], 0.0f, 1.0f) : 0.0f;
    buf[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.width);
  image.height = static_cast<png_uint_32>(frame.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    throw ImageError("cannot write " + path.string() + ": " + image.message);
}

// Conversions ----------------------------------------------------------------

DiffArray frames_to_array(const std::vector<const Frame*>& frames) {
  if (frames.empty()) throw ShapeError("frames_to_array: no frames");
  const int64_t h = frames[0]->height, w = frames[0]->width;
  const int64_t n = static_cast<int64_t>(frames.size());
  std::vector<float> v(static_cast<size_t>(n * 3 * h * w));
  for (int64_t b = 0; b < n; ++b) {
    const Frame& f = *frames[static_cast<size_t>(b)];
    if (f.height != h || f.width != w)
      throw ShapeError("frames_to_array: frame " + std::to_string(f.width) + "x" + std::to_string(f.height) +
                       " differs from " + std::to_string(w) + "x" + std::to_string(h));
    for (int c = 0; c < 3; ++c)
      for (int64_t i = 0; i < h * w; ++i) v[static_cast<size_t>((b * 3 + c) * h * w + i)] = f.pixels[static_cast<size_t>(i * 3 + c)];
  }
  return DiffArray::from({n, 3, h, w}, std::move(v));
}

DiffArray frame_to_array(const Frame& frame) { return frames_to_array({&frame}); }

Frame array_to_frame(const DiffArray& array, int64_t n, bool clamp) {
  const Shape s = array.shape();
  if (s.c != 3 || n < 0 || n >= s.n) throw ShapeError("array_to_frame: cannot take entry " + std::to_string(n) + " of " + s.str());
  Frame f(s.h, s.w);
  auto d = array.data();
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < s.plane(); ++i) {
      float v = d[static_cast<size_t>((n * 3 + c) * s.plane() + i)];
      f.pixels[static_cast<size_t>(i * 3 + c)] = clamp ? std::clamp(v, 0.0f, 1.0f) : v;
    }
  return f;
}

DiffArray flow_to_array(const FlowField& flow) {
  const int64_t hw = flow.height * flow.width;
  std::vector<float> v(static_cast<size_t>(2 * hw));
  for (int c = 0; c < 2; ++c)
    for (int64_t i = 0; i < hw; ++i) v[static_cast<size_t>(c * hw + i)] = flow.vectors[static_cast<size_t>(i * 2 + c)];
  return DiffArray::from({1, 2, flow.height, flow.width}, std::move(v));
}

FlowField array_to_flow(const DiffArray& array, int64_t n, int64_t k) {
  const Shape s = array.shape();
  if (n < 0 || n >= s.n || k < 0 || 2 * k + 2 > s.c)
    throw ShapeError("array_to_flow: cannot take field " + std::to_string(k) + " of entry " + std::to_string(n) + " from " + s.str());
  FlowField f(s.h, s.w);
  auto d = array.data();
  for (int c = 0; c < 2; ++c)
    for (int64_t i = 0; i < s.plane(); ++i)
      f.vectors[static_cast<size_t>(i * 2 + c)] = d[static_cast<size_t>((n * s.c + 2 * k + c) * s.plane() + i)];
  return f;
}

}  // namespace hstr
