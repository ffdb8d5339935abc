#pragma once

#include "hstr/imageops.hpp"
#include "hstr/ops.hpp"

namespace hstr {

/// (1, 2, h, w) array holding each pixel's own x and y coordinate.
template <typename T>
BasicDiffArray<T> pixel_grid(int64_t h, int64_t w) {
  std::vector<T> v(static_cast<size_t>(2 * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      v[static_cast<size_t>(y * w + x)] = static_cast<T>(x);
      v[static_cast<size_t>(h * w + y * w + x)] = static_cast<T>(y);
    }
  return BasicDiffArray<T>::from({1, 2, h, w}, std::move(v));
}

/// Resamples source at (x + flow_x, y + flow_y): flow points from the target
/// grid into the source. flow is (n, 2, h, w) matching source's batch and size.
/// Borders clamp to the edge.
template <typename T>
BasicDiffArray<T> backwarp(const BasicDiffArray<T>& source, const BasicDiffArray<T>& flow) {
  const Shape s = source.shape(), f = flow.shape();
  if (f.c != 2 || f.n != s.n || f.h != s.h || f.w != s.w)
    throw ShapeError("backwarp: flow " + f.str() + " does not fit source " + s.str());
  return bilinear_sample(source, add(pixel_grid<T>(s.h, s.w), flow));
}

Frame backwarp(const Frame& source, const FlowField& flow);

}  // namespace hstr
