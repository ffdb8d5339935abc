#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "hstr/tensor.hpp"

namespace hstr {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FileNotFound : public ImageError {
 public:
  using ImageError::ImageError;
};

/// RGB image, interleaved row-major, values in [0, 1].
struct Frame {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> pixels;

  Frame() = default;
  Frame(int64_t h, int64_t w, float fill = 0.0f)
      : height(h), width(w), pixels(static_cast<size_t>(h * w * 3), fill) {}

  float& at(int64_t y, int64_t x, int c) { return pixels[static_cast<size_t>((y * width + x) * 3 + c)]; }
  float at(int64_t y, int64_t x, int c) const { return pixels[static_cast<size_t>((y * width + x) * 3 + c)]; }
  bool operator==(const Frame&) const = default;
};

/// Per-pixel displacement in pixels; channel 0 horizontal, 1 vertical.
struct FlowField {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> vectors;

  FlowField() = default;
  FlowField(int64_t h, int64_t w, float dx = 0.0f, float dy = 0.0f);

  float& at(int64_t y, int64_t x, int c) { return vectors[static_cast<size_t>((y * width + x) * 2 + c)]; }
  float at(int64_t y, int64_t x, int c) const { return vectors[static_cast<size_t>((y * width + x) * 2 + c)]; }
};

/// Catmull-Rom bicubic (a = -0.5) with edge replication. Downscaling widens
/// the kernel by 1/scale so it also low-passes. Output is clamped to [0, 1].
/// Output size is round(scale * input).
Frame bicubic_resize(const Frame& frame, double scale);
Frame bicubic_resize(const Frame& frame, int64_t out_h, int64_t out_w);

/// Largest centered crop whose sides are multiples of factor.
Frame center_crop_divisible(const Frame& frame, int64_t factor);

/// Bicubic down by factor then back up: the HR-sized low-detail reference a
/// low-resolution camera would provide. Non-divisible inputs are center-cropped
/// first, so the output takes the cropped size.
Frame simulate_lr(const Frame& hr, int factor);

/// Bilinear resize of the field with displacements multiplied by scale.
FlowField rescale_flow(const FlowField& flow, double scale);
/// Differentiable counterpart on a (n, 2k, h, w) array of stacked fields.
DiffArray rescale_flow(const DiffArray& flow, double scale);

/// 8-bit PNG codec. Loading drops alpha and expands gray.
Frame load_frame(const std::filesystem::path& path);
void save_frame(const Frame& frame, const std::filesystem::path& path);

/// Stacks frames into a (n, 3, h, w) array.
DiffArray frames_to_array(const std::vector<const Frame*>& frames);
DiffArray frame_to_array(const Frame& frame);
/// Batch entry n of a (N, 3, h, w) array, optionally clamped to [0, 1].
Frame array_to_frame(const DiffArray& array, int64_t n = 0, bool clamp = true);

DiffArray flow_to_array(const FlowField& flow);
/// Channels [2k, 2k+2) of batch entry n.
FlowField array_to_flow(const DiffArray& array, int64_t n = 0, int64_t k = 0);

}  // namespace hstr
