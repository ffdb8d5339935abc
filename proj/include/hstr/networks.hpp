#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hstr/nn.hpp"

namespace hstr {

// Flow ----------------------------------------------------------------------

inline constexpr int kIFBlocks = 3;
inline constexpr int64_t kIFChannels = 64;
/// Each block runs at 1/divisor of the input size, coarse to fine.
inline constexpr std::array<int64_t, kIFBlocks> kIFBlockDivisors{4, 2, 1};

struct IFNetConfig {
  int convs_per_block = 6;
};

/// Coarse-to-fine residual flow toward the center frame. Returns (n, 4, h, w):
/// channels 0-1 point from the center grid into prev, 2-3 into next.
class IFNet {
 public:
  IFNet(ParameterSet& params, const std::string& prefix, const IFNetConfig& config, Rng& rng);

  DiffArray operator()(const DiffArray& prev, const DiffArray& next, const DiffArray& center) const;

 private:
  struct Block {
    ConvLayer entry;
    std::vector<ConvLayer> body;
    ConvLayer head;
  };
  std::vector<Block> blocks_;
};

// Context -------------------------------------------------------------------

enum class ContextVariant { FixedWarp, DeformableOffset };

std::string variant_name(ContextVariant v);
/// Accepts the names produced by variant_name.
ContextVariant parse_variant(const std::string& name);

inline constexpr int kPyramidLevels = 4;
inline constexpr std::array<int64_t, kPyramidLevels> kPyramidChannels{16, 32, 64, 128};
inline constexpr int64_t kOffsetChannels = 18;  // 2 * 3 * 3
inline constexpr int64_t kMinOffsetSize = 8;

struct FeaturePyramid {
  std::array<DiffArray, kPyramidLevels> levels;
};

/// Encoder of three stride-2 convs with channel attention, bilinear decoder
/// back to the input size, zero-initialized 1x1 head to 18 offset channels.
class OffsetEstimator {
 public:
  OffsetEstimator(ParameterSet& params, const std::string& prefix, int64_t channels, Rng& rng);

  /// input is level features with the level's 2-channel flow appended.
  DiffArray operator()(const DiffArray& features_and_flow) const;

 private:
  struct Attention {
    ConvLayer squeeze;
    ConvLayer excite;
  };
  std::array<ConvLayer, 3> down_;
  std::array<Attention, 3> attention_;
  std::array<ConvLayer, 3> up_;
  ConvLayer head_;
};

/// Four-level feature pyramid registered onto the center grid. Weights are
/// shared by every frame passed through the same instance.
class ContextNet {
 public:
  /// offset_rng seeds only the offset estimators so shared weights do not
  /// depend on the variant.
  ContextNet(ParameterSet& params, const std::string& prefix, ContextVariant variant, Rng& rng, Rng& offset_rng);

  /// frame (n, 3, h, w); flow (n, 2, h, w) from the center grid into frame.
  FeaturePyramid operator()(const DiffArray& frame, const DiffArray& flow) const;
  ContextVariant variant() const { return variant_; }

 private:
  struct Level {
    ConvLayer conv;
    ConvLayer block;
    std::optional<OffsetEstimator> offsets;
  };
  ContextVariant variant_;
  std::vector<Level> levels_;
};

// Fusion --------------------------------------------------------------------

inline constexpr std::array<int64_t, 4> kEncoderWidths{32, 96, 224, 480};
inline constexpr std::array<int64_t, 4> kDecoderWidths{128, 64, 32, 16};

struct FusionInputs {
  DiffArray warped_hr_prev, warped_hr_next;
  DiffArray warped_lr_prev, warped_lr_next;
  DiffArray lr_ref;
  std::array<FeaturePyramid, 4> pyramids;
};

struct FusionOutput {
  DiffArray residual;  // (n, 3, h, w)
  DiffArray mask;      // (n, 1, h, w), in (0, 1)
};

class FusionNet {
 public:
  FusionNet(ParameterSet& params, const std::string& prefix, Rng& rng);

  FusionOutput operator()(const FusionInputs& in) const;

  /// Input width of each encoder stage followed by the bottleneck width.
  const std::array<int64_t, 5>& stage_inputs() const { return stage_inputs_; }

 private:
  std::array<int64_t, 5> stage_inputs_{};
  std::array<ConvLayer, 4> down_;
  std::array<ConvLayer, 4> up_;
  ConvLayer out_;
};

/// m * a + (1 - m) * b + r with m broadcast over color channels.
template <typename T>
BasicDiffArray<T> reconstruct(const BasicDiffArray<T>& a, const BasicDiffArray<T>& b, const BasicDiffArray<T>& mask,
                              const BasicDiffArray<T>& residual) {
  return add(add(mul(mask, a), mul(affine(mask, T(-1), T(1)), b)), residual);
}

/// Throws ShapeError with the padded size when h or w is not a multiple.
void require_divisible(const Shape& s, int64_t multiple, const char* who);

}  // namespace hstr
