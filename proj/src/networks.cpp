#include "hstr/networks.hpp"

#include <stdexcept>

#include "hstr/imageops.hpp"
#include "hstr/warping.hpp"

namespace hstr {

void require_divisible(const Shape& s, int64_t multiple, const char* who) {
  if (s.h % multiple == 0 && s.w % multiple == 0) return;
  auto up = [&](int64_t v) { return (v + multiple - 1) / multiple * multiple; };
  throw ShapeError(std::string(who) + ": " + std::to_string(s.w) + "x" + std::to_string(s.h) +
                   " is not a multiple of " + std::to_string(multiple) + "; pad to " + std::to_string(up(s.w)) + "x" +
                   std::to_string(up(s.h)));
}

// IFNet ----------------------------------------------------------------------

IFNet::IFNet(ParameterSet& params, const std::string& prefix, const IFNetConfig& config, Rng& rng) {
  if (config.convs_per_block < 1) throw std::invalid_argument("IFNet needs at least one conv per block");
  for (int k = 0; k < kIFBlocks; ++k) {
    const std::string name = prefix + ".block" + std::to_string(k);
    Block b;
    b.entry = make_conv(params, name + ".entry", {19, kIFChannels, 3, 2}, rng);
    for (int i = 0; i < config.convs_per_block; ++i)
      b.body.push_back(make_conv(params, name + ".conv" + std::to_string(i), {kIFChannels, kIFChannels}, rng));
    b.head = make_conv(params, name + ".head", {kIFChannels, 4, 3, 1, false, true}, rng);
    blocks_.push_back(std::move(b));
  }
}

DiffArray IFNet::operator()(const DiffArray& prev, const DiffArray& next, const DiffArray& center) const {
  const Shape s = prev.shape();
  require_same_shape(prev, next, "IFNet");
  require_same_shape(prev, center, "IFNet");
  require_divisible(s, 8, "IFNet");

  // Box-filtered copies at 1, 1/2, 1/4.
  std::array<std::array<DiffArray, 3>, 3> scaled;
  scaled[0] = {prev, next, center};
  for (int i = 1; i < 3; ++i)
    for (int j = 0; j < 3; ++j) scaled[i][j] = avg_pool2x(scaled[i - 1][j]);

  DiffArray flow;
  for (int k = 0; k < kIFBlocks; ++k) {
    const int64_t div = kIFBlockDivisors[static_cast<size_t>(k)];
    const auto& in = scaled[div == 4 ? 2 : div == 2 ? 1 : 0];
    if (!flow.defined())
      flow = DiffArray::zeros({s.n, 4, s.h / div, s.w / div});
    else
      flow = rescale_flow(flow, 2.0);
    DiffArray x = concat_channels<float>({in[0], in[1], in[2], backwarp(in[0], slice_channels(flow, 0, 2)),
                                          backwarp(in[1], slice_channels(flow, 2, 2)), flow});
    const Block& b = blocks_[static_cast<size_t>(k)];
    x = b.entry(x);
    for (const auto& layer : b.body) x = layer(x);
    flow = add(flow, affine(upsample_bilinear2x(b.head(x)), 2.0f));
  }
  return flow;
}

// Context --------------------------------------------------------------------

std::string variant_name(ContextVariant v) { return v == ContextVariant::FixedWarp ? "warp" : "deformable"; }

ContextVariant parse_variant(const std::string& name) {
  if (name == "warp") return ContextVariant::FixedWarp;
  if (name == "deformable") return ContextVariant::DeformableOffset;
  throw std::invalid_argument("unknown context variant '" + name + "' (expected warp or deformable)");
}

OffsetEstimator::OffsetEstimator(ParameterSet& params, const std::string& prefix, int64_t channels, Rng& rng) {
  const int64_t reduced = std::max<int64_t>(1, channels / 4);
  for (size_t i = 0; i < 3; ++i) {
    const std::string k = std::to_string(i);
    down_[i] = make_conv(params, prefix + ".down" + k, {i == 0 ? channels + 2 : channels, channels, 3, 2}, rng);
    attention_[i].squeeze = make_conv(params, prefix + ".att" + k + ".squeeze", {channels, reduced, 1}, rng);
    attention_[i].excite = make_conv(params, prefix + ".att" + k + ".excite", {reduced, channels, 1, 1, false}, rng);
  }
  for (size_t i = 0; i < 3; ++i)
    up_[i] = make_conv(params, prefix + ".up" + std::to_string(i), {channels, channels}, rng);
  head_ = make_conv(params, prefix + ".head", {channels, kOffsetChannels, 1, 1, false, true}, rng);
}

DiffArray OffsetEstimator::operator()(const DiffArray& features_and_flow) const {
  const Shape s = features_and_flow.shape();
  if (s.h < kMinOffsetSize || s.w < kMinOffsetSize)
    throw ShapeError("offset estimator: level size " + std::to_string(s.w) + "x" + std::to_string(s.h) +
                     " is below the " + std::to_string(kMinOffsetSize) + "x" + std::to_string(kMinOffsetSize) +
                     " minimum; use inputs at least " + std::to_string(kMinOffsetSize * 8) + " pixels on each side");
  std::array<DiffArray, 4> enc;
  enc[0] = features_and_flow;
  for (size_t i = 0; i < 3; ++i) {
    DiffArray x = down_[i](enc[i]);
    DiffArray gate = sigmoid(attention_[i].excite(attention_[i].squeeze(global_avg_pool(x))));
    enc[i + 1] = mul(x, gate);
  }
  // Decoder with additive skips from the encoder at each size.
  DiffArray x = enc[3];
  for (size_t i = 0; i < 3; ++i) {
    const Shape target = enc[2 - i].shape();
    x = up_[i](resize_bilinear(x, target.h, target.w));
    if (i < 2) x = add(x, enc[2 - i]);
  }
  return head_(x);
}

ContextNet::ContextNet(ParameterSet& params, const std::string& prefix, ContextVariant variant, Rng& rng,
                       Rng& offset_rng)
    : variant_(variant) {
  int64_t in = 3;
  for (int k = 0; k < kPyramidLevels; ++k) {
    const std::string name = prefix + ".level" + std::to_string(k);
    const int64_t c = kPyramidChannels[static_cast<size_t>(k)];
    Level level;
    level.conv = make_conv(params, name + ".conv", {in, c, 3, k == 0 ? 1 : 2}, rng);
    level.block = make_conv(params, name + ".block", {c, c}, rng);
    if (variant == ContextVariant::DeformableOffset) level.offsets.emplace(params, name + ".offset", c, offset_rng);
    levels_.push_back(std::move(level));
    in = c;
  }
}

FeaturePyramid ContextNet::operator()(const DiffArray& frame, const DiffArray& flow) const {
  const Shape s = frame.shape();
  if (s.c != 3) throw ShapeError("ContextNet: expected a 3-channel frame, got " + s.str());
  const Shape fs = flow.shape();
  if (fs.n != s.n || fs.c != 2 || fs.h != s.h || fs.w != s.w)
    throw ShapeError("ContextNet: flow " + fs.str() + " does not fit frame " + s.str());
  require_divisible(s, 8, "ContextNet");

  FeaturePyramid out;
  DiffArray features = frame;
  DiffArray level_flow = flow;
  for (size_t k = 0; k < levels_.size(); ++k) {
    const Level& level = levels_[k];
    features = level.conv(features);
    if (k > 0) level_flow = rescale_flow(level_flow, 0.5);
    if (variant_ == ContextVariant::FixedWarp) {
      out.levels[k] = level.block(backwarp(features, level_flow));
    } else {
      // Every tap starts from the level flow; the estimator learns corrections.
      std::vector<DiffArray> tiled(kOffsetChannels / 2, level_flow);
      DiffArray offsets = add(concat_channels(tiled), (*level.offsets)(concat_channels<float>({features, level_flow})));
      DiffArray y = deformable_conv2d(features, offsets, level.block.conv);
      out.levels[k] = prelu(y, level.block.slope);
    }
  }
  return out;
}

// Fusion ---------------------------------------------------------------------

FusionNet::FusionNet(ParameterSet& params, const std::string& prefix, Rng& rng) {
  stage_inputs_[0] = 15;
  for (size_t k = 0; k < 4; ++k) stage_inputs_[k + 1] = kEncoderWidths[k] + 4 * kPyramidChannels[k];
  constexpr std::array<int64_t, 5> expected{15, 96, 224, 480, 992};
  if (stage_inputs_ != expected) throw std::logic_error("FusionNet: encoder concatenation widths are inconsistent");

  for (size_t k = 0; k < 4; ++k)
    down_[k] = make_conv(params, prefix + ".down" + std::to_string(k), {stage_inputs_[k], kEncoderWidths[k], 3, 2}, rng);
  // Decoder stage k sees the previous output plus the matching encoder skip.
  int64_t in = stage_inputs_[4];
  for (size_t k = 0; k < 4; ++k) {
    up_[k] = make_conv(params, prefix + ".up" + std::to_string(k), {in, kDecoderWidths[k]}, rng);
    if (k < 3) in = kDecoderWidths[k] + stage_inputs_[3 - k];
  }
  out_ = make_conv(params, prefix + ".out", {kDecoderWidths[3], 4, 3, 1, false, true}, rng);
}

FusionOutput FusionNet::operator()(const FusionInputs& in) const {
  const Shape s = in.lr_ref.shape();
  for (const DiffArray* f : {&in.warped_hr_prev, &in.warped_hr_next, &in.warped_lr_prev, &in.warped_lr_next})
    require_same_shape(*f, in.lr_ref, "FusionNet");
  require_divisible(s, 16, "FusionNet");

  // stage[k] is the encoder output at 1/2^(k+1) joined with the pyramids'
  // level k pooled to that size.
  std::array<DiffArray, 4> stage;
  DiffArray x = concat_channels<float>({in.warped_hr_prev, in.warped_hr_next, in.warped_lr_prev, in.warped_lr_next, in.lr_ref});
  for (size_t k = 0; k < 4; ++k) {
    std::vector<DiffArray> parts{down_[k](x)};
    for (const auto& p : in.pyramids) {
      const DiffArray& level = p.levels[k];
      if (level.shape().c != kPyramidChannels[k] || level.shape().h != s.h >> k || level.shape().w != s.w >> k)
        throw ShapeError("FusionNet: pyramid level " + std::to_string(k) + " has shape " + level.shape().str());
      parts.push_back(avg_pool2x(level));
    }
    stage[k] = x = concat_channels(parts);
    if (x.shape().c != stage_inputs_[k + 1]) throw std::logic_error("FusionNet: stage width drifted");
  }
  for (size_t k = 0; k < 4; ++k) {
    x = up_[k](upsample_bilinear2x(x));
    if (k < 3) x = concat_channels<float>({x, stage[2 - k]});
  }
  DiffArray head = out_(x);
  return {slice_channels(head, 0, 3), sigmoid(slice_channels(head, 3, 1))};
}

}  // namespace hstr
