#include "hstr/model.hpp"

#include "hstr/warping.hpp"

namespace hstr {

HSTRNet::HSTRNet(const ModelConfig& config) : config_(config) {
  // One stream per module so the shared weights do not depend on which
  // optional pieces exist.
  Rng flow_rng(derive_seed(config.seed, 1));
  Rng flow_lr_rng(derive_seed(config.seed, 2));
  Rng context_rng(derive_seed(config.seed, 3));
  Rng offset_rng(derive_seed(config.seed, 4));
  Rng fusion_rng(derive_seed(config.seed, 5));
  if (config.separate_lr_flow) {
    flow_hr_ = std::make_unique<IFNet>(params_, "ifnet.hr", config.ifnet, flow_rng);
    flow_lr_ = std::make_unique<IFNet>(params_, "ifnet.lr", config.ifnet, flow_lr_rng);
  } else {
    flow_hr_ = std::make_unique<IFNet>(params_, "ifnet", config.ifnet, flow_rng);
  }
  context_ = std::make_unique<ContextNet>(params_, "contextnet", config.variant, context_rng, offset_rng);
  fusion_ = std::make_unique<FusionNet>(params_, "fusionnet", fusion_rng);
}

ModelOutputs HSTRNet::forward(const ModelInputs& in) const {
  for (const DiffArray* f : {&in.hr_next, &in.lr_prev, &in.lr_center, &in.lr_next})
    require_same_shape(in.hr_prev, *f, "HSTRNet");
  require_divisible(in.hr_prev.shape(), 16, "HSTRNet");

  ModelOutputs out;
  const IFNet& lr_net = flow_lr_ ? *flow_lr_ : *flow_hr_;
  out.flow_hr = (*flow_hr_)(in.hr_prev, in.hr_next, in.lr_center);
  out.flow_lr = lr_net(in.lr_prev, in.lr_next, in.lr_center);
  DiffArray hr_to_prev = slice_channels(out.flow_hr, 0, 2), hr_to_next = slice_channels(out.flow_hr, 2, 2);
  DiffArray lr_to_prev = slice_channels(out.flow_lr, 0, 2), lr_to_next = slice_channels(out.flow_lr, 2, 2);

  FusionInputs f;
  f.warped_hr_prev = out.warped_hr_prev = backwarp(in.hr_prev, hr_to_prev);
  f.warped_hr_next = out.warped_hr_next = backwarp(in.hr_next, hr_to_next);
  f.warped_lr_prev = backwarp(in.lr_prev, lr_to_prev);
  f.warped_lr_next = backwarp(in.lr_next, lr_to_next);
  f.lr_ref = in.lr_center;
  // The context net registers the original frames itself.
  f.pyramids[0] = (*context_)(in.hr_prev, hr_to_prev);
  f.pyramids[1] = (*context_)(in.hr_next, hr_to_next);
  f.pyramids[2] = (*context_)(in.lr_prev, lr_to_prev);
  f.pyramids[3] = (*context_)(in.lr_next, lr_to_next);

  out.fusion = (*fusion_)(f);
  out.prediction = reconstruct(out.warped_hr_prev, out.warped_hr_next, out.fusion.mask, out.fusion.residual);
  return out;
}

void HSTRNet::describe(Checkpoint& ckpt) const {
  ckpt.set_meta("variant", variant_name(config_.variant));
  ckpt.set_meta("separate_lr_flow", config_.separate_lr_flow ? "1" : "0");
  ckpt.set_meta("ifnet_convs", std::to_string(config_.ifnet.convs_per_block));
  ckpt.set_meta("seed", std::to_string(config_.seed));
}

ModelConfig HSTRNet::config_from(const Checkpoint& ckpt) {
  ModelConfig c;
  c.variant = parse_variant(ckpt.get_meta("variant"));
  if (ckpt.has_meta("separate_lr_flow")) c.separate_lr_flow = ckpt.get_meta("separate_lr_flow") == "1";
  try {
    if (ckpt.has_meta("ifnet_convs")) c.ifnet.convs_per_block = std::stoi(ckpt.get_meta("ifnet_convs"));
    if (ckpt.has_meta("seed")) c.seed = std::stoull(ckpt.get_meta("seed"));
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint entries 'ifnet_convs' and 'seed' must be integers");
  }
  return c;
}

}  // namespace hstr
