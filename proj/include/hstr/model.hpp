#pragma once

#include <memory>

#include "hstr/checkpoint.hpp"
#include "hstr/networks.hpp"

namespace hstr {

struct ModelConfig {
  ContextVariant variant = ContextVariant::FixedWarp;
  /// Separate flow networks for the HR and LR pairs instead of one shared.
  bool separate_lr_flow = false;
  IFNetConfig ifnet;
  uint64_t seed = 0;
};

/// Frame batches, each (n, 3, h, w). LR frames are HR-sized.
struct ModelInputs {
  DiffArray hr_prev, hr_next;
  DiffArray lr_prev, lr_center, lr_next;
};

struct ModelOutputs {
  DiffArray prediction;  // unclamped
  DiffArray flow_hr, flow_lr;
  DiffArray warped_hr_prev, warped_hr_next;
  FusionOutput fusion;
};

class HSTRNet {
 public:
  explicit HSTRNet(const ModelConfig& config);
  HSTRNet(const HSTRNet&) = delete;
  HSTRNet& operator=(const HSTRNet&) = delete;

  ModelOutputs forward(const ModelInputs& in) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const ModelConfig& config() const { return config_; }
  const FusionNet& fusion() const { return *fusion_; }

  /// Header entries describing the architecture.
  void describe(Checkpoint& ckpt) const;
  /// Reads the architecture back from a checkpoint header.
  static ModelConfig config_from(const Checkpoint& ckpt);

 private:
  ModelConfig config_;
  ParameterSet params_;
  std::unique_ptr<IFNet> flow_hr_, flow_lr_;
  std::unique_ptr<ContextNet> context_;
  std::unique_ptr<FusionNet> fusion_;
};

}  // namespace hstr
