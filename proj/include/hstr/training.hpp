#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hstr/data.hpp"
#include "hstr/model.hpp"
#include "hstr/optim.hpp"

namespace hstr {

struct TrainConfig {
  int epochs = 200;
  int phase1_epochs = 100;
  double lr_phase1 = 1e-4;
  double lr_phase2 = 1e-5;
  int batch = 8;
  uint64_t seed = 0;
  bool augment = true;
  bool shuffle = true;
  std::filesystem::path checkpoint;  // empty disables checkpointing
  int checkpoint_every = 1;

  void validate() const;
};

/// Learning rate for a zero-based epoch.
double scheduled_lr(const TrainConfig& config, int epoch);

struct EpochRecord {
  int epoch = 0;  // one-based count of completed epochs
  double loss = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
};

inline constexpr const char* kTrainLogHeader = "epoch,loss,lr,wall_s";
std::string format_epoch(const EpochRecord& r);

/// Indexed sample supplier. load returns nullopt for samples to skip.
struct SampleSource {
  size_t count = 0;
  std::function<std::optional<Sample>(size_t)> load;
};

SampleSource dataset_source(const TripletDataset& dataset);
/// The vector must outlive the source.
SampleSource memory_source(const std::vector<Sample>& samples);

ModelInputs make_inputs(const std::vector<const Sample*>& batch);
DiffArray make_targets(const std::vector<const Sample*>& batch);

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(int epoch, int step, double loss)> on_step;
};

/// Runs epochs [start_epoch, config.epochs). Each epoch visits every sample
/// once in a seeded order. Throws NumericalError on a non-finite loss or
/// gradient; checkpoints written before that point stay untouched.
std::vector<EpochRecord> train(HSTRNet& model, Adam& optimizer, const SampleSource& source,
                               const DatasetSpec& augmentation, const TrainConfig& config, int start_epoch = 0,
                               const TrainHooks& hooks = {});

Checkpoint make_checkpoint(const HSTRNet& model, const Adam* optimizer, int epoch);

struct LoadedModel {
  std::unique_ptr<HSTRNet> model;
  Checkpoint checkpoint;
};

/// Rebuilds the model described by the checkpoint. A given expected variant
/// must match the stored one.
LoadedModel load_model(const std::filesystem::path& path, std::optional<ContextVariant> expected = std::nullopt);

// Evaluation ------------------------------------------------------------------

/// Full pipeline on one sample without gradients; clamped to [0, 1].
Frame forward_pipeline(const HSTRNet& model, const Sample& sample);

struct EvalRecord {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double ms = 0.0;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_ms = 0.0;
};

EvalReport evaluate(const HSTRNet& model, const SampleSource& source);

inline constexpr const char* kEvalCsvHeader = "sample_id,psnr_db,ssim,ms";
void write_eval_csv(const EvalReport& report, std::ostream& os);
std::string summarize(const EvalReport& report);

}  // namespace hstr
