#include "hstr/training.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "hstr/metrics.hpp"

namespace hstr {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Shortest text that reads back to the same double.
std::string exact(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::vector<size_t> epoch_order(size_t count, uint64_t seed, int epoch, bool shuffle) {
  std::vector<size_t> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = i;
  if (!shuffle) return order;
  Rng rng(derive_seed(seed, 0x5eed0000ull + static_cast<uint64_t>(epoch)));
  for (size_t i = count; i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  return order;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (phase1_epochs < 0) throw std::invalid_argument("phase-1 epochs must not be negative");
  if (batch < 1) throw std::invalid_argument("batch must be at least 1");
  if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0)) throw std::invalid_argument("learning rates must be positive");
  if (checkpoint_every < 1) throw std::invalid_argument("checkpoint cadence must be at least 1");
}

double scheduled_lr(const TrainConfig& config, int epoch) {
  return epoch < config.phase1_epochs ? config.lr_phase1 : config.lr_phase2;
}

std::string format_epoch(const EpochRecord& r) {
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", r.wall_s);
  return std::to_string(r.epoch) + "," + exact(r.loss) + "," + exact(r.lr) + "," + wall;
}

SampleSource dataset_source(const TripletDataset& dataset) {
  return {dataset.size(), [&dataset](size_t i) { return dataset.load(i); }};
}

SampleSource memory_source(const std::vector<Sample>& samples) {
  return {samples.size(), [&samples](size_t i) { return std::optional<Sample>(samples.at(i)); }};
}

ModelInputs make_inputs(const std::vector<const Sample*>& batch) {
  auto stack = [&](Frame Sample::*member) {
    std::vector<const Frame*> frames;
    for (const Sample* s : batch) frames.push_back(&(s->*member));
    return frames_to_array(frames);
  };
  return {stack(&Sample::hr_prev), stack(&Sample::hr_next), stack(&Sample::lr_prev), stack(&Sample::lr_center),
          stack(&Sample::lr_next)};
}

DiffArray make_targets(const std::vector<const Sample*>& batch) {
  std::vector<const Frame*> frames;
  for (const Sample* s : batch) frames.push_back(&s->gt_center);
  return frames_to_array(frames);
}

Checkpoint make_checkpoint(const HSTRNet& model, const Adam* optimizer, int epoch) {
  Checkpoint ckpt = capture(model.params(), optimizer);
  model.describe(ckpt);
  ckpt.set_meta("epoch", std::to_string(epoch));
  return ckpt;
}

std::vector<EpochRecord> train(HSTRNet& model, Adam& optimizer, const SampleSource& source,
                               const DatasetSpec& augmentation, const TrainConfig& config, int start_epoch,
                               const TrainHooks& hooks) {
  config.validate();
  if (source.count == 0) throw std::invalid_argument("training set is empty");
  if (config.augment) augmentation.validate();

  std::vector<EpochRecord> log;
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    optimizer.set_lr(scheduled_lr(config, epoch));
    const std::vector<size_t> order = epoch_order(source.count, config.seed, epoch, config.shuffle);

    double loss_sum = 0.0;
    size_t seen = 0;
    int step = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(config.batch)) {
      std::vector<Sample> batch;
      for (size_t i = begin; i < std::min(order.size(), begin + static_cast<size_t>(config.batch)); ++i) {
        std::optional<Sample> s = source.load(order[i]);
        if (!s) continue;
        if (config.augment) {
          // Stream depends only on (seed, epoch, index), not on scheduling.
          Rng rng(derive_seed(derive_seed(config.seed, static_cast<uint64_t>(epoch)), order[i]));
          s = augment(*s, augmentation, rng);
          resimulate_lr(*s, augmentation.scale_factor);
        }
        batch.push_back(std::move(*s));
      }
      if (batch.empty()) continue;
      std::vector<const Sample*> ptrs;
      for (const Sample& s : batch) ptrs.push_back(&s);

      model.params().zero_grad();
      DiffArray loss = l1_loss(model.forward(make_inputs(ptrs)).prediction, make_targets(ptrs));
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(step + 1));
      loss.backward();
      optimizer.step();

      loss_sum += value * static_cast<double>(batch.size());
      seen += batch.size();
      if (hooks.on_step) hooks.on_step(epoch + 1, step, value);
      ++step;
    }
    if (seen == 0) throw std::runtime_error("epoch " + std::to_string(epoch + 1) + " loaded no samples");

    EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(seen), optimizer.lr(), seconds_since(t0)};
    if (!config.checkpoint.empty() && (rec.epoch % config.checkpoint_every == 0 || rec.epoch == config.epochs))
      save_checkpoint(make_checkpoint(model, &optimizer, rec.epoch), config.checkpoint);
    log.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return log;
}

LoadedModel load_model(const std::filesystem::path& path, std::optional<ContextVariant> expected) {
  LoadedModel out;
  out.checkpoint = load_checkpoint(path);
  ModelConfig config = HSTRNet::config_from(out.checkpoint);
  if (expected && *expected != config.variant)
    throw CheckpointError(path.string() + " holds a " + variant_name(config.variant) + " model, but " +
                          variant_name(*expected) + " was requested");
  out.model = std::make_unique<HSTRNet>(config);
  restore(out.checkpoint, out.model->params());
  return out;
}

// Evaluation ------------------------------------------------------------------

Frame forward_pipeline(const HSTRNet& model, const Sample& sample) {
  NoGradGuard guard;
  return array_to_frame(model.forward(make_inputs({&sample})).prediction, 0, true);
}

EvalReport evaluate(const HSTRNet& model, const SampleSource& source) {
  EvalReport report;
  for (size_t i = 0; i < source.count; ++i) {
    std::optional<Sample> s = source.load(i);
    if (!s) continue;
    const auto t0 = Clock::now();
    Frame pred = forward_pipeline(model, *s);
    const double ms = 1000.0 * seconds_since(t0);
    report.records.push_back({s->id, psnr(pred, s->gt_center), ssim(pred, s->gt_center), ms});
  }
  if (report.records.empty()) throw std::runtime_error("evaluation loaded no samples");
  for (const auto& r : report.records) {
    report.mean_psnr += r.psnr_db;
    report.mean_ssim += r.ssim;
    report.mean_ms += r.ms;
  }
  const double n = static_cast<double>(report.records.size());
  report.mean_psnr /= n;
  report.mean_ssim /= n;
  report.mean_ms /= n;
  return report;
}

void write_eval_csv(const EvalReport& report, std::ostream& os) {
  os << kEvalCsvHeader << '\n';
  char buf[128];
  for (const auto& r : report.records) {
    std::snprintf(buf, sizeof buf, ",%.4f,%.6f,%.2f", r.psnr_db, r.ssim, r.ms);
    os << r.id << buf << '\n';
  }
}

std::string summarize(const EvalReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu samples  PSNR %.3f dB  SSIM %.5f  %.1f ms/frame", report.records.size(),
                report.mean_psnr, report.mean_ssim, report.mean_ms);
  return buf;
}

}  // namespace hstr
