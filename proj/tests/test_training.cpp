#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "hstr/metrics.hpp"
#include "hstr/training.hpp"

using namespace hstr;
namespace fs = std::filesystem;

namespace {

std::vector<Sample> tiny_corpus(size_t count, int64_t size, uint64_t seed) {
  SyntheticSpec spec;
  spec.height = spec.width = size;
  std::vector<Sample> out;
  for (size_t i = 0; i < count; ++i) out.push_back(synthetic_sample(derive_seed(seed, i), spec));
  return out;
}

ModelConfig tiny_model(uint64_t seed = 0) {
  ModelConfig c;
  c.ifnet.convs_per_block = 1;
  c.seed = seed;
  return c;
}

TrainConfig quick(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch = 2;
  t.augment = false;
  t.seed = 4;
  return t;
}

fs::path temp(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "hstrnet_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string strip_wall(const std::string& line) { return line.substr(0, line.rfind(',')); }

}  // namespace

TEST_CASE("schedule: learning rate drops after the first phase") {
  TrainConfig t;
  CHECK(scheduled_lr(t, 0) == 1e-4);
  CHECK(scheduled_lr(t, 99) == 1e-4);
  CHECK(scheduled_lr(t, 100) == 1e-5);
  CHECK(scheduled_lr(t, 199) == 1e-5);
}

TEST_CASE("train: log lines follow epoch,loss,lr,wall_s and the schedule switches") {
  auto samples = tiny_corpus(3, 16, 1);
  HSTRNet model(tiny_model());
  Adam opt(model.params());
  TrainConfig t = quick(3);
  t.phase1_epochs = 2;
  auto log = train(model, opt, memory_source(samples), DatasetSpec{}, t);
  REQUIRE(log.size() == 3);
  CHECK(log[0].lr == 1e-4);
  CHECK(log[1].lr == 1e-4);
  CHECK(log[2].lr == 1e-5);
  CHECK(opt.step_count() == 6);  // two batches per epoch
  std::string line = format_epoch(log[2]);
  CHECK(line.rfind("3,", 0) == 0);
  std::istringstream is(line);
  std::string field;
  std::vector<std::string> fields;
  while (std::getline(is, field, ',')) fields.push_back(field);
  REQUIRE(fields.size() == 4);
  CHECK(std::stod(fields[1]) == log[2].loss);
  CHECK(std::stod(fields[2]) == 1e-5);
}

TEST_CASE("train: seeded runs produce identical loss logs") {
  auto samples = tiny_corpus(4, 32, 2);
  DatasetSpec aug;
  aug.crop_size = 16;
  auto run = [&] {
    HSTRNet model(tiny_model(7));
    Adam opt(model.params());
    TrainConfig t = quick(2);
    t.augment = true;
    std::string out;
    for (const auto& r : train(model, opt, memory_source(samples), aug, t)) out += strip_wall(format_epoch(r)) + "\n";
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("train: non-finite loss aborts and keeps the last good checkpoint") {
  auto samples = tiny_corpus(2, 16, 3);
  fs::path ckpt = temp("nan_abort.ckpt");
  fs::remove(ckpt);
  HSTRNet model(tiny_model());
  Adam opt(model.params());
  TrainConfig t = quick(1);
  t.checkpoint = ckpt;
  train(model, opt, memory_source(samples), DatasetSpec{}, t);
  REQUIRE(fs::exists(ckpt));
  Checkpoint good = load_checkpoint(ckpt);
  CHECK(good.get_meta("epoch") == "1");
  CHECK(good.get_meta("variant") == "warp");

  samples[1].gt_center.pixels[5] = std::numeric_limits<float>::quiet_NaN();
  t.epochs = 3;
  CHECK_THROWS_AS(train(model, opt, memory_source(samples), DatasetSpec{}, t, 1), NumericalError);
  Checkpoint after = load_checkpoint(ckpt);
  CHECK(after.get_meta("epoch") == "1");
  CHECK(after.tensors[0].data == good.tensors[0].data);
}

TEST_CASE("train: resuming from a checkpoint continues the same run") {
  auto samples = tiny_corpus(2, 16, 5);
  fs::path ckpt = temp("resume.ckpt");
  TrainConfig t = quick(2);
  t.checkpoint = ckpt;
  t.checkpoint_every = 1;

  HSTRNet straight(tiny_model());
  Adam opt_a(straight.params());
  auto full = train(straight, opt_a, memory_source(samples), DatasetSpec{}, t);

  HSTRNet first(tiny_model());
  Adam opt_b(first.params());
  TrainConfig one = t;
  one.epochs = 1;
  train(first, opt_b, memory_source(samples), DatasetSpec{}, one);
  LoadedModel resumed = load_model(ckpt);
  Adam opt_c(resumed.model->params());
  restore(resumed.checkpoint, resumed.model->params(), &opt_c);
  auto rest = train(*resumed.model, opt_c, memory_source(samples), DatasetSpec{}, t,
                    std::stoi(resumed.checkpoint.get_meta("epoch")));
  REQUIRE(rest.size() == 1);
  CHECK(rest[0].loss == full[1].loss);
}

TEST_CASE("train: empty training sets are rejected") {
  std::vector<Sample> none;
  HSTRNet model(tiny_model());
  Adam opt(model.params());
  CHECK_THROWS_AS(train(model, opt, memory_source(none), DatasetSpec{}, quick(1)), std::invalid_argument);
}

TEST_CASE("evaluate: CSV rows and the untrained neighbor mean") {
  auto samples = tiny_corpus(3, 32, 6);
  HSTRNet model(tiny_model());
  EvalReport report = evaluate(model, memory_source(samples));
  REQUIRE(report.records.size() == 3);
  Frame mean = samples[0].hr_prev;
  for (size_t i = 0; i < mean.pixels.size(); ++i) mean.pixels[i] = (samples[0].hr_prev.pixels[i] + samples[0].hr_next.pixels[i]) * 0.5f;
  CHECK(report.records[0].psnr_db == psnr(mean, samples[0].gt_center));
  CHECK(report.records[0].ssim == ssim(mean, samples[0].gt_center));

  std::ostringstream csv;
  write_eval_csv(report, csv);
  std::istringstream lines(csv.str());
  std::string header, row;
  std::getline(lines, header);
  CHECK(header == "sample_id,psnr_db,ssim,ms");
  int rows = 0;
  while (std::getline(lines, row)) {
    CHECK(row.rfind(samples[static_cast<size_t>(rows)].id + ",", 0) == 0);
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("forward_pipeline: output matches the ground-truth size") {
  for (int64_t size : {32, 48}) {
    auto samples = tiny_corpus(1, size, 8);
    HSTRNet model(tiny_model());
    Frame out = forward_pipeline(model, samples[0]);
    CHECK(out.height == size);
    CHECK(out.width == size);
  }
}

TEST_CASE("train: a static scene stays near identity after brief training") {
  // Six identical frames: the neighbor mean is already exact, and training on
  // static data must not drift away from it.
  SyntheticSpec spec;
  spec.height = spec.width = 32;
  Sample moving = synthetic_sample(12, spec);
  std::vector<Sample> samples(2, make_sample("static", moving.gt_center, moving.gt_center, moving.gt_center, 4));
  HSTRNet model(tiny_model(2));
  Adam opt(model.params());
  train(model, opt, memory_source(samples), DatasetSpec{}, quick(20));  // 20 steps
  EvalReport r = evaluate(model, memory_source(samples));
  CHECK(r.mean_psnr > 40.0);
}
