// hstrnet: train, infer, eval, simulate-lr and gradcheck front end.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "hstr/gradcheck.hpp"
#include "hstr/metrics.hpp"
#include "hstr/training.hpp"

namespace fs = std::filesystem;
using namespace hstr;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string data, ckpt, out, log, split = "test";
  uint64_t seed = 0;
  int batch = 8;
  int64_t crop = 128;
  bool deformable = false;
  int epochs = 200;
  int phase1 = 100;
  double lr1 = 1e-4, lr2 = 1e-5;
  int factor = 4;
  bool simulate = false;
  bool resume = false;
  bool no_augment = false;
  int every = 1;
  int convs = 6;
  bool with_float = false;
  std::vector<std::string> inputs;
};

void log_line(const std::string& s) { std::cerr << s << '\n'; }

// Reads an LR frame, upscaling it when it is stored at the low resolution.
Frame load_lr(const std::string& path, const Frame& like, int factor) {
  Frame f = load_frame(path);
  if (f.height == like.height && f.width == like.width) return f;
  if (f.height * factor == like.height && f.width * factor == like.width)
    return bicubic_resize(f, like.height, like.width);
  throw ImageError(path + " is " + std::to_string(f.width) + "x" + std::to_string(f.height) + ", expected " +
                   std::to_string(like.width) + "x" + std::to_string(like.height) + " or 1/" +
                   std::to_string(factor) + " of that");
}

DatasetSpec dataset_spec(const Options& o, Split split) {
  DatasetSpec spec;
  spec.root = o.data;
  spec.split = split;
  spec.scale_factor = o.factor;
  spec.crop_size = o.crop;
  spec.seed = o.seed;
  return spec;
}

int run_train(const Options& o, bool deformable_given) {
  TripletDataset dataset(dataset_spec(o, Split::Train), log_line);
  TrainConfig t;
  t.epochs = o.epochs;
  t.phase1_epochs = o.phase1;
  t.lr_phase1 = o.lr1;
  t.lr_phase2 = o.lr2;
  t.batch = o.batch;
  t.seed = o.seed;
  t.augment = !o.no_augment;
  t.checkpoint = o.ckpt;
  t.checkpoint_every = o.every;
  t.validate();

  std::unique_ptr<HSTRNet> model;
  std::unique_ptr<Adam> opt;
  int start = 0;
  if (o.resume && fs::exists(o.ckpt)) {
    LoadedModel loaded = load_model(o.ckpt, deformable_given ? std::optional(ContextVariant::DeformableOffset) : std::nullopt);
    model = std::move(loaded.model);
    opt = std::make_unique<Adam>(model->params());
    restore(loaded.checkpoint, model->params(), opt.get());
    start = std::stoi(loaded.checkpoint.get_meta("epoch"));
    std::cerr << "resuming " << o.ckpt << " after epoch " << start << '\n';
  } else {
    ModelConfig mc;
    mc.variant = o.deformable ? ContextVariant::DeformableOffset : ContextVariant::FixedWarp;
    mc.ifnet.convs_per_block = o.convs;
    mc.seed = o.seed;
    model = std::make_unique<HSTRNet>(mc);
    opt = std::make_unique<Adam>(model->params());
  }

  std::ofstream log_file;
  if (!o.log.empty()) {
    log_file.open(o.log, start > 0 ? std::ios::app : std::ios::trunc);
    if (!log_file) throw ImageError("cannot write log " + o.log);
    if (start == 0) log_file << kTrainLogHeader << '\n';
  }
  std::cout << kTrainLogHeader << '\n';
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    std::cout << format_epoch(r) << std::endl;
    if (log_file) log_file << format_epoch(r) << std::endl;
  };
  std::cerr << dataset.size() << " training triplets, " << model->params().element_count() << " parameters, "
            << variant_name(model->config().variant) << " context\n";
  train(*model, *opt, dataset_source(dataset), dataset.spec(), t, start, hooks);
  return kOk;
}

int run_infer(const Options& o, bool deformable_given) {
  const size_t want = o.simulate ? 3 : 5;
  if (o.inputs.size() != want)
    throw UsageError(o.simulate ? "infer --simulate takes hr_prev center hr_next"
                                : "infer takes hr_prev hr_next lr_prev lr_center lr_next");
  LoadedModel loaded = load_model(o.ckpt, deformable_given ? std::optional(ContextVariant::DeformableOffset) : std::nullopt);
  Sample s;
  std::optional<Frame> truth;
  if (o.simulate) {
    s = make_sample("input", load_frame(o.inputs[0]), load_frame(o.inputs[1]), load_frame(o.inputs[2]), o.factor);
    truth = s.gt_center;
  } else {
    s.hr_prev = load_frame(o.inputs[0]);
    s.hr_next = load_frame(o.inputs[1]);
    s.lr_prev = load_lr(o.inputs[2], s.hr_prev, o.factor);
    s.lr_center = load_lr(o.inputs[3], s.hr_prev, o.factor);
    s.lr_next = load_lr(o.inputs[4], s.hr_prev, o.factor);
    if (s.hr_next.height != s.hr_prev.height || s.hr_next.width != s.hr_prev.width)
      throw ImageError("HR frames differ in size");
  }
  Frame out = forward_pipeline(*loaded.model, s);
  save_frame(out, o.out);
  std::cout << "wrote " << o.out;
  if (truth) std::printf("  PSNR %.3f dB  SSIM %.5f", psnr(out, *truth), ssim(out, *truth));
  std::cout << '\n';
  return kOk;
}

int run_eval(const Options& o, bool deformable_given) {
  if (o.split != "train" && o.split != "test") throw UsageError("--split must be train or test");
  LoadedModel loaded = load_model(o.ckpt, deformable_given ? std::optional(ContextVariant::DeformableOffset) : std::nullopt);
  TripletDataset dataset(dataset_spec(o, o.split == "train" ? Split::Train : Split::Test), log_line);
  EvalReport report = evaluate(*loaded.model, dataset_source(dataset));
  fs::create_directories(o.out);
  fs::path csv = fs::path(o.out) / "eval.csv";
  std::ofstream os(csv);
  if (!os) throw ImageError("cannot write " + csv.string());
  write_eval_csv(report, os);
  std::cout << summarize(report) << "\nwrote " << csv.string() << '\n';
  return kOk;
}

int run_simulate(const Options& o) {
  std::vector<fs::path> files;
  if (fs::is_directory(o.data)) {
    for (const auto& e : fs::directory_iterator(o.data))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::exists(o.data)) {
    files.push_back(o.data);
  } else {
    throw FileNotFound("input not found: " + o.data);
  }
  if (files.empty()) throw FileNotFound("no PNG files in " + o.data);
  fs::create_directories(o.out);
  for (const auto& f : files) {
    Frame lr = simulate_lr(load_frame(f), o.factor);
    save_frame(lr, fs::path(o.out) / f.filename());
    std::cout << f.filename().string() << " -> " << lr.width << "x" << lr.height << '\n';
  }
  return kOk;
}

template <typename T>
bool report_gradchecks(const char* label) {
  bool ok = true;
  std::printf("%s\n", label);
  for (const auto& r : run_primitive_gradchecks<T>()) {
    std::printf("  %-20s probes %3d  max rel err %.3e  %s\n", r.name.c_str(), r.probes, r.max_rel_error,
                r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok;
}

int run_gradcheck(const Options& o) {
  bool ok = report_gradchecks<double>("double precision (tolerance 1e-3, floor 1e-5):");
  if (o.with_float) report_gradchecks<float>("single precision (informational, same tolerances):");
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-camera video frame reconstruction"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_config("--config", "", "INI file, one [subcommand] section of key=value; flags win");
  Options o;

  auto* train = app.add_subcommand("train", "train on a triplet corpus");
  auto* infer = app.add_subcommand("infer", "reconstruct one center frame");
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM over a corpus split");
  auto* sim = app.add_subcommand("simulate-lr", "write HR-sized low-detail copies of PNG frames");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every primitive");


  for (auto* sub : {train, infer, eval}) {
    sub->add_option("--ckpt", o.ckpt, "checkpoint path")->required();
    sub->add_flag("--deformable", o.deformable, "offset-estimator context variant");
    sub->add_option("--factor", o.factor, "LR scale factor")->check(CLI::Range(2, 16));
  }
  sim->add_option("--factor", o.factor, "LR scale factor")->check(CLI::Range(2, 16));
  for (auto* sub : {train, eval}) {
    sub->add_option("--data", o.data, "corpus root")->required();
    sub->add_option("--crop", o.crop, "crop size (multiple of 16)");
    sub->add_option("--seed", o.seed, "random seed");
  }
  train->add_option("--batch", o.batch, "batch size")->check(CLI::PositiveNumber);
  train->add_option("--epochs", o.epochs, "total epochs")->check(CLI::PositiveNumber);
  train->add_option("--phase1", o.phase1, "epochs at --lr1 before switching to --lr2")->check(CLI::NonNegativeNumber);
  train->add_option("--lr1", o.lr1, "first-phase learning rate")->check(CLI::PositiveNumber);
  train->add_option("--lr2", o.lr2, "second-phase learning rate")->check(CLI::PositiveNumber);
  train->add_option("--out", o.log, "training log file (epoch,loss,lr,wall_s)");
  train->add_option("--every", o.every, "checkpoint every N epochs")->check(CLI::PositiveNumber);
  train->add_option("--convs", o.convs, "convolutions per flow block")->check(CLI::PositiveNumber);
  train->add_flag("--resume", o.resume, "continue from --ckpt when it exists");
  train->add_flag("--no-augment", o.no_augment, "skip rotation, crop and flip");

  infer->add_option("frames", o.inputs, "hr_prev hr_next lr_prev lr_center lr_next (or hr_prev center hr_next)")
      ->required();
  infer->add_option("--out", o.out, "output PNG")->required();
  infer->add_flag("--simulate", o.simulate, "simulate the LR side from hr_prev, center, hr_next");

  eval->add_option("--out", o.out, "directory for eval.csv")->required();
  eval->add_option("--split", o.split, "train or test")->check(CLI::IsMember({"train", "test"}));

  sim->add_option("--data", o.data, "PNG file or directory")->required();
  sim->add_option("--out", o.out, "output directory")->required();

  grad->add_flag("--float", o.with_float, "also report the float kernels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    // Without --deformable the checkpoint decides; with it, they must agree.
    if (train->parsed()) return run_train(o, o.deformable);
    if (infer->parsed()) return run_infer(o, o.deformable);
    if (eval->parsed()) return run_eval(o, o.deformable);
    if (sim->parsed()) return run_simulate(o);
    if (grad->parsed()) return run_gradcheck(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    if (!o.ckpt.empty() && fs::exists(o.ckpt)) std::cerr << "last good checkpoint kept at " << o.ckpt << '\n';
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    // Files, images, checkpoints, shapes.
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
