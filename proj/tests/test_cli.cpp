#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hstr/data.hpp"
#include "hstr/imageops.hpp"

using namespace hstr;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "hstrnet_cli";

struct Run {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Run hstrnet(const std::string& args) {
  fs::create_directories(kWork);
  const fs::path out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  std::string cmd = std::string(HSTRNET_BIN) + " " + args + " >" + out.string() + " 2>" + err.string();
  int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Small corpus shared by the train/eval/infer cases: 32x32 frames, 3 train, 2 test.
fs::path corpus() {
  static const fs::path root = [] {
    fs::path r = kWork / "corpus";
    fs::remove_all(r);
    SyntheticSpec s;
    s.height = s.width = 32;
    s.max_radius = 8;
    write_synthetic_corpus(r, 5, 3, s, 4);
    return r;
  }();
  return root;
}

std::string train_args(const fs::path& ckpt, const fs::path& log) {
  return "train --data " + q(corpus()) + " --ckpt " + q(ckpt) + " --out " + q(log) +
         " --crop 32 --epochs 2 --batch 2 --convs 1 --no-augment --seed 3";
}

std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("cli: unknown subcommand exits 1 with usage") {
  Run r = hstrnet("frobnicate");
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(hstrnet("").code == 1);
}

TEST_CASE("cli: simulate-lr keeps the HR size") {
  fs::create_directories(kWork / "sim_in");
  Frame f(256, 448);
  Rng rng(1);
  for (float& v : f.pixels) v = static_cast<float>(rng.uniform());
  save_frame(f, kWork / "sim_in" / "frame.png");
  Run r = hstrnet("simulate-lr --factor 4 --data " + q(kWork / "sim_in" / "frame.png") + " --out " + q(kWork / "sim_out"));
  REQUIRE(r.code == 0);
  Frame lr = load_frame(kWork / "sim_out" / "frame.png");
  CHECK(lr.width == 448);
  CHECK(lr.height == 256);

  // Same input, same bytes.
  std::string first = slurp(kWork / "sim_out" / "frame.png");
  REQUIRE(hstrnet("simulate-lr --data " + q(kWork / "sim_in") + " --out " + q(kWork / "sim_out")).code == 0);
  CHECK(slurp(kWork / "sim_out" / "frame.png") == first);

  CHECK(hstrnet("simulate-lr --data " + q(kWork / "missing.png") + " --out " + q(kWork / "sim_out")).code == 2);
  CHECK(hstrnet("simulate-lr --factor 1 --data " + q(kWork / "sim_in") + " --out " + q(kWork / "sim_out")).code == 1);
}

TEST_CASE("cli: gradcheck passes") {
  Run r = hstrnet("gradcheck");
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("deformable_conv2d") != std::string::npos);
}

TEST_CASE("cli: train, eval and infer round trip") {
  const fs::path ckpt = kWork / "model.ckpt", log = kWork / "train.log";
  fs::remove(ckpt);
  Run r = hstrnet(train_args(ckpt, log));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto lines = data_lines(slurp(log));
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "epoch,loss,lr,wall_s");
  CHECK(lines[1].rfind("1,", 0) == 0);
  CHECK(fs::exists(ckpt));

  // Retraining with the same seed reproduces the checkpoint byte for byte.
  const std::string first = slurp(ckpt);
  REQUIRE(hstrnet(train_args(ckpt, kWork / "train2.log")).code == 0);
  CHECK(slurp(ckpt) == first);

  r = hstrnet("eval --data " + q(corpus()) + " --ckpt " + q(ckpt) + " --crop 32 --out " + q(kWork / "eval"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto csv = data_lines(slurp(kWork / "eval" / "eval.csv"));
  REQUIRE(csv.size() == 3);  // header + 2 test triplets
  CHECK(csv[0] == "sample_id,psnr_db,ssim,ms");

  const fs::path seq = corpus() / "sequences" / "synthetic" / "00001";
  const std::string frames = q(seq / "im1.png") + " " + q(seq / "im2.png") + " " + q(seq / "im3.png");
  r = hstrnet("infer --simulate --ckpt " + q(ckpt) + " --out " + q(kWork / "pred.png") + " " + frames);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("PSNR") != std::string::npos);
  Frame pred = load_frame(kWork / "pred.png");
  CHECK(pred.width == 32);
  CHECK(pred.height == 32);

  // Wrong frame count is a usage error; a variant mismatch is a data error.
  CHECK(hstrnet("infer --ckpt " + q(ckpt) + " --out " + q(kWork / "pred.png") + " " + frames).code == 1);
  Run mismatch = hstrnet("infer --simulate --deformable --ckpt " + q(ckpt) + " --out " + q(kWork / "p2.png") + " " + frames);
  CHECK(mismatch.code == 2);
  CHECK(mismatch.err.find("deformable") != std::string::npos);
  CHECK(hstrnet("eval --data " + q(corpus()) + " --ckpt " + q(kWork / "nope.ckpt") + " --out " + q(kWork / "eval")).code == 2);
}

TEST_CASE("cli: config file supplies options and flags override it") {
  fs::create_directories(kWork);
  const fs::path ini = kWork / "run.ini";
  {
    std::ofstream os(ini);
    os << "[simulate-lr]\nfactor=1\n";
  }
  const std::string tail = " simulate-lr --data " + q(kWork / "sim_in") + " --out " + q(kWork / "sim_cfg");
  fs::create_directories(kWork / "sim_in");
  save_frame(Frame(32, 48, 0.5f), kWork / "sim_in" / "frame.png");
  CHECK(hstrnet("--config " + q(ini) + tail).code == 1);  // factor 1 from the file is rejected
  CHECK(hstrnet("--config " + q(ini) + tail + " --factor 4").code == 0);
}
