#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "hstr/data.hpp"

using namespace hstr;
namespace fs = std::filesystem;

namespace {

Frame noise_frame(int64_t h, int64_t w, uint64_t seed) {
  Frame f(h, w);
  Rng rng(seed);
  for (float& v : f.pixels) v = static_cast<float>(rng.uniform());
  return f;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "hstrnet_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

DatasetSpec small_spec(const fs::path& root) {
  DatasetSpec spec;
  spec.root = root;
  spec.crop_size = 32;
  return spec;
}

}  // namespace

TEST_CASE("make_sample: LR frames are the simulated HR frames") {
  Frame p = noise_frame(34, 50, 1), c = noise_frame(34, 50, 2), n = noise_frame(34, 50, 3);
  Sample s = make_sample("x", p, c, n, 4);
  CHECK(s.gt_center.height == 32);
  CHECK(s.gt_center.width == 48);
  CHECK(s.lr_center == simulate_lr(s.gt_center, 4));
  CHECK(s.lr_prev == simulate_lr(s.hr_prev, 4));
  CHECK(s.lr_next == simulate_lr(s.hr_next, 4));
  for (const Frame* f : {&s.hr_prev, &s.hr_next, &s.lr_prev, &s.lr_center, &s.lr_next}) {
    CHECK(f->height == 32);
    CHECK(f->width == 48);
  }
  CHECK_THROWS_AS(make_sample("bad", p, c, noise_frame(34, 48, 4), 4), ImageError);
}

TEST_CASE("dataset: loads triplets deterministically and skips broken ones") {
  fs::path root = fresh_dir("corpus");
  SyntheticSpec syn;
  syn.height = 32;
  syn.width = 48;
  write_synthetic_corpus(root, 3, 2, syn, 9);

  std::vector<std::string> logged;
  TripletDataset train(small_spec(root), [&](const std::string& m) { logged.push_back(m); });
  REQUIRE(train.size() == 2);
  auto a = train.load(1), b = train.load(1);
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->gt_center == b->gt_center);
  CHECK(a->lr_next == b->lr_next);
  CHECK(a->gt_center.width == 48);
  CHECK(a->lr_center == simulate_lr(a->gt_center, 4));

  DatasetSpec test_spec = small_spec(root);
  test_spec.split = Split::Test;
  CHECK(TripletDataset(test_spec).size() == 1);

  fs::remove(root / "sequences" / train.entry(0) / "im3.png");
  CHECK_FALSE(train.load(0).has_value());
  REQUIRE(logged.size() == 1);
  CHECK(logged[0].find("im3.png") != std::string::npos);
  CHECK_THROWS_AS(train.load(2), std::out_of_range);
}

TEST_CASE("dataset: missing index and invalid specs are rejected") {
  CHECK_THROWS_AS(TripletDataset(small_spec(fresh_dir("empty"))), FileNotFound);
  DatasetSpec spec;
  spec.crop_size = 120;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.crop_size = 128;
  spec.scale_factor = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.scale_factor = 4;
  spec.flip_probability = 1.5;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("augment: zero rotation at the origin without flip is plain extraction") {
  Frame f = noise_frame(256, 448, 5);
  Frame out = apply_geometry(f, {0.0, 0, 0, false}, 128);
  bool same = true;
  for (int64_t y = 0; y < 128; ++y)
    for (int64_t x = 0; x < 128; ++x)
      for (int c = 0; c < 3; ++c) same = same && out.at(y, x, c) == f.at(y, x, c);
  CHECK(same);
  Frame shifted = apply_geometry(f, {0.0, 7, 3, false}, 128);
  CHECK(shifted.at(0, 0, 1) == f.at(3, 7, 1));
}

TEST_CASE("augment: flipping twice restores the crop") {
  Frame f = noise_frame(256, 448, 6);
  Geometry g{4.5, 20, 11, false};
  Frame plain = apply_geometry(f, g, 128);
  g.flip = true;
  CHECK(flip_horizontal(apply_geometry(f, g, 128)) == plain);
}

TEST_CASE("augment: outputs are always 128x128 and frames stay consistent") {
  Frame f = noise_frame(256, 448, 7);
  Sample s{"same", f, f, f, f, f, f};
  DatasetSpec spec;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    Sample out = augment(s, spec, rng);
    CHECK(out.gt_center.height == 128);
    CHECK(out.gt_center.width == 128);
    CHECK(out.hr_prev == out.gt_center);
    CHECK(out.lr_next == out.gt_center);
  }
}

TEST_CASE("augment: flip frequency over 10000 draws") {
  DatasetSpec spec;
  Rng rng(2024);
  int flips = 0;
  for (int i = 0; i < 10000; ++i) flips += draw_geometry(448, 256, spec, rng).flip;
  CHECK(flips / 10000.0 == doctest::Approx(0.2).epsilon(0.1));
}

TEST_CASE("augment: seeded streams reproduce and rotations stay in range") {
  DatasetSpec spec;
  Rng a(3), b(3);
  for (int i = 0; i < 100; ++i) {
    Geometry ga = draw_geometry(448, 256, spec, a), gb = draw_geometry(448, 256, spec, b);
    CHECK(ga.angle_deg == gb.angle_deg);
    CHECK(ga.crop_x == gb.crop_x);
    CHECK(ga.crop_y == gb.crop_y);
    CHECK(ga.flip == gb.flip);
    CHECK(std::abs(ga.angle_deg) <= 10.0);
  }
}

TEST_CASE("augment: valid rectangle stays inside the rotated frame") {
  auto [w0, h0] = valid_rotated_size(448, 256, 0.0);
  CHECK(w0 == 448);
  CHECK(h0 == 256);
  for (double deg : {-10.0, -3.0, 6.5, 10.0}) {
    auto [w, h] = valid_rotated_size(448, 256, deg);
    const double t = deg * 3.14159265358979 / 180.0;
    const double cx = 223.5, cy = 127.5;
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0}) {
        const double dx = sx * (w - 1) / 2.0, dy = sy * (h - 1) / 2.0;
        const double px = cx + std::cos(t) * dx + std::sin(t) * dy, py = cy - std::sin(t) * dx + std::cos(t) * dy;
        CHECK(px >= -1e-6);
        CHECK(px <= 447 + 1e-6);
        CHECK(py >= -1e-6);
        CHECK(py <= 255 + 1e-6);
      }
  }
  DatasetSpec spec;
  Rng rng(1);
  CHECK_THROWS_AS(draw_geometry(130, 130, spec, rng), std::invalid_argument);
}

TEST_CASE("synthetic: neighbors are exact integer translations of the center") {
  SyntheticSpec spec;
  spec.height = spec.width = 64;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    std::pair<int, int> v;
    Sample s = synthetic_sample(seed, spec, &v);
    CHECK(std::abs(v.first) <= 3);
    CHECK(std::abs(v.second) <= 3);
    const int dx = v.first, dy = v.second;
    bool ok = true;
    for (int64_t y = 4; y < 60; ++y)
      for (int64_t x = 4; x < 60; ++x)
        for (int c = 0; c < 3; ++c)
          ok = ok && s.hr_prev.at(y - dy, x - dx, c) == s.gt_center.at(y, x, c) &&
               s.hr_next.at(y + dy, x + dx, c) == s.gt_center.at(y, x, c);
    CHECK(ok);
    for (float p : s.gt_center.pixels) REQUIRE((p >= 0.0f && p <= 1.0f));
  }
  CHECK(synthetic_sample(1, spec).gt_center == synthetic_sample(1, spec).gt_center);
}
