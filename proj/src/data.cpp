#include "hstr/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace hstr {

namespace fs = std::filesystem;

void DatasetSpec::validate() const {
  if (scale_factor < 2) throw std::invalid_argument("scale factor must be at least 2");
  if (frame_rate_factor != 2) throw std::invalid_argument("only frame rate factor 2 (triplets) is supported");
  if (crop_size < 16 || crop_size % 16 != 0)
    throw std::invalid_argument("crop size " + std::to_string(crop_size) + " must be a positive multiple of 16");
  if (crop_size % scale_factor != 0)
    throw std::invalid_argument("crop size " + std::to_string(crop_size) + " must be divisible by the scale factor");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
    throw std::invalid_argument("flip probability must lie in [0, 1]");
  if (!(rotation_deg >= 0.0 && rotation_deg < 45.0)) throw std::invalid_argument("rotation range must lie in [0, 45)");
}

Sample make_sample(std::string id, const Frame& prev, const Frame& center, const Frame& next, int factor) {
  if (prev.height != center.height || prev.width != center.width || next.height != center.height ||
      next.width != center.width)
    throw ImageError("triplet " + id + " has frames of different sizes");
  Sample s;
  s.id = std::move(id);
  s.hr_prev = center_crop_divisible(prev, factor);
  s.gt_center = center_crop_divisible(center, factor);
  s.hr_next = center_crop_divisible(next, factor);
  resimulate_lr(s, factor);
  return s;
}

void resimulate_lr(Sample& s, int factor) {
  s.lr_prev = simulate_lr(s.hr_prev, factor);
  s.lr_center = simulate_lr(s.gt_center, factor);
  s.lr_next = simulate_lr(s.hr_next, factor);
}

fs::path index_file(const fs::path& root, Split split) {
  return root / (split == Split::Train ? "tri_trainlist.txt" : "tri_testlist.txt");
}

TripletDataset::TripletDataset(DatasetSpec spec, Logger log) : spec_(std::move(spec)), log_(std::move(log)) {
  spec_.validate();
  fs::path list = index_file(spec_.root, spec_.split);
  std::ifstream is(list);
  if (!is) throw FileNotFound("dataset index not found: " + list.string());
  std::string line;
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) entries_.push_back(line);
  }
}

const std::string& TripletDataset::entry(size_t index) const {
  if (index >= entries_.size())
    throw std::out_of_range("sample index " + std::to_string(index) + " out of range (dataset has " +
                            std::to_string(entries_.size()) + ")");
  return entries_[index];
}

std::optional<Sample> TripletDataset::load(size_t index) const {
  const std::string& id = entry(index);
  fs::path dir = spec_.root / "sequences" / id;
  std::array<Frame, 3> frames;
  for (int i = 0; i < 3; ++i) {
    fs::path p = dir / ("im" + std::to_string(i + 1) + ".png");
    try {
      frames[static_cast<size_t>(i)] = load_frame(p);
    } catch (const ImageError& e) {
      if (log_) log_("skipping sample " + id + ": " + e.what());
      return std::nullopt;
    }
  }
  try {
    return make_sample(id, frames[0], frames[1], frames[2], spec_.scale_factor);
  } catch (const std::exception& e) {
    if (log_) log_("skipping sample " + id + ": " + e.what());
    return std::nullopt;
  }
}

// Augmentation ---------------------------------------------------------------

std::pair<int64_t, int64_t> valid_rotated_size(int64_t w, int64_t h, double angle_deg) {
  const double t = std::abs(angle_deg) * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const double fw = static_cast<double>(w - 1), fh = static_cast<double>(h - 1);
  double k = 1.0;
  if (s > 0.0) k = std::min(fw / (fw * c + fh * s), fh / (fw * s + fh * c));
  // floor(k * (w - 1)) spans a pixel count one larger.
  return {static_cast<int64_t>(std::floor(k * fw + 1e-9)) + 1, static_cast<int64_t>(std::floor(k * fh + 1e-9)) + 1};
}

Geometry draw_geometry(int64_t w, int64_t h, const DatasetSpec& spec, Rng& rng) {
  Geometry g;
  g.angle_deg = rng.uniform(-spec.rotation_deg, spec.rotation_deg);
  auto [vw, vh] = valid_rotated_size(w, h, g.angle_deg);
  if (vw < spec.crop_size || vh < spec.crop_size)
    throw std::invalid_argument("frame " + std::to_string(w) + "x" + std::to_string(h) + " is too small for a " +
                                std::to_string(spec.crop_size) + " crop after rotating " +
                                std::to_string(g.angle_deg) + " degrees");
  g.crop_x = rng.uniform_int(0, vw - spec.crop_size);
  g.crop_y = rng.uniform_int(0, vh - spec.crop_size);
  g.flip = rng.bernoulli(spec.flip_probability);
  return g;
}

Frame apply_geometry(const Frame& frame, const Geometry& g, int64_t crop) {
  auto [vw, vh] = valid_rotated_size(frame.width, frame.height, g.angle_deg);
  if (g.crop_x < 0 || g.crop_y < 0 || g.crop_x + crop > vw || g.crop_y + crop > vh)
    throw std::invalid_argument("crop lies outside the valid rotated region");
  const double t = g.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const double cx = 0.5 * static_cast<double>(frame.width - 1), cy = 0.5 * static_cast<double>(frame.height - 1);
  const int64_t x0 = (frame.width - vw) / 2 + g.crop_x, y0 = (frame.height - vh) / 2 + g.crop_y;
  Frame out(crop, crop);
  for (int64_t i = 0; i < crop; ++i)
    for (int64_t j = 0; j < crop; ++j) {
      const double dx = static_cast<double>(x0 + j) - cx, dy = static_cast<double>(y0 + i) - cy;
      const double sx = std::clamp(cx + c * dx + s * dy, 0.0, static_cast<double>(frame.width - 1));
      const double sy = std::clamp(cy - s * dx + c * dy, 0.0, static_cast<double>(frame.height - 1));
      const int64_t ix = static_cast<int64_t>(sx), iy = static_cast<int64_t>(sy);
      const double fx = sx - static_cast<double>(ix), fy = sy - static_cast<double>(iy);
      const int64_t ix1 = std::min(ix + 1, frame.width - 1), iy1 = std::min(iy + 1, frame.height - 1);
      const int64_t ox = g.flip ? crop - 1 - j : j;
      for (int ch = 0; ch < 3; ++ch) {
        // Weights of exactly 1 and 0 at integer positions keep zero rotation a plain copy.
        double top = frame.at(iy, ix, ch) * (1.0 - fx) + frame.at(iy, ix1, ch) * fx;
        double bottom = frame.at(iy1, ix, ch) * (1.0 - fx) + frame.at(iy1, ix1, ch) * fx;
        double v = top * (1.0 - fy) + bottom * fy;
        out.at(i, ox, ch) = static_cast<float>(v);
      }
    }
  return out;
}

Frame flip_horizontal(const Frame& frame) {
  Frame out(frame.height, frame.width);
  for (int64_t y = 0; y < frame.height; ++y)
    for (int64_t x = 0; x < frame.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, frame.width - 1 - x, c) = frame.at(y, x, c);
  return out;
}

Sample augment(const Sample& sample, const DatasetSpec& spec, Rng& rng) {
  const Geometry g = draw_geometry(sample.gt_center.width, sample.gt_center.height, spec, rng);
  Sample out;
  out.id = sample.id;
  for (auto member : {&Sample::hr_prev, &Sample::gt_center, &Sample::hr_next, &Sample::lr_prev, &Sample::lr_center,
                      &Sample::lr_next}) {
    const Frame& f = sample.*member;
    if (f.height != sample.gt_center.height || f.width != sample.gt_center.width)
      throw ImageError("sample " + sample.id + " has frames of different sizes");
    out.*member = apply_geometry(f, g, spec.crop_size);
  }
  return out;
}

// Synthetic corpus -------------------------------------------------------------

Sample synthetic_sample(uint64_t seed, const SyntheticSpec& spec, std::pair<int, int>* shift) {
  Rng rng(seed);
  // A still pair would make the neighbor mean exact; redraw it.
  int dx = 0, dy = 0;
  while (dx == 0 && dy == 0 && spec.max_shift > 0) {
    dx = static_cast<int>(rng.uniform_int(-spec.max_shift, spec.max_shift));
    dy = static_cast<int>(rng.uniform_int(-spec.max_shift, spec.max_shift));
  }
  if (shift) *shift = {dx, dy};

  struct Disc {
    double x, y, r;
    float color[3];
  };
  // Centers cover the frame plus everything the shifted frames can see.
  const double margin = spec.max_radius + spec.max_shift;
  const double area = (static_cast<double>(spec.width) + 2 * margin) * (static_cast<double>(spec.height) + 2 * margin);
  // Radii log-uniform, so small discs are common and large ones rare.
  const double lo = std::log(spec.min_radius), hi = std::log(spec.max_radius);
  const double mean_r2 = (std::exp(2 * hi) - std::exp(2 * lo)) / (2 * (hi - lo));
  const auto count = static_cast<size_t>(spec.coverage * area / (std::numbers::pi * mean_r2)) + 1;
  float background[3];
  for (float& c : background) c = static_cast<float>(rng.uniform(0.1, 0.9));
  std::vector<Disc> discs(count);
  for (Disc& d : discs) {
    d.x = rng.uniform(-margin, static_cast<double>(spec.width) + margin);
    d.y = rng.uniform(-margin, static_cast<double>(spec.height) + margin);
    d.r = std::exp(rng.uniform(lo, hi));
    for (float& c : d.color) c = static_cast<float>(rng.uniform(0.05, 0.95));
  }

  auto render = [&](int ox, int oy) {
    Frame f(spec.height, spec.width);
    for (int64_t y = 0; y < spec.height; ++y)
      for (int64_t x = 0; x < spec.width; ++x) {
        const double px = static_cast<double>(x + ox), py = static_cast<double>(y + oy);
        double acc[3] = {background[0], background[1], background[2]};
        for (const Disc& d : discs) {
          const double dist = std::hypot(px - d.x, py - d.y);
          // One-pixel linear edge keeps the texture band-limited enough to warp.
          const double alpha = std::clamp(d.r - dist + 0.5, 0.0, 1.0);
          if (alpha == 0.0) continue;
          for (int c = 0; c < 3; ++c) acc[c] += alpha * (d.color[c] - acc[c]);
        }
        for (int c = 0; c < 3; ++c) f.at(y, x, c) = static_cast<float>(acc[c]);
      }
    return f;
  };
  return make_sample("synthetic-" + std::to_string(seed), render(dx, dy), render(0, 0), render(-dx, -dy),
                     spec.factor);
}

void write_synthetic_corpus(const fs::path& root, size_t count, size_t train_count, const SyntheticSpec& spec,
                            uint64_t seed) {
  fs::create_directories(root);
  std::ofstream train(index_file(root, Split::Train)), test(index_file(root, Split::Test));
  if (!train || !test) throw ImageError("cannot write index files under " + root.string());
  for (size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu", i + 1);
    const std::string id = std::string("synthetic/") + name;
    fs::path dir = root / "sequences" / id;
    fs::create_directories(dir);
    Sample s = synthetic_sample(derive_seed(seed, i), spec);
    save_frame(s.hr_prev, dir / "im1.png");
    save_frame(s.gt_center, dir / "im2.png");
    save_frame(s.hr_next, dir / "im3.png");
    (i < train_count ? train : test) << id << '\n';
  }
}

}  // namespace hstr
