#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hstr/imageops.hpp"
#include "hstr/nn.hpp"

namespace hstr {

enum class Split { Train, Test };

struct DatasetSpec {
  std::filesystem::path root;
  Split split = Split::Train;
  int scale_factor = 4;
  int frame_rate_factor = 2;  // only triplets (p = 2) are supported
  int64_t crop_size = 128;
  double rotation_deg = 10.0;
  double flip_probability = 0.2;
  uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Three HR frames and their simulated HR-sized LR counterparts.
struct Sample {
  std::string id;
  Frame hr_prev, gt_center, hr_next;
  Frame lr_prev, lr_center, lr_next;
};

/// Crops the HR frames to a factor-divisible size and simulates the LR side.
Sample make_sample(std::string id, const Frame& prev, const Frame& center, const Frame& next, int factor);

/// Recomputes the LR frames from the (augmented) HR frames.
void resimulate_lr(Sample& sample, int factor);

/// Vimeo-style triplet corpus: root/sequences/<clip>/<triplet>/im{1,2,3}.png
/// listed one per line in tri_trainlist.txt or tri_testlist.txt.
class TripletDataset {
 public:
  using Logger = std::function<void(const std::string&)>;

  explicit TripletDataset(DatasetSpec spec, Logger log = {});

  size_t size() const { return entries_.size(); }
  const std::string& entry(size_t index) const;
  const DatasetSpec& spec() const { return spec_; }

  /// nullopt (with a logged path) when a frame is missing or unreadable.
  /// Out-of-range indices throw std::out_of_range.
  std::optional<Sample> load(size_t index) const;

 private:
  DatasetSpec spec_;
  Logger log_;
  std::vector<std::string> entries_;
};

std::filesystem::path index_file(const std::filesystem::path& root, Split split);

// Augmentation ---------------------------------------------------------------

struct Geometry {
  double angle_deg = 0.0;
  int64_t crop_x = 0, crop_y = 0;  // inside the valid rotated rectangle
  bool flip = false;
};

/// Largest centered rectangle, with the frame's aspect ratio, that stays
/// inside a w x h frame rotated by angle_deg. Returns {width, height}.
std::pair<int64_t, int64_t> valid_rotated_size(int64_t w, int64_t h, double angle_deg);

/// Draws rotation, crop origin, then flip. Throws std::invalid_argument
/// when the valid rectangle is smaller than the crop.
Geometry draw_geometry(int64_t w, int64_t h, const DatasetSpec& spec, Rng& rng);

/// Rotates about the frame center (bilinear), crops crop x crop from the
/// valid rectangle and optionally mirrors horizontally.
Frame apply_geometry(const Frame& frame, const Geometry& g, int64_t crop);

/// One shared geometry applied to all six frames. LR frames are transformed
/// too; call resimulate_lr afterwards to rebuild them from the HR side.
Sample augment(const Sample& sample, const DatasetSpec& spec, Rng& rng);

Frame flip_horizontal(const Frame& frame);

// Synthetic corpus -------------------------------------------------------------

struct SyntheticSpec {
  int64_t height = 128;
  int64_t width = 128;
  int max_shift = 3;
  int factor = 4;
  double min_radius = 4.0;  // pixels
  double max_radius = 24.0;
  /// Mean number of discs covering a pixel.
  double coverage = 3.0;
};

/// Dead-leaves texture (overlapping soft-edged discs) translating by an
/// nonzero integer (dx, dy) per frame with |dx|, |dy| <= max_shift:
/// prev(p) = T(p + v), next(p) = T(p - v). shift receives v when non-null.
Sample synthetic_sample(uint64_t seed, const SyntheticSpec& spec, std::pair<int, int>* shift = nullptr);

/// Writes count synthetic triplets in the triplet corpus layout, listing the
/// first train_count in the train index and the rest in the test index.
void write_synthetic_corpus(const std::filesystem::path& root, size_t count, size_t train_count,
                            const SyntheticSpec& spec, uint64_t seed);

}  // namespace hstr
