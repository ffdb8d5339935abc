#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hstr/optim.hpp"

namespace hstr {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Flat container: string metadata plus named float tensors.
///
/// On disk: "HSTRNET\0", u32 version, u32 meta count, (key, value)*, u32 tensor
/// count, then per tensor name, u32 ndim, u64 dims, little-endian f32 payload.
/// Strings are u32 length + bytes. All integers little-endian.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<TensorRecord> tensors;

  void set_meta(const std::string& key, std::string value);
  /// Throws CheckpointError when absent.
  const std::string& get_meta(const std::string& key) const;
  bool has_meta(const std::string& key) const;
  const TensorRecord* find(const std::string& name) const;
};

/// Writes to a sibling temp file then renames, so an interrupted save never
/// clobbers the previous checkpoint.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters and, when given, optimizer moments (`adam.m.<name>`,
/// `adam.v.<name>`) plus the step counter.
Checkpoint capture(const ParameterSet& params, const Adam* optimizer = nullptr);

/// Copies tensors back into existing parameters. Every parameter must be
/// present with a matching shape. Optimizer state is restored when both the
/// optimizer and its records are present.
void restore(const Checkpoint& ckpt, ParameterSet& params, Adam* optimizer = nullptr);

}  // namespace hstr
