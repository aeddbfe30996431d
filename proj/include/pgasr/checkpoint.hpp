#pragma once

#include <filesystem>
#include <string>

#include "pgasr/model.hpp"

namespace pgasr::model {

struct CheckpointMeta {
  std::string phase;
  int fold_index = -1;
  int epoch = 0;
  double validation_score = 0.0;
};

struct Checkpoint {
  ModelState state;
  CheckpointMeta meta;
};

// Container layout: 8-byte magic "PGASRCKP", uint32 format version,
// uint64 header length, JSON header (config, shapes, metadata), then every
// parameter as raw little-endian float32 in header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pgasr::model
