#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "landmatch/network.hpp"

namespace landmatch {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  std::uint64_t seed = 0;
};

/// Binary container: magic, version, config hash, JSON header (model
/// config, slot names and shapes, metadata), then float32 little-endian
/// weights in slot order. Written atomically via a temporary file.
void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const CheckpointMeta& meta = {});

struct LoadedCheckpoint {
  ModelParams<float> params;
  CheckpointMeta meta;
};

/// Rejects files whose stored hash does not match their config, and, when
/// `expected` is given, files built for a different config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace landmatch
