#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "landmatch/baseline.hpp"
#include "landmatch/evaluation.hpp"
#include "landmatch/pipeline.hpp"

namespace landmatch {

struct RunConfig {
  std::string name = "default";
  std::string output_dir = "runs";
  std::string data_dir = "data/textures";
  std::string pairs_dir = "data/pairs";
  int jobs = 0;  // 0: numeric_threads()

  TrainConfig train;

  double thresh_landmark = 0.5;
  int max_candidates = 0;

  DogParams dog;
  double ratio = 0.75;

  int texture_count = 64;
  int texture_size = 96;
  std::vector<TransformFamily> pair_families{TransformFamily::brightness, TransformFamily::affine,
                                             TransformFamily::elastic};
  int pairs_per_family = 10;
  std::vector<double> curve_thresholds_mm = default_curve_thresholds();

  std::filesystem::path run_dir() const { return std::filesystem::path(output_dir) / name; }
  InferenceOptions inference_options() const;
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses YAML text. Missing keys keep their defaults; unknown keys and
/// type mismatches raise ConfigError naming the offending field path.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Emits every field, so parse_config_text(to_yaml(c)) == c.
std::string to_yaml(const RunConfig& cfg);

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<double> thresh_landmark;
  std::optional<double> m_pos;
  std::optional<double> m_neg;
  std::optional<int> k;
  std::optional<int> cell_px;
  std::optional<int> epochs;
  std::optional<std::string> output_dir;
};

void apply_overrides(RunConfig& cfg, const ConfigOverrides& o);

}  // namespace landmatch
