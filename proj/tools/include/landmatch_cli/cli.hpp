#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "landmatch/image.hpp"
#include "landmatch/transforms.hpp"

namespace landmatch::cli {

enum ExitCode : int { kOk = 0, kUsageError = 1, kDataError = 2, kNumericError = 3 };

/// One synthetic evaluation pair as stored on disk.
struct PairRecord {
  std::string id;
  std::string family;
  GrayImage reference;
  GrayImage target;
  BinaryMask reference_mask;
  BinaryMask target_mask;
  Transform transform;
};

inline constexpr const char* kPairFiles[] = {"reference.png", "target.png", "reference_mask.png", "target_mask.png",
                                             "transform.json"};

void save_pair(const std::filesystem::path& dir, const PairRecord& pair);
/// Empty when a required file is missing.
std::optional<PairRecord> load_pair(const std::filesystem::path& dir);

/// Sorted sub-directories of `root`; partial ones are reported to `err`
/// and skipped.
std::vector<PairRecord> load_pairs(const std::filesystem::path& root, std::ostream& err, int* skipped = nullptr);

/// Images (png, pgm, raw) in `dir`, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Parses `args` (without the program name) and runs the subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace landmatch::cli
