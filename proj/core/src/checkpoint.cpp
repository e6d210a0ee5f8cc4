#include "landmatch/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "landmatch/error.hpp"

namespace landmatch {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kMagic = {'L', 'M', 'C', 'H', 'K', 'P', 'T', '\0'};

template <typename U>
void put(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get(std::istream& in, const fs::path& path) {
  unsigned char b[sizeof(U)];
  in.read(reinterpret_cast<char*>(b), sizeof(U));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(U))) throw IoError(path.string() + ": truncated checkpoint");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const fs::path& path, const ModelParams<float>& params, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["config"] = nlohmann::json::parse(params.config().to_json());
  header["epoch"] = meta.epoch;
  header["seed"] = meta.seed;
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : params.slots()) slots.push_back({{"name", s.name}, {"shape", s.shape}});
  header["slots"] = slots;
  const std::string text = header.dump();

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, params.config().hash());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const float f : params.values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put<std::uint32_t>(out, bits);
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != static_cast<std::streamsize>(magic.size()) || magic != kMagic) {
    throw FormatError(path.string() + ": not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto stored_hash = get<std::uint64_t>(in, path);
  const auto len = get<std::uint32_t>(in, path);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len)) throw IoError(path.string() + ": truncated checkpoint");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt checkpoint header");
  }
  const ModelConfig cfg = ModelConfig::from_json(header.at("config").dump());
  if (cfg.hash() != stored_hash) throw FormatError(path.string() + ": config hash mismatch");
  if (expected && expected->hash() != stored_hash) {
    throw FormatError(path.string() + ": checkpoint was built for a different model config");
  }

  LoadedCheckpoint result{ModelParams<float>(cfg), {}};
  const auto& slots = header.at("slots");
  if (slots.size() != result.params.slots().size()) throw FormatError(path.string() + ": slot count mismatch");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& s = result.params.slots()[i];
    if (slots[i].at("name").get<std::string>() != s.name || slots[i].at("shape").get<std::vector<int>>() != s.shape) {
      throw FormatError(path.string() + ": slot layout mismatch at " + s.name);
    }
  }
  for (auto& f : result.params.values()) {
    const auto bits = get<std::uint32_t>(in, path);
    std::memcpy(&f, &bits, 4);
  }
  result.meta.epoch = header.value("epoch", 0);
  result.meta.seed = header.value("seed", std::uint64_t{0});
  return result;
}

}  // namespace landmatch
