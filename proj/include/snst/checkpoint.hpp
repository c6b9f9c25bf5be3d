#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "snst/json.hpp"
#include "snst/network.hpp"

namespace snst {

// Generic weight container: a JSON header (metadata plus an array manifest
// with per-array SHA-256) followed by raw little-endian float32 payload.
// Layout is documented in docs/checkpoint.md.
struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

struct WeightContainer {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& require(const std::string& name) const;
};

inline constexpr char kContainerMagic[8] = {'S', 'N', 'S', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kContainerVersion = 1;

void write_container(const WeightContainer& c, const std::filesystem::path& path);
// Throws ErrorKind::integrity on any structural or hash mismatch.
WeightContainer read_container(const std::filesystem::path& path);

void save_checkpoint(const StyleModel& model, const std::filesystem::path& path);
StyleModel load_checkpoint(const std::filesystem::path& path);

// Metadata only (style listing without loading weights into a model).
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace snst
