#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "dcfmn/model.hpp"

namespace dcfmn {

/// Container layout, all integers little-endian:
///   8 bytes   magic "DCFMNCK\0"
///   u32       format version
///   u64       header length L
///   L bytes   UTF-8 JSON header: {"config": {...}, "fused": bool, "meta": {...},
///             "tensors": [{"path", "shape": [n, c, h, w], "offset", "count"}, ...]}
///   rest      float32 payload; offset and count are in elements
inline constexpr char kCheckpointMagic[8] = {'D', 'C', 'F', 'M', 'N', 'C', 'K', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const std::map<std::string, std::string>& meta = {});

/// Throws IoError on truncation or a bad magic, UnsupportedError on an unknown
/// version, ConfigError when the tensors do not match the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Compact JSON object holding every ModelConfig field.
std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

}  // namespace dcfmn
