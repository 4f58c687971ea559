#include "dcfmn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"

namespace dcfmn {

namespace {

using nlohmann::json;

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

const char* precision_name(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

json config_json(const ModelConfig& c) {
  return json{{"scale", c.scale},
              {"channels", c.channels},
              {"num_blocks", c.num_blocks},
              {"chunk_targets", c.chunk_targets},
              {"lfem_branches", c.lfem_branches},
              {"precision", precision_name(c.precision)},
              {"variants",
               {{"dsmu_plain3x3", c.variants.dsmu_plain3x3},
                {"lfem_without_se", c.variants.lfem_without_se},
                {"lfem_without_self_residual", c.variants.lfem_without_self_residual}}}};
}

ModelConfig config_from(const json& j) {
  try {
    ModelConfig c;
    c.scale = j.at("scale").get<int>();
    c.channels = j.at("channels").get<int>();
    c.num_blocks = j.at("num_blocks").get<int>();
    c.chunk_targets = j.at("chunk_targets").get<std::array<int, 4>>();
    c.lfem_branches = j.at("lfem_branches").get<int>();
    const std::string p = j.at("precision").get<std::string>();
    if (p == "f32") {
      c.precision = Precision::f32;
    } else if (p == "f64") {
      c.precision = Precision::f64;
    } else {
      throw ConfigError("unknown precision '" + p + "'");
    }
    const json& v = j.at("variants");
    c.variants.dsmu_plain3x3 = v.at("dsmu_plain3x3").get<bool>();
    c.variants.lfem_without_se = v.at("lfem_without_se").get<bool>();
    c.variants.lfem_without_self_residual = v.at("lfem_without_self_residual").get<bool>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  return config_from(j);
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const std::map<std::string, std::string>& meta) {
  validate_model(model);
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : model.params) {
    const Shape4& s = t.shape();
    tensors.push_back(json{{"path", name},
                           {"shape", {s.n, s.c, s.h, s.w}},
                           {"offset", offset},
                           {"count", t.size()}});
    offset += t.size();
  }
  const json header{{"config", config_json(model.config)},
                    {"fused", model.fused},
                    {"meta", meta},
                    {"tensors", tensors}};
  const std::string text = header.dump();

  std::string blob(kCheckpointMagic, sizeof kCheckpointMagic);
  put_le<std::uint32_t>(blob, kCheckpointVersion);
  put_le<std::uint64_t>(blob, text.size());
  blob += text;
  blob.reserve(blob.size() + offset * 4);
  for (const auto& [name, t] : model.params) {
    for (float v : t.values()) put_le<std::uint32_t>(blob, std::bit_cast<std::uint32_t>(v));
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  constexpr std::size_t kPrefix = sizeof kCheckpointMagic + 4 + 8;
  if (bytes.size() < kPrefix) throw IoError(path.string() + ": truncated checkpoint");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw IoError(path.string() + ": not a checkpoint");
  }
  const auto version = get_le<std::uint32_t>(bytes.data() + 8);
  if (version != kCheckpointVersion) {
    throw UnsupportedError(path.string() + ": checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 12);
  if (header_len > bytes.size() - kPrefix) throw IoError(path.string() + ": truncated header");

  json header;
  try {
    header = json::parse(bytes.begin() + kPrefix,
                         bytes.begin() + static_cast<std::ptrdiff_t>(kPrefix + header_len));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad header: " + e.what());
  }

  const unsigned char* payload = bytes.data() + kPrefix + header_len;
  const std::size_t payload_elems = (bytes.size() - kPrefix - header_len) / 4;
  Checkpoint ck;
  try {
    ck.model.config = config_from(header.at("config"));
    ck.model.fused = header.at("fused").get<bool>();
    ck.meta = header.at("meta").get<std::map<std::string, std::string>>();
    for (const json& t : header.at("tensors")) {
      const auto shape = t.at("shape").get<std::array<int, 4>>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto count = t.at("count").get<std::uint64_t>();
      const Shape4 s{shape[0], shape[1], shape[2], shape[3]};
      if (count != s.numel()) throw ConfigError("tensor count does not match its extents");
      if (offset > payload_elems || count > payload_elems - offset) {
        throw IoError(path.string() + ": truncated payload");
      }
      std::vector<float> values(count);
      for (std::size_t i = 0; i < count; ++i) {
        values[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload + 4 * (offset + i)));
      }
      ck.model.params.set(t.at("path").get<std::string>(), Tensor4<float>(s, std::move(values)));
    }
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad header: " + e.what());
  }
  validate_model(ck.model);
  return ck;
}

}  // namespace dcfmn
