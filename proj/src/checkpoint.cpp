#include "tgbfn/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace tgbfn {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'T', 'G', 'B', 'F', 'N', 'C', 'P', '1'};
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

template <typename T>
void write_le(std::ostream& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<T>(bytes);
  }
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<T>(bytes);
  }
  return v;
}

json transform_to_json(const shapes::ConditionTransform& t) {
  return json{{"log_offset", t.log_offset}, {"mean", t.mean}, {"std", t.stddev}};
}

shapes::ConditionTransform transform_from_json(const json& j) {
  shapes::ConditionTransform t;
  t.log_offset = j.at("log_offset").get<std::vector<double>>();
  t.mean = j.at("mean").get<std::vector<double>>();
  t.stddev = j.at("std").get<std::vector<double>>();
  return t;
}

json denoiser_config_to_json(const DenoiserConfig& c) {
  return json{{"positions", c.positions},   {"classes", c.classes},
              {"hidden", c.hidden},         {"hidden_layers", c.hidden_layers},
              {"time_features", c.time_features}, {"conditional", c.conditional},
              {"condition_dim", c.condition_dim}};
}

DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  c.positions = j.at("positions").get<int>();
  c.classes = j.at("classes").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.hidden_layers = j.at("hidden_layers").get<int>();
  c.time_features = j.at("time_features").get<int>();
  c.conditional = j.at("conditional").get<bool>();
  c.condition_dim = j.at("condition_dim").get<int>();
  return c;
}

json guidance_config_to_json(const GuidanceConfig& c) {
  return json{{"positions", c.positions},
              {"classes", c.classes},
              {"condition_dim", c.condition_dim},
              {"hidden", c.hidden},
              {"hidden_layers", c.hidden_layers},
              {"alpha_features", c.alpha_features},
              {"variance_floor", c.variance_floor}};
}

GuidanceConfig guidance_config_from_json(const json& j) {
  GuidanceConfig c;
  c.positions = j.at("positions").get<int>();
  c.classes = j.at("classes").get<int>();
  c.condition_dim = j.at("condition_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.hidden_layers = j.at("hidden_layers").get<int>();
  c.alpha_features = j.at("alpha_features").get<int>();
  c.variance_floor = j.at("variance_floor").get<double>();
  return c;
}

void save_container(const std::string& path, const std::string& component, const json& config,
                    const CheckpointInfo& info, const std::vector<NamedArray>& arrays) {
  json meta;
  meta["component"] = component;
  meta["config"] = config;
  meta["train_step"] = info.train_step;
  meta["seed"] = info.seed;
  if (info.transform) meta["condition_transform"] = transform_to_json(*info.transform);
  json dir = json::array();
  for (const auto& a : arrays) dir.push_back({{"name", a.name}, {"size", a.size}});
  meta["arrays"] = dir;
  const std::string meta_str = meta.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
    out.write(kMagic, sizeof(kMagic));
    write_le<uint32_t>(out, kVersion);
    write_le<uint64_t>(out, meta_str.size());
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (const auto& a : arrays) {
      for (size_t i = 0; i < a.size; ++i) write_le<double>(out, a.data[i]);
    }
    out.flush();
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

json load_container(const std::string& path, const std::string& expect_component,
                    std::vector<NamedArray>& arrays, CheckpointInfo* info, std::ifstream& in) {
  in.open(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const uint32_t version = read_le<uint32_t>(in);
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version in " + path);
  const uint64_t meta_len = read_le<uint64_t>(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw std::runtime_error("load_checkpoint: truncated metadata in " + path);
  json meta = json::parse(meta_str);
  if (meta.at("component").get<std::string>() != expect_component)
    throw std::runtime_error("load_checkpoint: expected component '" + expect_component +
                             "', found '" + meta.at("component").get<std::string>() + "'");
  if (info) {
    info->component = expect_component;
    info->train_step = meta.at("train_step").get<long>();
    info->seed = meta.at("seed").get<uint64_t>();
    if (meta.contains("condition_transform"))
      info->transform = transform_from_json(meta.at("condition_transform"));
  }
  const json& dir = meta.at("arrays");
  if (dir.size() != arrays.size())
    throw std::runtime_error("load_checkpoint: array directory mismatch in " + path);
  for (size_t i = 0; i < arrays.size(); ++i) {
    if (dir[i].at("name").get<std::string>() != arrays[i].name ||
        dir[i].at("size").get<size_t>() != arrays[i].size)
      throw std::runtime_error("load_checkpoint: array '" + arrays[i].name +
                               "' does not match its declared shape in " + path);
  }
  for (auto& a : arrays) {
    for (size_t i = 0; i < a.size; ++i) a.data[i] = read_le<double>(in);
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated arrays in " + path);
  return meta;
}

}  // namespace

void save_denoiser_checkpoint(const std::string& path, const DenoiserParams& params,
                              const CheckpointInfo& info) {
  save_container(path, "denoiser", denoiser_config_to_json(params.cfg), info,
                 params.named_arrays());
}

DenoiserParams load_denoiser_checkpoint(const std::string& path, CheckpointInfo* info) {
  // Read metadata first to reconstruct the parameter shapes.
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  probe.read(magic, sizeof(magic));
  read_le<uint32_t>(probe);
  const uint64_t meta_len = read_le<uint64_t>(probe);
  std::string meta_str(meta_len, '\0');
  probe.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!probe) throw std::runtime_error("load_checkpoint: truncated metadata in " + path);
  probe.close();
  json meta = json::parse(meta_str);
  DenoiserParams params(denoiser_config_from_json(meta.at("config")));
  auto arrays = params.named_arrays();
  std::ifstream in;
  load_container(path, "denoiser", arrays, info, in);
  return params;
}

void save_guidance_checkpoint(const std::string& path, const GuidanceParams& params,
                              const CheckpointInfo& info) {
  save_container(path, "guidance", guidance_config_to_json(params.cfg), info,
                 params.named_arrays());
}

GuidanceParams load_guidance_checkpoint(const std::string& path, CheckpointInfo* info) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  probe.read(magic, sizeof(magic));
  read_le<uint32_t>(probe);
  const uint64_t meta_len = read_le<uint64_t>(probe);
  std::string meta_str(meta_len, '\0');
  probe.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!probe) throw std::runtime_error("load_checkpoint: truncated metadata in " + path);
  probe.close();
  json meta = json::parse(meta_str);
  GuidanceParams params(guidance_config_from_json(meta.at("config")));
  auto arrays = params.named_arrays();
  std::ifstream in;
  load_container(path, "guidance", arrays, info, in);
  return params;
}

std::string peek_checkpoint_component(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("peek_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("peek_checkpoint: bad magic in " + path);
  read_le<uint32_t>(in);
  const uint64_t meta_len = read_le<uint64_t>(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw std::runtime_error("peek_checkpoint: truncated metadata");
  return json::parse(meta_str).at("component").get<std::string>();
}

}  // namespace tgbfn
