#pragma once

// Checkpoint container, little-endian:
//
//   8 bytes   magic "BFFNETCK"
//   u32       format version
//   u64       header length L
//   L bytes   JSON header {"config": ModelConfig, "meta": {...},
//                          "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}]}
//   ...       raw tensor blobs, offsets relative to the end of the header
//
// Parameters and buffers (BatchNorm statistics) are both stored by their
// registered module path.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "bffnet/model.hpp"

namespace bffnet {

inline constexpr char kCheckpointMagic[8] = {'B', 'F', 'F', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  nlohmann::json meta = nlohmann::json::object();
  BffNet model{nullptr};
};

namespace detail {

inline std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw FormatError(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
  }
}

inline torch::ScalarType dtype_from_name(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw FormatError("checkpoint: unknown dtype '" + s + "'");
}

inline std::map<std::string, torch::Tensor> named_state(torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : m.named_parameters()) out[p.key()] = p.value();
  for (const auto& b : m.named_buffers()) out[b.key()] = b.value();
  return out;
}

struct RawCheckpoint {
  nlohmann::json header;
  std::map<std::string, torch::Tensor> tensors;
};

inline RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);

  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  if (!in.read(reinterpret_cast<char*>(&version), sizeof version) ||
      !in.read(reinterpret_cast<char*>(&header_len), sizeof header_len))
    throw FormatError(path.string() + ": truncated preamble");
  if (version != kCheckpointVersion)
    throw VersionError(path.string() + ": checkpoint format version " + std::to_string(version) +
                       ", expected " + std::to_string(kCheckpointVersion));
  const std::uint64_t data_start = 8 + sizeof version + sizeof header_len + header_len;
  if (data_start > file_size) throw FormatError(path.string() + ": truncated header");

  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }

  try {
    for (const auto& entry : raw.header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (data_start + offset + nbytes > file_size)
        throw FormatError(path.string() + ": truncated data for tensor '" + name + "'");
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      if (static_cast<std::uint64_t>(t.nbytes()) != nbytes)
        throw FormatError(path.string() + ": size mismatch for tensor '" + name + "'");
      in.seekg(static_cast<std::streamoff>(data_start + offset));
      if (!in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes)))
        throw FormatError(path.string() + ": short read for tensor '" + name + "'");
      raw.tensors[name] = t;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed tensor table: " + e.what());
  }
  return raw;
}

inline void copy_state(torch::nn::Module& m, const std::map<std::string, torch::Tensor>& src,
                       const std::string& prefix, const std::string& origin) {
  torch::NoGradGuard no_grad;
  for (auto& [name, dst] : named_state(m)) {
    if (name.rfind(prefix, 0) != 0) continue;
    auto it = src.find(name);
    if (it == src.end()) throw FormatError(origin + ": missing tensor '" + name + "'");
    if (it->second.sizes() != dst.sizes())
      throw FormatError(origin + ": shape mismatch for '" + name + "'");
    dst.copy_(it->second.to(dst.dtype()));
  }
}

}  // namespace detail

/// Writes config, metadata and every parameter and buffer. The file is
/// written next to its destination and renamed into place.
inline void save_checkpoint(BffNet& model, const std::filesystem::path& path,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  auto state = detail::named_state(*model);
  nlohmann::json header;
  header["config"] = to_json(model->config());
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  std::uint64_t offset = 0;
  for (auto& [name, t] : state) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    header["tensors"].push_back({{"name", name},
                                 {"dtype", detail::dtype_name(c.scalar_type())},
                                 {"shape", c.sizes().vec()},
                                 {"offset", offset},
                                 {"nbytes", c.nbytes()}});
    offset += c.nbytes();
    blobs.push_back(c);
  }
  const std::string header_text = header.dump();
  const std::uint64_t header_len = header_text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, 8);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(header_text.data(), static_cast<std::streamsize>(header_len));
    for (const auto& b : blobs) out.write(static_cast<const char*>(b.data_ptr()), static_cast<std::streamsize>(b.nbytes()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Rebuilds the model from the embedded config and restores its state.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto raw = detail::read_raw(path);
  Checkpoint ck;
  if (!raw.header.contains("config")) throw FormatError(path.string() + ": header lacks config");
  ck.config = model_config_from_json(raw.header.at("config"));
  ck.meta = raw.header.value("meta", nlohmann::json::object());
  // Weights come from the file, not from the pretrained source.
  auto build_cfg = ck.config;
  build_cfg.encoder.pretrained = false;
  build_cfg.encoder.pretrained_path.clear();
  ck.model = BffNet(build_cfg);
  bool any_f64 = false;
  for (const auto& [n, t] : raw.tensors) any_f64 |= t.scalar_type() == torch::kFloat64;
  if (any_f64) ck.model->to(torch::kFloat64);
  detail::copy_state(*ck.model, raw.tensors, "", path.string());
  return ck;
}

/// Restores state into an existing model; the embedded config must match.
inline nlohmann::json load_checkpoint_into(BffNet& model, const std::filesystem::path& path) {
  auto raw = detail::read_raw(path);
  if (!raw.header.contains("config")) throw FormatError(path.string() + ": header lacks config");
  auto file_cfg = model_config_from_json(raw.header.at("config"));
  if (!(file_cfg == model->config()))
    throw VersionError(path.string() + ": checkpoint config does not match the model (" +
                       to_json(file_cfg).dump() + " vs " + to_json(model->config()).dump() + ")");
  detail::copy_state(*model, raw.tensors, "", path.string());
  return raw.header.value("meta", nlohmann::json::object());
}

/// Copies only the encoder weights ("encoder.*") from a checkpoint file.
inline void load_encoder_weights(BffNet& model, const std::filesystem::path& path) {
  auto raw = detail::read_raw(path);
  detail::copy_state(*model, raw.tensors, "encoder.", path.string());
}

/// Builds a model and loads pretrained encoder weights when requested.
inline BffNet make_model(const ModelConfig& cfg) {
  BffNet m(cfg);
  if (cfg.encoder.pretrained) load_encoder_weights(m, cfg.encoder.pretrained_path);
  return m;
}

}  // namespace bffnet
