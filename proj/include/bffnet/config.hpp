#pragma once

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bffnet/data.hpp"
#include "bffnet/losses.hpp"
#include "bffnet/metrics.hpp"
#include "bffnet/model.hpp"

namespace bffnet {

inline constexpr const char* kVersion = "0.1.0";

enum class SelectOn { train, val };

struct TrainConfig {
  int batch_size = 4;
  int train_h = 320;
  int train_w = 640;
  int epochs = 300;
  double lr = 1e-4;
  int lr_decay_every = 50;
  double lr_decay_factor = 0.1;
  std::vector<double> scales{0.75, 1.0, 1.25};
  std::uint64_t seed = 0;
  bool deterministic = false;
  SelectOn select_on = SelectOn::train;
  ModelConfig model;
  LossOptions loss;
  int mask_threshold = kDefaultMaskThreshold;

  // evaluation
  int eval_h = 320;
  int eval_w = 640;
  double threshold = 0.5;
  HdMode hd_mode = HdMode::standard;

  // paths
  std::string train_manifest;
  std::string val_manifest;
  std::string out_dir = "runs/default";
  std::string resume_from;

  void validate() const {
    model.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (!(lr_decay_factor > 0)) throw ConfigError("lr_decay_factor must be positive");
    if (!valid_target(train_h) || !valid_target(train_w))
      throw ConfigError("train size must be multiples of 32 and >= 32");
    if (!valid_target(eval_h) || !valid_target(eval_w)) throw ConfigError("eval size must be multiples of 32 and >= 32");
    if (scales.empty()) throw ConfigError("scales must not be empty");
    for (double s : scales)
      if (!is_allowed_scale(s)) throw ConfigError("scale " + std::to_string(s) + " not in {0.75, 1, 1.25}");
    if (threshold < 0 || threshold > 1) throw ConfigError("threshold must lie in [0,1]");
    if (select_on == SelectOn::val && val_manifest.empty())
      throw ConfigError("select_on = val needs val_manifest");
  }
};

/// Learning rate for a 1-based epoch: lr · factor^floor((epoch − 1) / every).
inline double lr_at_epoch(const TrainConfig& c, int epoch) {
  const int steps = (std::max(epoch, 1) - 1) / c.lr_decay_every;
  double lr = c.lr;
  for (int i = 0; i < steps; ++i) lr *= c.lr_decay_factor;
  return lr;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T x{};
  if (!(in >> x) || !(in >> std::ws).eof()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, std::size_t N>
std::array<T, N> parse_array(const std::string& key, const std::string& v) {
  const auto items = split_list(v);
  if (items.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated values");
  std::array<T, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_number<T>(key, items[i]);
  return out;
}

}  // namespace detail

/// Applies one `key = value` setting.
inline void apply_setting(TrainConfig& c, const std::string& key_in, const std::string& value_in) {
  using namespace detail;
  const auto key = trim(key_in);
  const auto v = trim(value_in);
  if (key == "batch_size") c.batch_size = parse_number<int>(key, v);
  else if (key == "train_h") c.train_h = parse_number<int>(key, v);
  else if (key == "train_w") c.train_w = parse_number<int>(key, v);
  else if (key == "epochs") c.epochs = parse_number<int>(key, v);
  else if (key == "lr") c.lr = parse_number<double>(key, v);
  else if (key == "lr_decay_every") c.lr_decay_every = parse_number<int>(key, v);
  else if (key == "lr_decay_factor") c.lr_decay_factor = parse_number<double>(key, v);
  else if (key == "scales") {
    c.scales.clear();
    for (const auto& s : split_list(v)) c.scales.push_back(parse_number<double>(key, s));
  } else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "deterministic") c.deterministic = parse_bool(key, v);
  else if (key == "select_on") {
    if (v == "train") c.select_on = SelectOn::train;
    else if (v == "val") c.select_on = SelectOn::val;
    else throw ConfigError("select_on: expected train|val, got '" + v + "'");
  } else if (key == "mask_threshold") c.mask_threshold = parse_number<int>(key, v);
  else if (key == "eval_h") c.eval_h = parse_number<int>(key, v);
  else if (key == "eval_w") c.eval_w = parse_number<int>(key, v);
  else if (key == "threshold") c.threshold = parse_number<double>(key, v);
  else if (key == "hd") c.hd_mode = parse_hd_mode(v);
  else if (key == "train_manifest") c.train_manifest = v;
  else if (key == "val_manifest") c.val_manifest = v;
  else if (key == "out_dir") c.out_dir = v;
  else if (key == "resume_from") c.resume_from = v;
  else if (key == "loss_kernel") c.loss.kernel = parse_number<int64_t>(key, v);
  else if (key == "loss_lambda") c.loss.lambda = parse_number<double>(key, v);
  else if (key == "encoder") c.model.encoder.variant = parse_encoder_variant(v);
  else if (key == "encoder_depth") c.model.encoder.depth = parse_number<int>(key, v);
  else if (key == "tiny_channels") c.model.encoder.tiny_channels = parse_array<int64_t, 5>(key, v);
  else if (key == "zero_init_last_norm") c.model.encoder.zero_init_last_norm = parse_bool(key, v);
  else if (key == "pretrained") c.model.encoder.pretrained = parse_bool(key, v);
  else if (key == "pretrained_path") c.model.encoder.pretrained_path = v;
  else if (key == "decoder_channels") c.model.decoder.channels = parse_number<int64_t>(key, v);
  else if (key == "reduction") c.model.decoder.reduction = parse_number<int64_t>(key, v);
  else if (key == "use_bfem") c.model.use_bfem = parse_bool(key, v);
  else if (key == "use_fcfm") c.model.use_fcfm = parse_bool(key, v);
  else if (key == "share_conv3") c.model.share_conv3 = parse_bool(key, v);
  else if (key == "normalize") c.model.normalize = parse_bool(key, v);
  else if (key == "residual_side_outputs") c.model.residual_side_outputs = parse_bool(key, v);
  else if (key == "input_mean") c.model.input_mean = parse_array<double, 3>(key, v);
  else if (key == "input_std") c.model.input_std = parse_array<double, 3>(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

/// `key = value` lines; '#' starts a comment.
inline TrainConfig parse_config_text(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, line.substr(0, eq), line.substr(eq + 1));
  }
  return base;
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["batch_size"] = c.batch_size;
  j["train_size"] = {c.train_h, c.train_w};
  j["epochs"] = c.epochs;
  j["optimizer"] = "adam";
  j["lr"] = c.lr;
  j["lr_decay_every"] = c.lr_decay_every;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["scales"] = c.scales;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["select_on"] = c.select_on == SelectOn::train ? "train" : "val";
  j["model"] = to_json(c.model);
  j["loss"] = {{"kernel", c.loss.kernel}, {"lambda", c.loss.lambda}};
  j["mask_threshold"] = c.mask_threshold;
  j["eval_size"] = {c.eval_h, c.eval_w};
  j["threshold"] = c.threshold;
  j["hd"] = to_string(c.hd_mode);
  j["train_manifest"] = c.train_manifest;
  j["val_manifest"] = c.val_manifest;
  j["out_dir"] = c.out_dir;
  j["resume_from"] = c.resume_from;
  return j;
}

}  // namespace bffnet
