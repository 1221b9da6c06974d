#pragma once

#include <array>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "bffnet/bfem.hpp"
#include "bffnet/encoder.hpp"
#include "bffnet/fcfm.hpp"
#include "bffnet/global_aggregator.hpp"

namespace bffnet {

struct ModelConfig {
  EncoderSpec encoder;
  DecoderConfig decoder;
  bool use_bfem = true;
  bool use_fcfm = true;
  bool share_conv3 = true;
  bool normalize = true;  // BN + ReLU after decoder/FCFM convolutions
  // S_i = head(D_i) + up(S_{i+1}) instead of head(D_i) alone.
  bool residual_side_outputs = false;
  // Input normalization applied by the harness before forward: (x - mean) / std.
  std::array<double, 3> input_mean{0.0, 0.0, 0.0};
  std::array<double, 3> input_std{1.0, 1.0, 1.0};

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (encoder.channels()[2] < decoder.channels)
      throw ConfigError("encoder F3 width " + std::to_string(encoder.channels()[2]) + " is below decoder width C=" +
                        std::to_string(decoder.channels));
    for (double s : input_std)
      if (!(s > 0)) throw ConfigError("input_std entries must be positive");
  }
  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["encoder"] = {{"variant", to_string(c.encoder.variant)},
                  {"depth", c.encoder.depth},
                  {"tiny_channels", c.encoder.tiny_channels},
                  {"zero_init_last_norm", c.encoder.zero_init_last_norm},
                  {"pretrained", c.encoder.pretrained},
                  {"pretrained_path", c.encoder.pretrained_path}};
  j["decoder"] = {{"channels", c.decoder.channels}, {"reduction", c.decoder.reduction}};
  j["use_bfem"] = c.use_bfem;
  j["use_fcfm"] = c.use_fcfm;
  j["share_conv3"] = c.share_conv3;
  j["normalize"] = c.normalize;
  j["residual_side_outputs"] = c.residual_side_outputs;
  j["input_mean"] = c.input_mean;
  j["input_std"] = c.input_std;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    const auto& e = j.at("encoder");
    c.encoder.variant = parse_encoder_variant(e.at("variant").get<std::string>());
    c.encoder.depth = e.at("depth").get<int>();
    c.encoder.tiny_channels = e.at("tiny_channels").get<std::array<int64_t, 5>>();
    c.encoder.zero_init_last_norm = e.at("zero_init_last_norm").get<bool>();
    c.encoder.pretrained = e.at("pretrained").get<bool>();
    c.encoder.pretrained_path = e.at("pretrained_path").get<std::string>();
    c.decoder.channels = j.at("decoder").at("channels").get<int64_t>();
    c.decoder.reduction = j.at("decoder").at("reduction").get<int64_t>();
    c.use_bfem = j.at("use_bfem").get<bool>();
    c.use_fcfm = j.at("use_fcfm").get<bool>();
    c.share_conv3 = j.at("share_conv3").get<bool>();
    c.normalize = j.at("normalize").get<bool>();
    c.residual_side_outputs = j.at("residual_side_outputs").get<bool>();
    c.input_mean = j.at("input_mean").get<std::array<double, 3>>();
    c.input_std = j.at("input_std").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("model config: ") + ex.what());
  }
  return c;
}

/// Ablation row label for a configuration.
inline std::string ablation_name(const ModelConfig& c) {
  std::string s = "Backbone";
  if (c.use_bfem) s += "+BFEM";
  if (c.use_fcfm) s += "+FCFM";
  return s;
}

// All logits are N×1×H×W at the input resolution.
struct NetworkOutputs {
  torch::Tensor s_g;
  torch::Tensor s3;
  torch::Tensor s4;
  torch::Tensor s5;

  const torch::Tensor& final_mask_logits() const { return s3; }
  std::array<torch::Tensor, 4> all() const { return {s_g, s3, s4, s5}; }
};

// Encoder -> channel reduction of F3..F5 -> partial decoder (D6, S6) -> for
// i = 5, 4, 3: boundary extraction on F_i against S_{i+1}, cross-fusion with
// the resized D_{i+1}, and a 1×1 head giving S_i. F1 and F2 are computed but
// not consumed.
class BffNetImpl : public torch::nn::Module {
 public:
  explicit BffNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int64_t c = cfg.decoder.channels;
    encoder = register_module("encoder", Encoder(cfg.encoder));
    const auto widths = cfg.encoder.channels();
    for (int k = 0; k < 3; ++k) {
      const int level = 3 + k;
      reducers[k] = register_module("reduce" + std::to_string(level), ChannelReducer(widths[level - 1], c));
    }
    decoder = register_module("decoder", PartialDecoder(c, cfg.normalize));
    FcfmOptions fo{c, cfg.decoder.reduction, cfg.share_conv3, cfg.normalize};
    for (int k = 0; k < 3; ++k) {
      const std::string level = std::to_string(3 + k);
      if (cfg.use_fcfm)
        fusers[k] = register_module("fcfm" + level, Fcfm(fo));
      else
        adapters[k] = register_module("adapt" + level, torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 1)));
      heads[k] = register_module("head" + level, torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 1, 1)));
    }
  }

  NetworkOutputs forward(const torch::Tensor& image) {
    const auto pyramid = encoder->forward(image);
    std::array<torch::Tensor, 3> reduced;
    for (int k = 0; k < 3; ++k) reduced[k] = reducers[k]->forward(pyramid[3 + k]);

    const auto global = decoder->forward(reduced[0], reduced[1], reduced[2]);
    torch::Tensor d_next = global.feature;
    torch::Tensor s_next = global.logits;
    std::array<torch::Tensor, 3> side;
    for (int k = 2; k >= 0; --k) {
      const auto& f = reduced[k];
      const auto fe = cfg_.use_bfem ? bfem_forward(f, s_next) : f;
      torch::Tensor d;
      if (cfg_.use_fcfm)
        d = fusers[k]->forward(fe, d_next);
      else
        d = fe + adapters[k]->forward(resize_like(d_next, f));
      auto s = heads[k]->forward(d);
      if (cfg_.residual_side_outputs) s = s + resize_like(s_next, s);
      side[k] = s;
      d_next = d;
      s_next = s;
    }

    const int64_t h = image.size(2), w = image.size(3);
    NetworkOutputs out;
    out.s_g = resize_bilinear(global.logits, h, w);
    out.s3 = resize_bilinear(side[0], h, w);
    out.s4 = resize_bilinear(side[1], h, w);
    out.s5 = resize_bilinear(side[2], h, w);
    return out;
  }

  const ModelConfig& config() const { return cfg_; }

  Encoder encoder{nullptr};
  std::array<ChannelReducer, 3> reducers{ChannelReducer{nullptr}, ChannelReducer{nullptr}, ChannelReducer{nullptr}};
  PartialDecoder decoder{nullptr};
  std::array<Fcfm, 3> fusers{Fcfm{nullptr}, Fcfm{nullptr}, Fcfm{nullptr}};
  std::array<torch::nn::Conv2d, 3> adapters{torch::nn::Conv2d{nullptr}, torch::nn::Conv2d{nullptr},
                                            torch::nn::Conv2d{nullptr}};
  std::array<torch::nn::Conv2d, 3> heads{torch::nn::Conv2d{nullptr}, torch::nn::Conv2d{nullptr},
                                         torch::nn::Conv2d{nullptr}};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(BffNet);

/// Binary mask sigmoid(final logits) > threshold, as a bool tensor.
inline torch::Tensor predict_mask(const NetworkOutputs& out, double threshold = 0.5) {
  return torch::sigmoid(out.final_mask_logits()) > threshold;
}

inline int64_t parameter_count(torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

}  // namespace bffnet
