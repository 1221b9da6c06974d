#pragma once

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bffnet/layers.hpp"

namespace bffnet {

enum class EncoderVariant { residual, tiny };

inline std::string to_string(EncoderVariant v) { return v == EncoderVariant::residual ? "residual" : "tiny"; }

inline EncoderVariant parse_encoder_variant(const std::string& s) {
  if (s == "residual" || s == "residual-full") return EncoderVariant::residual;
  if (s == "tiny") return EncoderVariant::tiny;
  throw ConfigError("unknown encoder variant '" + s + "' (expected residual|tiny)");
}

struct EncoderSpec {
  EncoderVariant variant = EncoderVariant::residual;
  int depth = 50;  // residual only: 18, 34, 50 or 101
  std::array<int64_t, 5> tiny_channels{16, 24, 32, 48, 64};
  // Zero the scale of the last BatchNorm in every residual branch (and of the
  // last stage norm in the tiny encoder).
  bool zero_init_last_norm = false;
  bool pretrained = false;
  std::string pretrained_path;

  std::array<int64_t, 5> channels() const {
    if (variant == EncoderVariant::tiny) return tiny_channels;
    switch (depth) {
      case 18:
      case 34:
        return {64, 64, 128, 256, 512};
      case 50:
      case 101:
        return {64, 256, 512, 1024, 2048};
      default:
        throw ConfigError("unsupported residual depth " + std::to_string(depth) + " (18, 34, 50, 101)");
    }
  }

  void validate() const {
    const auto c = channels();
    for (int i = 0; i < 5; ++i) {
      if (c[i] <= 0) throw ConfigError("encoder channel widths must be positive");
      if (i > 0 && c[i] < c[i - 1]) throw ConfigError("encoder channel widths must be nondecreasing");
    }
    if (variant == EncoderVariant::tiny && c[4] > 64) throw ConfigError("tiny encoder requires c5 <= 64");
    if (pretrained && pretrained_path.empty()) throw ConfigError("pretrained encoder requested without a weight file");
  }
  bool operator==(const EncoderSpec&) const = default;
};

// F1..F5 at strides 2, 4, 8, 16, 32.
struct FeaturePyramid {
  std::array<torch::Tensor, 5> levels;

  const torch::Tensor& operator[](int level) const { return levels.at(static_cast<std::size_t>(level - 1)); }
  std::array<torch::Tensor, 2> low_levels() const { return {levels[0], levels[1]}; }
  std::array<torch::Tensor, 3> high_levels() const { return {levels[2], levels[3], levels[4]}; }
};

namespace detail {

struct BasicBlockImpl : torch::nn::Module {
  static constexpr int64_t expansion = 1;

  BasicBlockImpl(int64_t in, int64_t planes, int64_t stride, bool zero_last) {
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, planes, 3).stride(stride).padding(1).bias(false)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(planes));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(planes, planes, 3).padding(1).bias(false)));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(planes));
    if (zero_last) torch::nn::init::zeros_(bn2->weight);
    if (stride != 1 || in != planes) {
      down_conv = register_module("down_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, planes, 1).stride(stride).bias(false)));
      down_bn = register_module("down_bn", torch::nn::BatchNorm2d(planes));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(conv1(x)));
    out = bn2(conv2(out));
    auto identity = down_conv ? down_bn(down_conv(x)) : x;
    return torch::relu(out + identity);
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, down_conv{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, down_bn{nullptr};
};
TORCH_MODULE(BasicBlock);

struct BottleneckImpl : torch::nn::Module {
  static constexpr int64_t expansion = 4;

  BottleneckImpl(int64_t in, int64_t planes, int64_t stride, bool zero_last) {
    const int64_t out_ch = planes * expansion;
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, planes, 1).bias(false)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(planes));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(planes, planes, 3).stride(stride).padding(1).bias(false)));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(planes));
    conv3 = register_module("conv3", torch::nn::Conv2d(torch::nn::Conv2dOptions(planes, out_ch, 1).bias(false)));
    bn3 = register_module("bn3", torch::nn::BatchNorm2d(out_ch));
    if (zero_last) torch::nn::init::zeros_(bn3->weight);
    if (stride != 1 || in != out_ch) {
      down_conv = register_module("down_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out_ch, 1).stride(stride).bias(false)));
      down_bn = register_module("down_bn", torch::nn::BatchNorm2d(out_ch));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(conv1(x)));
    out = torch::relu(bn2(conv2(out)));
    out = bn3(conv3(out));
    auto identity = down_conv ? down_bn(down_conv(x)) : x;
    return torch::relu(out + identity);
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, down_conv{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr}, down_bn{nullptr};
};
TORCH_MODULE(Bottleneck);

}  // namespace detail

// Standard five-stage residual network: 7×7/2 stem (F1), max-pool + stage 1
// (F2), then stages 2-4 at stride 2 each (F3..F5).
class ResidualEncoderImpl : public torch::nn::Module {
 public:
  explicit ResidualEncoderImpl(const EncoderSpec& spec) {
    std::array<int, 4> blocks{};
    bool bottleneck = false;
    switch (spec.depth) {
      case 18: blocks = {2, 2, 2, 2}; break;
      case 34: blocks = {3, 4, 6, 3}; break;
      case 50: blocks = {3, 4, 6, 3}; bottleneck = true; break;
      case 101: blocks = {3, 4, 23, 3}; bottleneck = true; break;
      default: throw ConfigError("unsupported residual depth " + std::to_string(spec.depth));
    }
    stem_conv = register_module("stem_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 64, 7).stride(2).padding(3).bias(false)));
    stem_bn = register_module("stem_bn", torch::nn::BatchNorm2d(64));

    int64_t in = 64;
    const std::array<int64_t, 4> planes{64, 128, 256, 512};
    for (int s = 0; s < 4; ++s) {
      torch::nn::Sequential stage;
      for (int b = 0; b < blocks[s]; ++b) {
        const int64_t stride = (b == 0 && s > 0) ? 2 : 1;
        if (bottleneck) {
          stage->push_back(detail::Bottleneck(in, planes[s], stride, spec.zero_init_last_norm));
          in = planes[s] * detail::BottleneckImpl::expansion;
        } else {
          stage->push_back(detail::BasicBlock(in, planes[s], stride, spec.zero_init_last_norm));
          in = planes[s];
        }
      }
      stages[s] = register_module("layer" + std::to_string(s + 1), stage);
    }
  }

  FeaturePyramid forward(const torch::Tensor& x) {
    FeaturePyramid p;
    p.levels[0] = torch::relu(stem_bn(stem_conv(x)));
    auto y = F::max_pool2d(p.levels[0], F::MaxPool2dFuncOptions(3).stride(2).padding(1));
    for (int s = 0; s < 4; ++s) {
      y = stages[s]->forward(y);
      p.levels[s + 1] = y;
    }
    return p;
  }

  torch::nn::Conv2d stem_conv{nullptr};
  torch::nn::BatchNorm2d stem_bn{nullptr};
  std::array<torch::nn::Sequential, 4> stages{torch::nn::Sequential{nullptr}, torch::nn::Sequential{nullptr},
                                              torch::nn::Sequential{nullptr}, torch::nn::Sequential{nullptr}};
};
TORCH_MODULE(ResidualEncoder);

// Five strided stages (3×3/2 conv then 3×3 conv, each with BN + ReLU).
class TinyEncoderImpl : public torch::nn::Module {
 public:
  explicit TinyEncoderImpl(const EncoderSpec& spec) {
    int64_t in = 3;
    for (int s = 0; s < 5; ++s) {
      const int64_t out = spec.tiny_channels[s];
      torch::nn::Sequential stage(ConvBlock(in, out, 3, true, 2), ConvBlock(out, out, 3, true, 1));
      stages[s] = register_module("stage" + std::to_string(s + 1), stage);
      in = out;
    }
    if (spec.zero_init_last_norm) {
      auto last = stages[4]->ptr<ConvBlockImpl>(1);
      torch::nn::init::zeros_(last->bn->weight);
    }
  }

  FeaturePyramid forward(const torch::Tensor& x) {
    FeaturePyramid p;
    auto y = x;
    for (int s = 0; s < 5; ++s) {
      y = stages[s]->forward(y);
      p.levels[s] = y;
    }
    return p;
  }

  std::array<torch::nn::Sequential, 5> stages{torch::nn::Sequential{nullptr}, torch::nn::Sequential{nullptr},
                                              torch::nn::Sequential{nullptr}, torch::nn::Sequential{nullptr},
                                              torch::nn::Sequential{nullptr}};
};
TORCH_MODULE(TinyEncoder);

// One interface over both variants.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const EncoderSpec& spec) : spec_(spec) {
    spec.validate();
    if (spec.variant == EncoderVariant::residual)
      residual = register_module("residual", ResidualEncoder(spec));
    else
      tiny = register_module("tiny", TinyEncoder(spec));
  }

  FeaturePyramid forward(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != 3)
      throw ShapeError("encoder expects N×3×H×W input, got " + shape_str(image));
    if (image.size(2) % 32 != 0 || image.size(3) % 32 != 0 || image.size(2) == 0 || image.size(3) == 0)
      throw ShapeError("encoder input height and width must be positive multiples of 32, got " + shape_str(image));
    return residual ? residual->forward(image) : tiny->forward(image);
  }

  const EncoderSpec& spec() const { return spec_; }

  ResidualEncoder residual{nullptr};
  TinyEncoder tiny{nullptr};

 private:
  EncoderSpec spec_;
};
TORCH_MODULE(Encoder);

}  // namespace bffnet
