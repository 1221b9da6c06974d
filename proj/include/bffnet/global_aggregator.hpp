#pragma once

#include <torch/torch.h>

#include "bffnet/layers.hpp"

namespace bffnet {

struct DecoderConfig {
  int64_t channels = 32;  // C, shared by the decoder and every FCFM
  int64_t reduction = 4;  // t, FCFM local-attention reduction rate

  void validate() const {
    if (channels < 8) throw ConfigError("decoder channels must be >= 8, got " + std::to_string(channels));
    if (reduction <= 0 || channels % reduction != 0)
      throw ConfigError("reduction rate " + std::to_string(reduction) + " must divide channels " +
                        std::to_string(channels));
  }
  bool operator==(const DecoderConfig&) const = default;
};

// 1×1 convolution + BatchNorm + ReLU down to C channels.
class ChannelReducerImpl : public torch::nn::Module {
 public:
  ChannelReducerImpl(int64_t in_channels, int64_t out_channels, bool normalize = true)
      : in_(in_channels), out_(out_channels) {
    if (in_channels < out_channels)
      throw ConfigError("reduce_channels: input has " + std::to_string(in_channels) + " channels, fewer than C=" +
                        std::to_string(out_channels));
    block = register_module("block", ConvBlock(in_channels, out_channels, 1, normalize));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != in_)
      throw ShapeError("reduce_channels expects " + std::to_string(in_) + " channels, got " + shape_str(x));
    return block(x);
  }

  ConvBlock block{nullptr};

 private:
  int64_t in_, out_;
};
TORCH_MODULE(ChannelReducer);

struct GlobalMap {
  torch::Tensor feature;  // N×C×h/8×w/8
  torch::Tensor logits;   // N×1×h/8×w/8
};

// Cascaded partial decoder over (F3, F4, F5), all already reduced to C
// channels. Deeper maps are upsampled and multiplied into shallower ones,
// concatenated at F3 scale and fused.
class PartialDecoderImpl : public torch::nn::Module {
 public:
  explicit PartialDecoderImpl(int64_t c, bool normalize = true) : c_(c) {
    up1 = register_module("up1", ConvBlock(c, c, 3, normalize));
    up2 = register_module("up2", ConvBlock(c, c, 3, normalize));
    up3 = register_module("up3", ConvBlock(c, c, 3, normalize));
    up4 = register_module("up4", ConvBlock(c, c, 3, normalize));
    up5 = register_module("up5", ConvBlock(2 * c, 2 * c, 3, normalize));
    cat2 = register_module("cat2", ConvBlock(2 * c, 2 * c, 3, normalize));
    cat3 = register_module("cat3", ConvBlock(3 * c, 3 * c, 3, normalize));
    fuse = register_module("fuse", ConvBlock(3 * c, c, 3, normalize));
    head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 1, 1)));
  }

  GlobalMap forward(const torch::Tensor& f3, const torch::Tensor& f4, const torch::Tensor& f5) {
    for (const auto* t : {&f3, &f4, &f5})
      if (t->dim() != 4 || t->size(1) != c_)
        throw ShapeError("partial decoder expects " + std::to_string(c_) + "-channel inputs, got " + shape_str(*t));
    if (f3.size(2) != 2 * f4.size(2) || f3.size(3) != 2 * f4.size(3) || f4.size(2) != 2 * f5.size(2) ||
        f4.size(3) != 2 * f5.size(3))
      throw ShapeError("partial decoder: inconsistent pyramid " + shape_str(f3) + ", " + shape_str(f4) + ", " +
                       shape_str(f5));

    const auto x2_1 = up1(resize_like(f5, f4)) * f4;
    const auto x3_1 = up2(resize_like(f5, f3)) * up3(resize_like(f4, f3)) * f3;
    const auto x2_2 = cat2(torch::cat({x2_1, up4(resize_like(f5, f4))}, 1));
    const auto x3_2 = cat3(torch::cat({x3_1, up5(resize_like(x2_2, f3))}, 1));
    GlobalMap g;
    g.feature = fuse(x3_2);
    g.logits = head(g.feature);
    return g;
  }

  ConvBlock up1{nullptr}, up2{nullptr}, up3{nullptr}, up4{nullptr}, up5{nullptr};
  ConvBlock cat2{nullptr}, cat3{nullptr}, fuse{nullptr};
  torch::nn::Conv2d head{nullptr};

 private:
  int64_t c_;
};
TORCH_MODULE(PartialDecoder);

}  // namespace bffnet
