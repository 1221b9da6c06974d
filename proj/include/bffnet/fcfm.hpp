#pragma once

#include <torch/torch.h>

#include "bffnet/layers.hpp"

namespace bffnet {

struct FcfmOptions {
  int64_t channels = 32;  // K
  int64_t reduction = 4;  // t
  // Eq. 3 and the attention branch read the same 3×3 convolution.
  bool share_conv3 = true;
  // BatchNorm + ReLU after every 3×3 convolution. Off gives the bare
  // equations (convolutions with bias, nothing else).
  bool normalize = true;
};

/// Channel concatenation in the fixed order (a, b).
inline torch::Tensor concat_pair(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.dim() != 4 || b.dim() != 4 || a.size(0) != b.size(0) || a.size(2) != b.size(2) ||
      a.size(3) != b.size(3))
    throw ShapeError("concat_pair: incompatible " + shape_str(a) + " and " + shape_str(b));
  return torch::cat({a, b}, 1);
}

// Feature cross-fusion of a boundary-enhanced feature with a decoder feature.
//
//   X      = Conv3(cat(a, b))
//   W      = sigmoid(PConv2(relu(PConv1(X))))        per-pixel, K channels
//   local  = X ⊙ W + X
//   fused  = Conv3_out(cat(local, Conv3_cross(cat(a, b))))
class FcfmImpl : public torch::nn::Module {
 public:
  explicit FcfmImpl(const FcfmOptions& opt) : opt_(opt) {
    const int64_t k = opt.channels, t = opt.reduction;
    if (k <= 0 || t <= 0 || k % t != 0)
      throw ConfigError("fcfm: reduction rate " + std::to_string(t) + " must divide channels " +
                        std::to_string(k));
    conv_local = register_module("conv_local", ConvBlock(2 * k, k, 3, opt.normalize));
    if (!opt.share_conv3) conv_att = register_module("conv_att", ConvBlock(2 * k, k, 3, opt.normalize));
    pconv1 = register_module("pconv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(k, k / t, 1)));
    pconv2 = register_module("pconv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(k / t, k, 1)));
    conv_cross = register_module("conv_cross", ConvBlock(2 * k, k, 3, opt.normalize));
    conv_out = register_module("conv_out", ConvBlock(2 * k, k, 3, opt.normalize));
  }

  /// Local attention weights W for an already concatenated 2K-channel input.
  torch::Tensor local_attention(const torch::Tensor& cat) {
    check_cat(cat);
    return attention_from(opt_.share_conv3 ? conv_local(cat) : conv_att(cat));
  }

  torch::Tensor forward(const torch::Tensor& a, torch::Tensor b) {
    const int64_t k = opt_.channels;
    if (a.dim() != 4 || b.dim() != 4 || a.size(1) != k || b.size(1) != k)
      throw ShapeError("fcfm expects two " + std::to_string(k) + "-channel NCHW inputs, got " + shape_str(a) +
                       " and " + shape_str(b));
    b = resize_like(b, a);
    const auto cat = concat_pair(a, b);
    const auto x = conv_local(cat);
    const auto w = attention_from(opt_.share_conv3 ? x : conv_att(cat));
    const auto local = x * w + x;
    return conv_out(concat_pair(local, conv_cross(cat)));
  }

  const FcfmOptions& options() const { return opt_; }

  ConvBlock conv_local{nullptr}, conv_att{nullptr}, conv_cross{nullptr}, conv_out{nullptr};
  torch::nn::Conv2d pconv1{nullptr}, pconv2{nullptr};

 private:
  torch::Tensor attention_from(const torch::Tensor& x) { return torch::sigmoid(pconv2(torch::relu(pconv1(x)))); }

  void check_cat(const torch::Tensor& cat) const {
    if (cat.dim() != 4 || cat.size(1) != 2 * opt_.channels)
      throw ShapeError("fcfm: expected " + std::to_string(2 * opt_.channels) + "-channel input, got " +
                       shape_str(cat));
  }

  FcfmOptions opt_;
};
TORCH_MODULE(Fcfm);

}  // namespace bffnet
