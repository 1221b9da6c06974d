#pragma once

#include <string>

#include <torch/torch.h>

#include "bffnet/errors.hpp"

namespace bffnet {

namespace F = torch::nn::functional;

inline std::string shape_str(const torch::Tensor& t) {
  std::string s = "[";
  for (int64_t i = 0; i < t.dim(); ++i) s += (i ? "," : "") + std::to_string(t.size(i));
  return s + "]";
}

// Bilinear resize of an NCHW tensor (half-pixel centers). No-op when the size
// already matches.
inline torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.dim() != 4) throw ShapeError("resize_bilinear expects NCHW, got " + shape_str(x));
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

inline torch::Tensor resize_like(const torch::Tensor& x, const torch::Tensor& ref) {
  return resize_bilinear(x, ref.size(2), ref.size(3));
}

// k×k convolution, optionally followed by BatchNorm and ReLU. Without
// normalization the convolution carries its own bias.
struct ConvBlockImpl : torch::nn::Module {
  ConvBlockImpl(int64_t in, int64_t out, int64_t kernel, bool norm_act = true, int64_t stride = 1)
      : norm_act_(norm_act) {
    conv = register_module(
        "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)
                                      .stride(stride)
                                      .padding(kernel / 2)
                                      .bias(!norm_act)));
    if (norm_act_) bn = register_module("bn", torch::nn::BatchNorm2d(out));
  }

  torch::Tensor forward(torch::Tensor x) {
    x = conv(x);
    if (norm_act_) x = torch::relu(bn(x));
    return x;
  }

  bool norm_act_;
  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(ConvBlock);

}  // namespace bffnet
