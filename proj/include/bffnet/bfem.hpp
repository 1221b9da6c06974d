#pragma once

// Boundary feature extraction by reverse attention. Parameter-free: the only
// inputs are a feature map and the next-coarser side-output logits.

#include <torch/torch.h>

#include "bffnet/layers.hpp"

namespace bffnet {

/// W = 1 − sigmoid(resize(S_next)), one channel at the requested size.
/// Evaluated as sigmoid(−x), which is the same quantity without cancellation
/// when x is large and negative.
inline torch::Tensor reverse_attention_weights(const torch::Tensor& s_next, int64_t h, int64_t w) {
  if (s_next.dim() != 4 || s_next.size(1) != 1)
    throw ShapeError("reverse attention expects N×1×H×W logits, got " + shape_str(s_next));
  return torch::sigmoid(-resize_bilinear(s_next, h, w));
}

/// F_e = F ⊙ W + F with W broadcast across the channels of F.
inline torch::Tensor bfem_forward(const torch::Tensor& feature, const torch::Tensor& s_next) {
  if (feature.dim() != 4) throw ShapeError("bfem expects an NCHW feature, got " + shape_str(feature));
  if (s_next.dim() != 4 || s_next.size(0) != feature.size(0))
    throw ShapeError("bfem batch mismatch: feature " + shape_str(feature) + " vs logits " + shape_str(s_next));
  const auto w = reverse_attention_weights(s_next, feature.size(2), feature.size(3));
  return feature * w + feature;
}

}  // namespace bffnet
