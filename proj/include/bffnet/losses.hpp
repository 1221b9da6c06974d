#pragma once

// Structure loss: weighted IoU + weighted BCE with boundary-emphasizing pixel
// weights, summed over the deeply supervised outputs.

#include <vector>

#include <torch/torch.h>

#include "bffnet/model.hpp"

namespace bffnet {

struct LossOptions {
  int64_t kernel = 31;
  double lambda = 5.0;
};

namespace detail {

// Reflection index map for padding a length-n axis by p on both sides
// (edge sample not repeated). Reflects repeatedly when p >= n.
inline torch::Tensor reflect_indices(int64_t n, int64_t p) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<std::size_t>(n + 2 * p));
  const int64_t period = 2 * (n - 1);
  for (int64_t i = -p; i < n + p; ++i) {
    if (n == 1) {
      idx.push_back(0);
      continue;
    }
    int64_t k = ((i % period) + period) % period;
    if (k >= n) k = period - k;
    idx.push_back(k);
  }
  return torch::tensor(idx, torch::kLong);
}

inline void check_logits_mask(const torch::Tensor& logits, const torch::Tensor& g, const char* who) {
  if (logits.dim() != 4 || logits.sizes() != g.sizes())
    throw ShapeError(std::string(who) + ": logits " + shape_str(logits) + " and mask " + shape_str(g) +
                     " must be equal N×1×H×W shapes");
}

}  // namespace detail

/// w = 1 + lambda·|avgpool_k(G) − G|, stride 1, reflective padding, so a
/// constant mask gives w ≡ 1.
inline torch::Tensor pixel_weights(const torch::Tensor& g, const LossOptions& opt = {}) {
  if (g.dim() != 4) throw ShapeError("pixel_weights expects N×1×H×W, got " + shape_str(g));
  if (opt.kernel < 1 || opt.kernel % 2 == 0) throw ConfigError("pixel weight kernel must be odd and positive");
  torch::NoGradGuard no_grad;
  const int64_t p = opt.kernel / 2;
  const auto rows = detail::reflect_indices(g.size(2), p);
  const auto cols = detail::reflect_indices(g.size(3), p);
  const auto padded = g.index_select(2, rows).index_select(3, cols);
  const auto pooled = F::avg_pool2d(padded, F::AvgPool2dFuncOptions(opt.kernel).stride(1));
  return 1.0 + opt.lambda * (pooled - g).abs();
}

/// Per-image sum(w·bce)/sum(w), averaged over the batch.
inline torch::Tensor weighted_bce(const torch::Tensor& logits, const torch::Tensor& g, const torch::Tensor& w) {
  detail::check_logits_mask(logits, g, "weighted_bce");
  const auto bce = F::binary_cross_entropy_with_logits(
      logits, g, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
  return ((w * bce).sum({2, 3}) / w.sum({2, 3})).mean();
}

/// Per-image 1 − (Σw·p·G + 1)/(Σw·(p + G − p·G) + 1), averaged over the batch.
inline torch::Tensor weighted_iou(const torch::Tensor& logits, const torch::Tensor& g, const torch::Tensor& w) {
  detail::check_logits_mask(logits, g, "weighted_iou");
  const auto p = torch::sigmoid(logits);
  const auto inter = (w * p * g).sum({2, 3});
  const auto uni = (w * (p + g - p * g)).sum({2, 3});
  return (1.0 - (inter + 1.0) / (uni + 1.0)).mean();
}

inline torch::Tensor structure_loss(const torch::Tensor& logits, const torch::Tensor& g, const torch::Tensor& w) {
  return weighted_iou(logits, g, w) + weighted_bce(logits, g, w);
}

struct LossTerm {
  torch::Tensor iou;
  torch::Tensor bce;
  torch::Tensor total;
};

struct LossBreakdown {
  torch::Tensor total;
  LossTerm s_g, s3, s4, s5;
};

/// Deep-supervision sum over S_G, S3, S4, S5 with one shared weight map.
inline LossBreakdown total_loss(const NetworkOutputs& out, const torch::Tensor& g, const LossOptions& opt = {}) {
  const auto w = pixel_weights(g, opt);
  auto term = [&](const torch::Tensor& s) {
    LossTerm t;
    t.iou = weighted_iou(s, g, w);
    t.bce = weighted_bce(s, g, w);
    t.total = t.iou + t.bce;
    return t;
  };
  LossBreakdown b;
  b.s_g = term(out.s_g);
  b.s3 = term(out.s3);
  b.s4 = term(out.s4);
  b.s5 = term(out.s5);
  b.total = b.s_g.total + b.s3.total + b.s4.total + b.s5.total;
  return b;
}

}  // namespace bffnet
