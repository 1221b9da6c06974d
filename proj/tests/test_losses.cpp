#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "bffnet/losses.hpp"
#include "oracles.hpp"

using namespace bffnet;

namespace {

torch::Tensor to_tensor(const oracle::Plane& p) {
  return torch::tensor(p.v, torch::kFloat64).reshape({1, 1, p.rows, p.cols});
}

oracle::Plane random_plane(std::mt19937_64& rng, int rows, int cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  oracle::Plane p{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols)};
  for (auto& v : p.v) v = u(rng);
  return p;
}

oracle::Plane random_mask(std::mt19937_64& rng, int rows, int cols) {
  std::bernoulli_distribution on(0.4);
  oracle::Plane p{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols)};
  for (auto& v : p.v) v = on(rng) ? 1.0 : 0.0;
  return p;
}

NetworkOutputs outputs_of(const std::array<torch::Tensor, 4>& s) { return {s[0], s[1], s[2], s[3]}; }

}  // namespace

TEST(PixelWeights, ConstantMasksGiveOne) {
  for (double fill : {0.0, 1.0}) {
    const auto g = torch::full({2, 1, 20, 37}, fill, torch::kFloat64);
    const auto w = pixel_weights(g);
    EXPECT_TRUE(torch::equal(w, torch::ones_like(w)));
  }
}

TEST(PixelWeights, SinglePixelHandValue) {
  auto g = torch::zeros({1, 1, 9, 9}, torch::kFloat64);
  g[0][0][4][4] = 1.0;
  const auto w = pixel_weights(g, {3, 5.0});
  EXPECT_NEAR(w[0][0][4][4].item<double>(), 1.0 + 5.0 * (1.0 - 1.0 / 9.0), 1e-12);
  EXPECT_NEAR(w[0][0][4][4].item<double>(), 5.4444, 1e-4);
  EXPECT_NEAR(w[0][0][3][3].item<double>(), 1.0 + 5.0 / 9.0, 1e-12);
  EXPECT_EQ(w[0][0][0][0].item<double>(), 1.0);
  EXPECT_TRUE((w >= 1.0).all().item<bool>());
}

TEST(PixelWeights, MatchesReflectedWindowOracle) {
  std::mt19937_64 rng(8);
  for (auto [r, c, k] : {std::tuple{4, 4, 3}, std::tuple{5, 7, 5}, std::tuple{6, 9, 31}, std::tuple{1, 5, 3}}) {
    const auto g = random_mask(rng, r, c);
    const auto expect = oracle::pixel_weights(g, k, 5.0);
    const auto got = pixel_weights(to_tensor(g), {k, 5.0}).flatten();
    for (std::size_t i = 0; i < expect.v.size(); ++i)
      EXPECT_NEAR(got[static_cast<int64_t>(i)].item<double>(), expect.v[i], 1e-12);
  }
}

TEST(WeightedLosses, MatchScalarOracles) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 50; ++t) {
    const auto x = random_plane(rng, 4, 4, -6, 6);
    const auto g = random_mask(rng, 4, 4);
    const auto w = random_plane(rng, 4, 4, 1, 6);
    EXPECT_NEAR(weighted_bce(to_tensor(x), to_tensor(g), to_tensor(w)).item<double>(), oracle::weighted_bce(x, g, w),
                1e-10);
    EXPECT_NEAR(weighted_iou(to_tensor(x), to_tensor(g), to_tensor(w)).item<double>(), oracle::weighted_iou(x, g, w),
                1e-10);
  }
}

TEST(WeightedLosses, BatchIsMeanOfPerImageLosses) {
  std::mt19937_64 rng(2);
  const auto x1 = random_plane(rng, 4, 4, -3, 3), x2 = random_plane(rng, 4, 4, -3, 3);
  const auto g1 = random_mask(rng, 4, 4), g2 = random_mask(rng, 4, 4);
  const auto w1 = oracle::pixel_weights(g1, 3, 5), w2 = oracle::pixel_weights(g2, 3, 5);
  const auto x = torch::cat({to_tensor(x1), to_tensor(x2)});
  const auto g = torch::cat({to_tensor(g1), to_tensor(g2)});
  const auto w = torch::cat({to_tensor(w1), to_tensor(w2)});
  EXPECT_NEAR(weighted_bce(x, g, w).item<double>(),
              0.5 * (oracle::weighted_bce(x1, g1, w1) + oracle::weighted_bce(x2, g2, w2)), 1e-10);
  EXPECT_NEAR(weighted_iou(x, g, w).item<double>(),
              0.5 * (oracle::weighted_iou(x1, g1, w1) + oracle::weighted_iou(x2, g2, w2)), 1e-10);
}

TEST(WeightedLosses, LimitCases) {
  const auto ones = torch::ones({1, 1, 4, 4}, torch::kFloat64);
  EXPECT_LE(weighted_bce(torch::full_like(ones, 1e4), ones, ones).item<double>(), 1e-6);
  EXPECT_LE(weighted_iou(torch::full_like(ones, 1e4), ones, ones).item<double>(), 1e-6);
  EXPECT_NEAR(weighted_iou(torch::full_like(ones, -1e4), ones, ones).item<double>(), 1.0 - 1.0 / 17.0, 1e-12);
  std::mt19937_64 rng(1);
  const auto g = to_tensor(random_mask(rng, 4, 4));
  EXPECT_NEAR(weighted_bce(torch::zeros_like(ones), g, ones).item<double>(), std::log(2.0), 1e-12);
}

TEST(WeightedLosses, PermutationEquivariant) {
  std::mt19937_64 rng(31);
  const auto x = to_tensor(random_plane(rng, 4, 4, -4, 4));
  const auto g = to_tensor(random_mask(rng, 4, 4));
  const auto w = to_tensor(random_plane(rng, 4, 4, 1, 4));
  const auto perm = torch::randperm(16, torch::TensorOptions().dtype(torch::kLong));
  auto p = [&](const torch::Tensor& t) { return t.flatten().index_select(0, perm).reshape({1, 1, 4, 4}); };
  EXPECT_NEAR(weighted_bce(x, g, w).item<double>(), weighted_bce(p(x), p(g), p(w)).item<double>(), 1e-14);
  EXPECT_NEAR(weighted_iou(x, g, w).item<double>(), weighted_iou(p(x), p(g), p(w)).item<double>(), 1e-14);
}

TEST(TotalLoss, SumOfTermsAndSaturatedZero) {
  std::mt19937_64 rng(6);
  const auto g = to_tensor(random_mask(rng, 8, 8));
  const auto sat = (g * 2 - 1) * 1e4;
  const auto perfect = total_loss(outputs_of({sat, sat, sat, sat}), g);
  EXPECT_LE(perfect.total.item<double>(), 1e-5);

  std::array<torch::Tensor, 4> s;
  for (auto& t : s) t = to_tensor(random_plane(rng, 8, 8, -3, 3));
  const auto b = total_loss(outputs_of(s), g);
  EXPECT_EQ(b.total.item<double>(),
            (b.s_g.total + b.s3.total + b.s4.total + b.s5.total).item<double>());
  EXPECT_EQ(b.s3.total.item<double>(), (b.s3.iou + b.s3.bce).item<double>());
  EXPECT_GE(b.total.item<double>(), 0.0);
}

TEST(TotalLoss, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<int> pix(0, 15);
  const LossOptions opt{3, 5.0};
  for (int t = 0; t < 50; ++t) {
    const auto g = to_tensor(random_mask(rng, 4, 4));
    std::array<torch::Tensor, 4> s;
    for (auto& x : s) x = to_tensor(random_plane(rng, 4, 4, -3, 3)).requires_grad_(true);
    total_loss(outputs_of(s), g, opt).total.backward();
    for (int k = 0; k < 4; ++k) {
      const int64_t i = pix(rng);
      const double analytic = s[k].grad().flatten()[i].item<double>();
      const double h = 1e-6;
      auto eval = [&](double delta) {
        torch::NoGradGuard ng;
        std::array<torch::Tensor, 4> c;
        for (int j = 0; j < 4; ++j) c[j] = s[j].detach().clone();
        c[k].view(-1)[i] += delta;
        return total_loss(outputs_of(c), g, opt).total.item<double>();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      EXPECT_LE(rel, 1e-4) << "instance " << t << " output " << k << " pixel " << i;
    }
  }
}

TEST(TotalLoss, ShapeErrors) {
  const auto a = torch::zeros({1, 1, 4, 4});
  EXPECT_THROW(weighted_bce(a, torch::zeros({1, 1, 4, 5}), a), ShapeError);
  EXPECT_THROW(pixel_weights(torch::zeros({4, 4})), ShapeError);
}
