#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "flare/ops.hpp"
#include "flare/optim.hpp"
#include "flare/tensor.hpp"

namespace flare {
namespace {

// Plain-loop reference AdamW used to cross-check the library update rule.
struct RefAdamW {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
  std::vector<double> m, v;
  long t = 0;

  explicit RefAdamW(size_t n, double lr_) : lr(lr_), m(n, 0), v(n, 0) {}

  void step(std::vector<double>& p, const std::vector<double>& g) {
    ++t;
    double bc1 = 1 - std::pow(b1, t);
    double bc2 = 1 - std::pow(b2, t);
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1 - b1) * g[k];
      v[k] = b2 * v[k] + (1 - b2) * g[k] * g[k];
      double mh = m[k] / bc1;
      double vh = v[k] / bc2;
      p[k] -= lr * (mh / (std::sqrt(vh) + eps) + wd * p[k]);
    }
  }
};

TEST(AdamW, MatchesReferenceOnQuadratic) {
  auto p = Tensor<double>::from_data({2, 2}, {1.0, -2.0, 0.5, 3.0}, true);
  std::vector<double> target = {0.3, 0.1, -0.7, 1.2};
  auto tgt = Tensor<double>::from_data({2, 2}, target);

  AdamW<double> opt({{{p}, 0.05}});
  RefAdamW ref(4, 0.05);
  std::vector<double> rp = p.data();

  for (int it = 0; it < 7; ++it) {
    opt.zero_grad();
    auto diff = sub(p, tgt);
    auto loss = sum(mul(diff, diff));
    backward(loss);

    std::vector<double> rg(4);
    for (int k = 0; k < 4; ++k) rg[k] = 2 * (rp[k] - target[k]);
    ref.step(rp, rg);
    opt.step();

    for (int k = 0; k < 4; ++k) EXPECT_NEAR(p.data()[k], rp[k], 1e-12);
  }
  EXPECT_EQ(opt.step_count(), 7);
}

TEST(AdamW, FirstStepHandComputed) {
  auto p = Tensor<double>::scalar(1.0, true);
  p.grad_mut()[0] = 0.5;
  AdamW<double> opt({{{p}, 0.1}});
  opt.step();
  // m=0.05, v=0.00025; mhat=0.5, vhat=0.25
  // p -= 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0)
  EXPECT_NEAR(p.item(), 0.899000002, 1e-9);
}

TEST(AdamW, WeightDecayIsDecoupled) {
  // With zero gradient the Adam term is exactly zero, so each step is a
  // pure multiplicative decay by (1 - lr * wd).
  auto p = Tensor<double>::scalar(2.0, true);
  p.grad_mut();
  AdamW<double> opt({{{p}, 0.1}});
  for (int i = 0; i < 3; ++i) opt.step();
  double expected = 2.0;
  for (int i = 0; i < 3; ++i) expected *= 1.0 - 0.1 * 0.01;
  EXPECT_DOUBLE_EQ(p.item(), expected);
}

TEST(AdamW, GroupsUseTheirOwnLearningRate) {
  auto a = Tensor<double>::scalar(0.0, true);
  auto b = Tensor<double>::scalar(0.0, true);
  a.grad_mut()[0] = 1.0;
  b.grad_mut()[0] = 1.0;
  AdamW<double> opt({{{a}, 0.2}, {{b}, 0.002}});
  opt.step();
  // At zero weight the decay term vanishes, so the step is lr * mhat/(...).
  EXPECT_NEAR(a.item() / b.item(), 100.0, 1e-6);
}

TEST(AdamW, ConvergesOnQuadratic) {
  auto p = Tensor<float>::from_data({3}, {5.0f, -4.0f, 2.0f}, true);
  auto tgt = Tensor<float>::from_data({3}, {1.0f, 2.0f, -1.0f});
  AdamW<float> opt({{{p}, 0.05f}}, 0.9f, 0.999f, 1e-8f, 0.0f);
  for (int it = 0; it < 400; ++it) {
    opt.zero_grad();
    auto d = sub(p, tgt);
    backward(sum(mul(d, d)));
    opt.step();
  }
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p.data()[k], tgt.data()[k], 1e-2f);
}

TEST(AdamW, ZeroGradClearsAccumulation) {
  auto p = Tensor<double>::scalar(1.0, true);
  AdamW<double> opt({{{p}, 0.1}});
  backward(mul(p, p));
  EXPECT_NE(p.grad()[0], 0.0);
  opt.zero_grad();
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(ClipGradNorm, ScalesDownLargeGradients) {
  auto a = Tensor<double>::scalar(0.0, true);
  auto b = Tensor<double>::scalar(0.0, true);
  a.grad_mut()[0] = 3.0;
  b.grad_mut()[0] = 4.0;
  double norm = clip_grad_norm<double>({a, b}, 1.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-12);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-12);
}

TEST(ClipGradNorm, LeavesSmallGradientsAlone) {
  auto a = Tensor<double>::from_data({2}, {0.3, 0.4}, true);
  a.grad_mut() = {0.3, 0.4};
  double norm = clip_grad_norm<double>({a}, 1.0);
  EXPECT_DOUBLE_EQ(norm, 0.5);
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.3);
  EXPECT_DOUBLE_EQ(a.grad()[1], 0.4);
}

TEST(ClipGradNorm, GlobalNormSpansAllTensors) {
  auto a = Tensor<double>::from_data({2}, {0.0, 0.0}, true);
  auto b = Tensor<double>::from_data({2}, {0.0, 0.0}, true);
  a.grad_mut() = {2.0, 0.0};
  b.grad_mut() = {0.0, 2.0};
  double norm = clip_grad_norm<double>({a, b}, 2.0);
  EXPECT_NEAR(norm, std::sqrt(8.0), 1e-12);
  // Each component is scaled by the same factor 2/sqrt(8).
  EXPECT_NEAR(a.grad()[0], 2.0 * 2.0 / std::sqrt(8.0), 1e-12);
  EXPECT_NEAR(b.grad()[1], 2.0 * 2.0 / std::sqrt(8.0), 1e-12);
}

}  // namespace
}  // namespace flare
