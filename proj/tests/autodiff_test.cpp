#include <gtest/gtest.h>

#include <random>

#include "flare/grad_check.hpp"
#include "flare/ops.hpp"
#include "flare/tensor.hpp"
#include "support.hpp"

using flare::Tensor;

namespace {

using D = Tensor<double>;

TEST(Matmul, MatchesTripleLoopOracle) {
  std::mt19937_64 gen(7);
  int p = 5, q = 7, s = 4;
  auto av = refimpl::random_vec(gen, p * q, -2, 2);
  auto bv = refimpl::random_vec(gen, q * s, -2, 2);
  auto c = flare::matmul(D::from_data({p, q}, av), D::from_data({q, s}, bv));
  auto want = refimpl::matmul_ref(av, bv, p, q, s);
  ASSERT_EQ(c.shape(), (std::vector<int>{p, s}));
  for (int i = 0; i < p * s; ++i) EXPECT_NEAR(c.data()[i], want[i], 1e-12);
}

TEST(Matmul, SmallKnownProduct) {
  auto c = flare::matmul(D::from_data({2, 2}, {1, 2, 3, 4}),
                         D::from_data({2, 2}, {5, 6, 7, 8}));
  EXPECT_DOUBLE_EQ(c.at({0, 0}), 19);
  EXPECT_DOUBLE_EQ(c.at({0, 1}), 22);
  EXPECT_DOUBLE_EQ(c.at({1, 0}), 43);
  EXPECT_DOUBLE_EQ(c.at({1, 1}), 50);
}

TEST(Matmul, InnerDimensionMismatchNamesBothShapes) {
  auto a = D::zeros({2, 3});
  auto b = D::zeros({4, 5});
  try {
    flare::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const flare::DimensionError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Relu, ForwardAndSubgradientAtZero) {
  auto x = D::from_data({1, 3}, {-1.0, 0.0, 2.0}, true);
  auto y = flare::relu(x);
  EXPECT_DOUBLE_EQ(y.at({0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(y.at({0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(y.at({0, 2}), 2.0);
  flare::backward(flare::sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);  // subgradient at the kink is 0
  EXPECT_DOUBLE_EQ(x.grad()[2], 1.0);
}

TEST(Softmax, UniformRowAndOracleAndStability) {
  auto y = flare::softmax(D::from_data({2}, {0.0, 0.0}), 0);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.5);

  std::mt19937_64 gen(3);
  auto v = refimpl::random_vec(gen, 6, -3, 3);
  auto s = flare::softmax(D::from_data({2, 3}, v), 1);
  for (int i = 0; i < 2; ++i) {
    std::vector<double> row(v.begin() + i * 3, v.begin() + (i + 1) * 3);
    auto want = refimpl::softmax_row_ref(row);
    double rowsum = 0;
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR(s.at({i, j}), want[j], 1e-12);
      rowsum += s.at({i, j});
    }
    EXPECT_NEAR(rowsum, 1.0, 1e-12);
  }

  // Max subtraction keeps large logits finite.
  auto big = flare::softmax(D::from_data({2}, {1000.0, 999.0}), 0);
  EXPECT_TRUE(std::isfinite(big.data()[0]));
  EXPECT_NEAR(big.data()[0] + big.data()[1], 1.0, 1e-12);
}

TEST(Softmax, ColumnAxis) {
  auto s = flare::softmax(D::from_data({2, 2}, {0.0, 5.0, 0.0, -5.0}), 0);
  EXPECT_NEAR(s.at({0, 0}) + s.at({1, 0}), 1.0, 1e-12);
  EXPECT_NEAR(s.at({0, 1}) + s.at({1, 1}), 1.0, 1e-12);
  EXPECT_GT(s.at({0, 1}), 0.99);
}

TEST(LayerNorm, MatchesTwoPassOracle) {
  std::mt19937_64 gen(11);
  int m = 4, d = 6;
  auto xv = refimpl::random_vec(gen, m * d, -4, 4);
  auto gv = refimpl::random_vec(gen, d, 0.5, 1.5);
  auto bv = refimpl::random_vec(gen, d, -0.5, 0.5);
  auto y = flare::layer_norm(D::from_data({m, d}, xv), D::from_data({d}, gv),
                             D::from_data({d}, bv));
  auto want = refimpl::layer_norm_ref(xv, gv, bv, m, d, 1e-5);
  for (int i = 0; i < m * d; ++i) EXPECT_NEAR(y.data()[i], want[i], 1e-12);
}

TEST(LayerNorm, ConstantRowCollapsesToBias) {
  // Zero variance: eps inside the sqrt keeps this finite, xhat becomes 0.
  auto y = flare::layer_norm(D::full({1, 4}, 3.0),
                             D::full({4}, 2.0), D::from_data({4}, {1, 2, 3, 4}));
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(y.at({0, j}), 1.0 + j, 1e-9);
}

TEST(Embedding, LookupRowsAndOutOfRange) {
  auto table = D::from_data({3, 2}, {0, 1, 10, 11, 20, 21});
  auto e = flare::embedding_lookup(table, {2, 0, 2});
  EXPECT_DOUBLE_EQ(e.at({0, 0}), 20);
  EXPECT_DOUBLE_EQ(e.at({1, 1}), 1);
  EXPECT_DOUBLE_EQ(e.at({2, 0}), 20);
  EXPECT_THROW(flare::embedding_lookup(table, {3}), flare::IndexError);
  EXPECT_THROW(flare::embedding_lookup(table, {-1}), flare::IndexError);
}

TEST(CrossEntropy, KnownValueAndOracleAndStability) {
  auto loss = flare::cross_entropy(D::from_data({1, 2}, {0.0, 0.0}), {0});
  EXPECT_NEAR(loss.item(), 0.6931471805599453, 1e-15);

  std::mt19937_64 gen(5);
  int n = 4, C = 5;
  auto lv = refimpl::random_vec(gen, n * C, -3, 3);
  std::vector<int> labels{1, 0, 4, 2};
  auto l2 = flare::cross_entropy(D::from_data({n, C}, lv), labels);
  EXPECT_NEAR(l2.item(), refimpl::cross_entropy_ref(lv, labels, n, C), 1e-12);

  auto big = flare::cross_entropy(D::from_data({1, 2}, {1000.0, -1000.0}), {0});
  EXPECT_TRUE(std::isfinite(big.item()));
  EXPECT_NEAR(big.item(), 0.0, 1e-12);

  EXPECT_THROW(flare::cross_entropy(D::zeros({1, 2}), {2}), flare::IndexError);
}

TEST(Broadcast, SuffixShapes) {
  auto a = D::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = D::from_data({3}, {10, 20, 30});
  auto c = flare::add(a, b);
  EXPECT_DOUBLE_EQ(c.at({0, 0}), 11);
  EXPECT_DOUBLE_EQ(c.at({1, 2}), 36);
  auto d = flare::mul(b, a);  // small side first also works
  EXPECT_DOUBLE_EQ(d.at({1, 1}), 100);
  auto s = flare::sub(a, D::scalar(1.0));
  EXPECT_DOUBLE_EQ(s.at({0, 0}), 0);
  EXPECT_THROW(flare::add(a, D::zeros({2})), flare::DimensionError);
}

double check(const std::function<Tensor<double>()>& f,
             const std::vector<Tensor<double>>& params) {
  auto rep = flare::grad_check<double>(f, params);
  EXPECT_GT(rep.checked, 0);
  return rep.max_rel_err;
}

TEST(GradCheck, Matmul) {
  std::mt19937_64 gen(21);
  auto a = D::from_data({3, 4}, refimpl::random_vec(gen, 12, -1, 1), true);
  auto b = D::from_data({4, 2}, refimpl::random_vec(gen, 8, -1, 1), true);
  auto w = D::from_data({3, 2}, refimpl::random_vec(gen, 6, -1, 1));
  auto f = [&] { return flare::sum(flare::mul(flare::matmul(a, b), w)); };
  EXPECT_LT(check(f, {a, b}), 1e-4);
}

TEST(GradCheck, ReluAwayFromKink) {
  std::mt19937_64 gen(22);
  auto xv = refimpl::random_vec(gen, 12, -1, 1);
  for (auto& v : xv) v += (v >= 0 ? 0.1 : -0.1);  // keep clear of the kink
  auto x = D::from_data({3, 4}, xv, true);
  auto w = D::from_data({3, 4}, refimpl::random_vec(gen, 12, -1, 1));
  auto f = [&] { return flare::sum(flare::mul(flare::relu(x), w)); };
  EXPECT_LT(check(f, {x}), 1e-4);
}

TEST(GradCheck, SoftmaxBothAxes) {
  std::mt19937_64 gen(23);
  auto x = D::from_data({3, 4}, refimpl::random_vec(gen, 12, -2, 2), true);
  auto w = D::from_data({3, 4}, refimpl::random_vec(gen, 12, -1, 1));
  for (int axis : {0, 1}) {
    auto f = [&, axis] {
      return flare::sum(flare::mul(flare::softmax(x, axis), w));
    };
    EXPECT_LT(check(f, {x}), 1e-4) << "axis " << axis;
  }
}

TEST(GradCheck, LayerNormAllInputs) {
  std::mt19937_64 gen(24);
  auto x = D::from_data({3, 5}, refimpl::random_vec(gen, 15, -2, 2), true);
  auto g = D::from_data({5}, refimpl::random_vec(gen, 5, 0.5, 1.5), true);
  auto b = D::from_data({5}, refimpl::random_vec(gen, 5, -0.5, 0.5), true);
  auto w = D::from_data({3, 5}, refimpl::random_vec(gen, 15, -1, 1));
  auto f = [&] {
    return flare::sum(flare::mul(flare::layer_norm(x, g, b), w));
  };
  EXPECT_LT(check(f, {x, g, b}), 1e-4);
}

TEST(GradCheck, EmbeddingWithRepeatedIds) {
  std::mt19937_64 gen(25);
  auto table = D::from_data({5, 3}, refimpl::random_vec(gen, 15, -1, 1), true);
  std::vector<int> ids{4, 1, 4, 0};  // the repeat exercises scatter-add
  auto w = D::from_data({4, 3}, refimpl::random_vec(gen, 12, -1, 1));
  auto f = [&] {
    return flare::sum(flare::mul(flare::embedding_lookup(table, ids), w));
  };
  EXPECT_LT(check(f, {table}), 1e-4);
}

TEST(GradCheck, CrossEntropy) {
  std::mt19937_64 gen(26);
  auto logits = D::from_data({4, 3}, refimpl::random_vec(gen, 12, -2, 2), true);
  std::vector<int> labels{0, 2, 1, 2};
  auto f = [&] { return flare::cross_entropy(logits, labels); };
  EXPECT_LT(check(f, {logits}), 1e-4);
}

TEST(GradCheck, BroadcastArithmetic) {
  std::mt19937_64 gen(27);
  auto a = D::from_data({3, 4}, refimpl::random_vec(gen, 12, -1, 1), true);
  auto b = D::from_data({4}, refimpl::random_vec(gen, 4, 0.5, 1.5), true);
  auto w = D::from_data({3, 4}, refimpl::random_vec(gen, 12, -1, 1));
  auto f = [&] {
    auto y = flare::mul(flare::add(a, b), flare::sub(a, b));
    return flare::sum(flare::mul(y, w));
  };
  EXPECT_LT(check(f, {a, b}), 1e-4);
}

TEST(GradCheck, ShapePlumbingComposite) {
  std::mt19937_64 gen(28);
  auto x = D::from_data({4, 3}, refimpl::random_vec(gen, 12, -1, 1), true);
  auto f = [&] {
    auto top = flare::slice(x, 0, 0, 2);
    auto picked = flare::gather_rows(x, {3, 3, 1});
    auto cat = flare::concat<double>({top, picked}, 0);  // [5 x 3]
    auto wide = flare::concat<double>(
        {cat, flare::transpose(flare::transpose(cat))}, 1);  // [5 x 6]
    auto tiled = flare::tile_rows(wide, 2);
    auto flat = flare::reshape(tiled, {5, 12});
    return flare::mean(flare::mul(flat, flat));
  };
  EXPECT_LT(check(f, {x}), 1e-4);
}

TEST(GradCheck, ScaleSumMean) {
  std::mt19937_64 gen(29);
  auto x = D::from_data({2, 3}, refimpl::random_vec(gen, 6, -1, 1), true);
  auto f = [&] {
    return flare::add(flare::mean(flare::scale(x, 3.0)),
                      flare::sum(flare::mul(x, x)));
  };
  EXPECT_LT(check(f, {x}), 1e-4);
}

TEST(Backward, FanOutAccumulatesExactly) {
  auto x = D::from_data({1, 3}, {1.0, -2.0, 0.5}, true);
  auto z = flare::add(flare::sum(flare::mul(x, x)), flare::sum(flare::scale(x, 3.0)));
  flare::backward(z);
  for (int i = 0; i < 3; ++i)
    EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.data()[i] + 3.0);
}

TEST(Backward, DiamondGraphVisitedOnce) {
  auto x = D::from_data({1, 2}, {1.5, -0.5}, true);
  auto y = flare::mul(x, x);
  auto z = flare::add(y, y);  // same node used twice
  flare::backward(flare::sum(z));
  for (int i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 4.0 * x.data()[i]);
}

TEST(Backward, RequiresScalarLoss) {
  auto x = D::from_data({2, 2}, {1, 2, 3, 4}, true);
  EXPECT_THROW(flare::backward(flare::mul(x, x)), flare::ContractError);
}

TEST(Backward, ConstantGraphIsANoOp) {
  auto x = D::from_data({2, 2}, {1, 2, 3, 4});  // no grad anywhere
  auto s = flare::sum(x);
  flare::backward(s);  // must not throw
  EXPECT_DOUBLE_EQ(s.item(), 10.0);
}

TEST(MemoryStats, TracksLiveBytes) {
  long long before = flare::MemoryStats::live_bytes().load();
  {
    auto x = D::zeros({100, 100});
    EXPECT_GE(flare::MemoryStats::live_bytes().load(),
              before + 100 * 100 * (long long)sizeof(double));
    EXPECT_GE(flare::MemoryStats::peak_bytes().load(),
              flare::MemoryStats::live_bytes().load());
  }
  EXPECT_EQ(flare::MemoryStats::live_bytes().load(), before);
}

}  // namespace
