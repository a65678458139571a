#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"
#include "tnet/core/ops.hpp"

using namespace tnet;
using tnet::testing::op_gradient_error;
using tnet::testing::random_param;

namespace {

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, int stride,
                          int pad) {
  const int lout = (x.length() + 2 * pad - w.length()) / stride + 1;
  Tensor<double> y(w.channels(), x.batch(), lout);
  for (int o = 0; o < w.channels(); ++o)
    for (int s = 0; s < x.batch(); ++s)
      for (int t = 0; t < lout; ++t) {
        double acc = b ? (*b)(o, 0, 0) : 0.0;
        for (int c = 0; c < x.channels(); ++c)
          for (int k = 0; k < w.length(); ++k) {
            const int pos = t * stride + k - pad;
            if (pos >= 0 && pos < x.length()) acc += w(o, c, k) * x(c, s, pos);
          }
        y(o, s, t) = acc;
      }
  return y;
}

}  // namespace

TEST(Conv1d, MatchesNaiveLoopsAcrossStridesAndPadding) {
  Rng rng(1);
  for (auto [k, stride, pad] : std::vector<std::tuple<int, int, int>>{{1, 1, 0}, {3, 1, 1}, {7, 2, 3}, {3, 2, 1}, {1, 2, 0}}) {
    auto x = random_param("x", 3, 2, 13, rng);
    auto w = random_param("w", 4, 3, k, rng);
    auto b = random_param("b", 4, 1, 1, rng);
    Graph<double> g(false);
    auto y = ops::conv1d(g, g.param(x), g.param(w), g.param(b), stride, pad);
    const auto ref = naive_conv(x->value, w->value, &b->value, stride, pad);
    ASSERT_TRUE(y->val().same_shape(ref));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y->val()[i], ref[i], 1e-12);
  }
}

TEST(Conv1d, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  auto x = random_param("x", 3, 2, 11, rng);
  auto w = random_param("w", 2, 3, 3, rng);
  auto b = random_param("b", 2, 1, 1, rng);
  const double err = op_gradient_error(
      {x, w, b}, [](Graph<double>& g, const auto& v) { return ops::conv1d(g, v[0], v[1], v[2], 2, 1); }, 3);
  EXPECT_LT(err, 1e-6);
}

TEST(Conv1d, ChannelMismatchIsShapeError) {
  Rng rng(3);
  auto x = random_param("x", 3, 1, 8, rng);
  auto w = random_param("w", 2, 4, 3, rng);
  Graph<double> g(false);
  EXPECT_THROW(ops::conv1d(g, g.param(x), g.param(w), Var<double>{}, 1, 1), ShapeError);
}

TEST(Norm, BatchAndInstanceGradients) {
  Rng rng(4);
  for (auto mode : {ops::NormMode::batch, ops::NormMode::instance}) {
    auto x = random_param("x", 3, 2, 9, rng);
    auto gamma = random_param("gamma", 3, 1, 1, rng);
    auto beta = random_param("beta", 3, 1, 1, rng);
    auto mean = std::make_shared<Parameter<double>>("m", ParamKind::norm_stat, Tensor<double>(3, 1, 1));
    auto var = std::make_shared<Parameter<double>>("v", ParamKind::norm_stat, Tensor<double>(3, 1, 1, 1.0));
    const double err = op_gradient_error(
        {x, gamma, beta},
        [&](Graph<double>& g, const auto& v) {
          return ops::norm(g, v[0], v[1], v[2], mean, var, mode, true, 0.1, 1e-5);
        },
        5);
    EXPECT_LT(err, 1e-5);
  }
}

TEST(Norm, TrainingOutputHasZeroMeanUnitVariancePerChannel) {
  Rng rng(5);
  auto x = random_param("x", 2, 3, 20, rng, 3.0);
  auto gamma = std::make_shared<Parameter<double>>("g", ParamKind::norm_affine, Tensor<double>(2, 1, 1, 1.0));
  auto beta = std::make_shared<Parameter<double>>("b", ParamKind::norm_affine, Tensor<double>(2, 1, 1, 0.0));
  auto mean = std::make_shared<Parameter<double>>("m", ParamKind::norm_stat, Tensor<double>(2, 1, 1));
  auto var = std::make_shared<Parameter<double>>("v", ParamKind::norm_stat, Tensor<double>(2, 1, 1, 1.0));
  Graph<double> g(false);
  auto y = ops::norm(g, g.param(x), g.param(gamma), g.param(beta), mean, var, ops::NormMode::batch, true, 0.1, 0.0);
  for (int c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (int n = 0; n < 3; ++n)
      for (int t = 0; t < 20; ++t) {
        s += y->val()(c, n, t);
        s2 += y->val()(c, n, t) * y->val()(c, n, t);
      }
    EXPECT_NEAR(s / 60, 0.0, 1e-10);
    EXPECT_NEAR(s2 / 60, 1.0, 1e-9);
  }
}

TEST(ElementwiseOps, Gradients) {
  Rng rng(6);
  auto a = random_param("a", 2, 2, 7, rng);
  auto b = random_param("b", 2, 2, 7, rng);
  EXPECT_LT(op_gradient_error({a}, [](Graph<double>& g, const auto& v) { return ops::sigmoid(g, v[0]); }, 7), 1e-5);
  EXPECT_LT(op_gradient_error({a, b}, [](Graph<double>& g, const auto& v) { return ops::add(g, v[0], v[1]); }, 8),
            1e-6);
  // Values are far from zero with overwhelming probability, so ReLU is smooth here.
  EXPECT_LT(op_gradient_error({a}, [](Graph<double>& g, const auto& v) { return ops::relu(g, v[0]); }, 9), 1e-6);
}

TEST(ResamplingOps, Gradients) {
  Rng rng(10);
  auto x = random_param("x", 2, 2, 6, rng);
  EXPECT_LT(op_gradient_error({x}, [](Graph<double>& g, const auto& v) { return ops::upsample_nearest(g, v[0], 4); }, 11),
            1e-6);
  for (int out : {6, 13, 24, 3})
    EXPECT_LT(op_gradient_error({x}, [out](Graph<double>& g, const auto& v) { return ops::upsample_linear(g, v[0], out); },
                                12),
              1e-6);
  EXPECT_LT(op_gradient_error({x}, [](Graph<double>& g, const auto& v) { return ops::maxpool1d(g, v[0], 3, 2, 1); }, 13),
            1e-6);
}

TEST(ResamplingOps, LinearUpsampleOfConstantIsConstant) {
  Graph<double> g(false);
  auto y = ops::upsample_linear(g, g.constant(Tensor<double>(1, 1, 5, 2.5)), 17);
  for (double v : y->val().vec()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(StructuralOps, ConcatFlattenPickGradients) {
  Rng rng(14);
  auto a = random_param("a", 2, 2, 5, rng);
  auto b = random_param("b", 1, 2, 5, rng);
  EXPECT_LT(op_gradient_error({a, b}, [](Graph<double>& g, const auto& v) { return ops::concat_channels(g, {v[0], v[1]}); },
                              15),
            1e-6);
  auto l0 = random_param("l0", 4, 2, 4, rng);
  auto l1 = random_param("l1", 4, 2, 2, rng);
  EXPECT_LT(op_gradient_error({l0, l1},
                              [](Graph<double>& g, const auto& v) { return ops::flatten_levels(g, {v[0], v[1]}, 2, 2); }, 16),
            1e-6);
  EXPECT_LT(op_gradient_error({a}, [](Graph<double>& g, const auto& v) { return ops::pick(g, v[0], 1, 1, 3); }, 17), 1e-6);
}

TEST(StructuralOps, FlattenOrderIsLevelPositionSlot) {
  // Two levels, A=2 anchors, one component: channel a of level l at position p
  // lands at offset(l) + p*A + a.
  Tensor<double> lv0(2, 1, 3), lv1(2, 1, 1);
  for (int a = 0; a < 2; ++a)
    for (int p = 0; p < 3; ++p) lv0(a, 0, p) = 10 * p + a;
  lv1(0, 0, 0) = 100;
  lv1(1, 0, 0) = 101;
  Graph<double> g(false);
  auto y = ops::flatten_levels(g, {g.constant(lv0), g.constant(lv1)}, 2, 1);
  const std::vector<double> expect{0, 1, 10, 11, 20, 21, 100, 101};
  ASSERT_EQ(y->val().length(), 8);
  for (int m = 0; m < 8; ++m) EXPECT_EQ(y->val()(0, 0, m), expect[m]);
}

TEST(Graph, DisabledGraphRecordsNothing) {
  Rng rng(18);
  auto x = random_param("x", 1, 1, 4, rng);
  Graph<double> g(false);
  auto y = ops::sigmoid(g, g.param(x));
  EXPECT_FALSE(y->requires_grad);
  g.backward(y);
  for (double v : x->grad.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Rng, SameSeedSameStreamDifferentSeedDifferentStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next();
    EXPECT_EQ(va, b.next());
    EXPECT_NE(va, c.next());
  }
}

TEST(Rng, UniformAndNormalMoments) {
  Rng rng(7);
  double su = 0, sn = 0, sn2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.015);
}

TEST(Rng, BelowIsInRangeAndShuffleIsPermutation) {
  Rng rng(8);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) ++counts[rng.below(5)];
  for (int c : counts) EXPECT_GT(c, 800);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(v.begin(), v.end());
  EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 50u);
}

TEST(Rng, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 10; ++a)
    for (std::uint64_t b = 0; b < 10; ++b) seen.insert(derive_seed(0, a, b));
  EXPECT_EQ(seen.size(), 100u);
}
