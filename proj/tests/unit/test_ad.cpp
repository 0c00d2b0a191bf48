#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gradient_suite.hpp"
#include "iqt/ad/adam.hpp"
#include "iqt/ad/checkpoint.hpp"
#include "iqt/ad/graph.hpp"
#include "iqt/error.hpp"

namespace {

using namespace iqt;
using namespace iqt::ad;
using iqt::testing::random_tensor;

constexpr int kInstances = 20;
constexpr double kRelTol = 1e-3;

// Direct cross-correlation in double for comparison.
std::vector<double> naive_conv(const Tensor& x, const Tensor& k, const Tensor& b) {
  const int n = x.dim(0), ci = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const int co = k.dim(0), ks = k.dim(2), r = ks / 2;
  std::vector<double> out(static_cast<std::size_t>(n) * co * d * h * w);
  for (int in = 0; in < n; ++in)
    for (int o = 0; o < co; ++o)
      for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            double s = b.data[o];
            for (int c = 0; c < ci; ++c)
              for (int dz = 0; dz < ks; ++dz)
                for (int dy = 0; dy < ks; ++dy)
                  for (int dx = 0; dx < ks; ++dx) {
                    const int zz = z + dz - r, yy = y + dy - r, xs = xx + dx - r;
                    if (zz < 0 || yy < 0 || xs < 0 || zz >= d || yy >= h || xs >= w) continue;
                    s += static_cast<double>(k.data[(((o * ci + c) * ks + dz) * ks + dy) * ks + dx]) *
                         x.data[((((in * ci + c) * d + zz) * h + yy) * w) + xs];
                  }
            out[((((in * co + o) * d + z) * h + y) * w) + xx] = s;
          }
  return out;
}

TEST(Conv3d, MatchesDirectSum) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 3, 5, 6, 7}, rng);
  const Tensor k = random_tensor({4, 3, 3, 3, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  Graph g;
  const Tensor& out = g.value(conv3d(g, g.constant(x), g.constant(k), g.constant(b)));
  const auto ref = naive_conv(x, k, b);
  ASSERT_EQ(out.shape, (Shape{2, 4, 5, 6, 7}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.data[i], ref[i], 1e-5);
}

TEST(Conv3d, UnitKernelIsIdentity) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
  Tensor k({2, 2, 1, 1, 1});
  k.data = {1, 0, 0, 1};
  Graph g;
  const Tensor& out = g.value(conv3d(g, g.constant(x), g.constant(k), g.constant(Tensor({2}))));
  EXPECT_EQ(out.data, x.data);
}

TEST(Conv3d, RejectsEvenKernel) {
  Graph g;
  EXPECT_THROW(conv3d(g, g.constant(Tensor({1, 1, 4, 4, 4})), g.constant(Tensor({1, 1, 2, 2, 2})), g.constant(Tensor({1}))),
               ShapeError);
}

TEST(Maxpool, PicksBlockMaximum) {
  Tensor x({1, 1, 2, 2, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<float>((i * 7) % 16);
  Graph g;
  const Tensor& out = g.value(maxpool2(g, g.constant(x)));
  ASSERT_EQ(out.shape, (Shape{1, 1, 1, 1, 2}));
  float m0 = 0, m1 = 0;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int xx = 0; xx < 4; ++xx) (xx < 2 ? m0 : m1) = std::max(xx < 2 ? m0 : m1, x.data[(z * 2 + y) * 4 + xx]);
  EXPECT_EQ(out.data[0], m0);
  EXPECT_EQ(out.data[1], m1);
}

TEST(Maxpool, TieRoutesToFirst) {
  Graph g;
  const Var x = g.variable(Tensor({1, 1, 2, 2, 2}, 1.0f));
  const Var y = maxpool2(g, x);
  g.backward(y);
  const auto grad = g.grad(x);
  EXPECT_EQ(grad[0], 1.0f);
  for (std::size_t i = 1; i < grad.size(); ++i) EXPECT_EQ(grad[i], 0.0f);
}

TEST(Upsample, HalfPixelWeightsOnALine) {
  Tensor x({1, 1, 1, 1, 2});
  x.data = {1.0f, 5.0f};
  Graph g;
  const Tensor& out = g.value(upsample2_trilinear(g, g.constant(x)));
  ASSERT_EQ(out.shape, (Shape{1, 1, 2, 2, 4}));
  const float row[4] = {1.0f, 2.0f, 4.0f, 5.0f};
  for (int i = 0; i < 16; ++i) EXPECT_FLOAT_EQ(out.data[i], row[i % 4]);
}

TEST(Upsample, BackwardIsAdjoint) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({1, 2, 3, 4, 5}, rng);
  const Tensor y = random_tensor({1, 2, 6, 8, 10}, rng);
  Graph g;
  const Var vx = g.variable(x);
  const Var up = upsample2_trilinear(g, vx);
  g.backward(up, y.data);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += static_cast<double>(g.value(up).data[i]) * y.data[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += static_cast<double>(x.data[i]) * g.grad(vx)[i];
  EXPECT_NEAR(lhs, rhs, 1e-4 * std::abs(lhs));
}

TEST(Concat, OrdersChannels) {
  Graph g;
  const Var a = g.constant(Tensor({1, 1, 1, 1, 2}, 1.0f));
  const Var b = g.constant(Tensor({1, 2, 1, 1, 2}, 2.0f));
  const Tensor& out = g.value(concat_channels(g, {a, b}));
  EXPECT_EQ(out.shape, (Shape{1, 3, 1, 1, 2}));
  EXPECT_EQ(out.data, (std::vector<float>{1, 1, 2, 2, 2, 2}));
}

TEST(L1Loss, MeanAbsoluteError) {
  Graph g;
  const Var p = g.variable(Tensor({1, 1, 1, 1, 4}, std::vector<float>{1, 2, 3, 4}));
  const Var l = l1_loss(g, p, Tensor({1, 1, 1, 1, 4}, std::vector<float>{0, 2, 5, 4.5f}));
  EXPECT_FLOAT_EQ(g.value(l).data[0], (1.0f + 0.0f + 2.0f + 0.5f) / 4.0f);
  g.backward(l);
  EXPECT_EQ(std::vector<float>(g.grad(p).begin(), g.grad(p).end()), (std::vector<float>{0.25f, 0.0f, -0.25f, -0.25f}));
}

TEST(Graph, BackwardNeedsScalarOrSeed) {
  Graph g;
  const Var x = g.variable(Tensor({2}, 1.0f));
  EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Graph, ConstantsGetNoGradient) {
  Graph g;
  const Var a = g.constant(Tensor({1, 1, 2, 2, 2}, 1.0f));
  const Var r = relu(g, a);
  EXPECT_FALSE(g.requires_grad(r));
}

class OpGradient : public ::testing::TestWithParam<iqt::testing::GradCase> {};

TEST_P(OpGradient, MatchesDoubleReference) {
  const auto checks = iqt::testing::run_case(GetParam(), kInstances);
  for (std::size_t i = 0; i < checks.size(); ++i) {
    EXPECT_LT(checks[i].rel_error, kRelTol) << "instance " << i << " analytic " << checks[i].analytic << " numeric "
                                            << checks[i].numeric;
    EXPECT_LT(checks[i].forward_gap, 1e-5) << "instance " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(GradCheck, OpGradient, ::testing::ValuesIn(iqt::testing::op_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet p{{"w", Tensor({3}, std::vector<float>{1.0f, -2.0f, 0.5f})}};
  AdamState s = AdamState::for_parameters(p, 0.01);
  const std::vector<std::vector<float>> g{{0.3f, -4.0f, 1e-3f}};
  adam_step(p, g, s);
  EXPECT_EQ(s.step, 1);
  EXPECT_NEAR(p[0].value.data[0], 1.0f - 0.01f, 1e-6);
  EXPECT_NEAR(p[0].value.data[1], -2.0f + 0.01f, 1e-6);
  EXPECT_NEAR(p[0].value.data[2], 0.5f - 0.01f, 2e-5);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
  ParameterSet p{{"a", Tensor({2}, 1.0f)}, {"b", Tensor({2}, 1.0f)}};
  AdamState s = AdamState::for_parameters(p);
  const std::vector<std::vector<float>> g{{0.1f, 0.1f}, {NAN, 0.0f}};
  EXPECT_THROW(adam_step(p, g, s), NumericError);
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(p[0].value.data[0], 1.0f);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  std::mt19937_64 rng(5);
  Checkpoint c;
  c.params = {{"conv.weight", random_tensor({2, 1, 3, 3, 3}, rng)}, {"conv.bias", random_tensor({2}, rng)}};
  c.adam = AdamState::for_parameters(c.params, 2e-4);
  const std::vector<std::vector<float>> g{std::vector<float>(54, 0.1f), std::vector<float>(2, -0.2f)};
  adam_step(c.params, g, c.adam);
  c.extra = {{"note", "x"}};
  const auto path = std::filesystem::temp_directory_path() / "iqt_test_ckpt.ckpt";
  write_checkpoint(c, path);
  const Checkpoint r = read_checkpoint(path);
  ASSERT_EQ(r.params.size(), 2u);
  EXPECT_EQ(r.params[0].name, "conv.weight");
  EXPECT_EQ(r.params[0].value.data, c.params[0].value.data);
  EXPECT_EQ(r.adam.m, c.adam.m);
  EXPECT_EQ(r.adam.v, c.adam.v);
  EXPECT_EQ(r.adam.step, 1);
  EXPECT_DOUBLE_EQ(r.adam.learning_rate, 2e-4);
  EXPECT_EQ(r.extra, c.extra);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
  EXPECT_THROW(read_checkpoint(path), Error);
  {
    std::ofstream out(path, std::ios::trunc);
    out << "{\"magic\":\"NOPE\"}\n";
  }
  EXPECT_THROW(read_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}

}  // namespace
