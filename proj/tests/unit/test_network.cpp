#include <gtest/gtest.h>

#include <random>

#include "gradient_suite.hpp"
#include "iqt/error.hpp"
#include "iqt/network.hpp"

namespace {

using namespace iqt;
using namespace iqt::net;

std::size_t conv(int cin, int cout, int k = 3) { return static_cast<std::size_t>(k * k * k) * cin * cout + cout; }

std::size_t encoder(int in, int b) { return conv(in, b) + conv(b, b) + conv(b, 2 * b) + conv(2 * b, 2 * b) + conv(2 * b, 4 * b) + conv(4 * b, 4 * b); }
std::size_t bottleneck(int b) { return 2 * conv(4 * b, 4 * b); }
std::size_t decoder(int b) { return conv(6 * b, 2 * b) + conv(2 * b, 2 * b) + conv(3 * b, b) + conv(b, b); }
std::size_t head(int b) { return conv(b, 6, 1); }

NetworkConfig config(int base, bool multimodal) {
  NetworkConfig c;
  c.base_channels = base;
  c.multimodal = multimodal;
  return c;
}

TEST(Network, ParameterCountsFollowLayerArithmetic) {
  for (int b : {1, 4, 16}) {
    const ModelParams multi = build_model(config(b, true), 1);
    const ModelParams uni = build_model(config(b, false), 1);
    EXPECT_EQ(parameter_count(multi, kDtiEncoder), encoder(6, b));
    EXPECT_EQ(parameter_count(multi, kT1wEncoder), encoder(1, b));
    EXPECT_EQ(parameter_count(multi, kBottleneck), bottleneck(b));
    EXPECT_EQ(parameter_count(multi, kDecoder), decoder(b));
    EXPECT_EQ(parameter_count(multi, kHead), head(b));
    EXPECT_EQ(parameter_count(uni), encoder(6, b) + bottleneck(b) + decoder(b) + head(b));
    EXPECT_EQ(parameter_count(uni, kT1wEncoder), 0u);
  }
  EXPECT_EQ(parameter_count(build_model(config(1, false), 0)), 2443u);
  EXPECT_EQ(parameter_count(build_model(config(1, true), 0)), 3321u);
}

TEST(Network, BudgetInvariant) {
  const ModelParams multi = build_model(config(16, true), 3);
  const ModelParams uni = build_model(config(16, false), 3);
  EXPECT_EQ(parameter_count(multi) - parameter_count(uni), parameter_count(multi, kT1wEncoder));
  for (auto group : {kDtiEncoder, kBottleneck, kDecoder, kHead}) {
    EXPECT_EQ(shape_list(multi, group), shape_list(uni, group)) << group;
    for (const auto& [name, shape] : shape_list(uni, group)) EXPECT_EQ(multi.get(name).data, uni.get(name).data) << name;
  }
}

TEST(Network, InitIsSeededAndScaled) {
  const ModelParams a = build_model(config(4, true), 5);
  const ModelParams b = build_model(config(4, true), 5);
  const ModelParams c = build_model(config(4, true), 6);
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i].value.data, b.params[i].value.data);
  EXPECT_NE(a.get("dti_enc.l1.conv1.weight").data, c.get("dti_enc.l1.conv1.weight").data);
  const double bound = std::sqrt(6.0 / (27.0 * 6.0));
  for (float w : a.get("dti_enc.l1.conv1.weight").data) EXPECT_LE(std::abs(w), bound);
  for (float w : a.get("dti_enc.l1.conv1.bias").data) EXPECT_EQ(w, 0.0f);
  const double head_bound = std::sqrt(3.0 / 4.0);
  for (float w : a.get("head.weight").data) EXPECT_LE(std::abs(w), head_bound);
}

TEST(Network, ForwardShapesAndModeChecks) {
  std::mt19937_64 rng(2);
  const ModelParams multi = build_model(config(2, true), 1);
  const ModelParams uni = build_model(config(2, false), 1);
  const ad::Tensor lr = iqt::testing::random_tensor({2, 6, 8, 12, 16}, rng, 0.0f, 1.0f);
  const ad::Tensor t1 = iqt::testing::random_tensor({2, 1, 8, 12, 16}, rng, 0.0f, 1.0f);
  EXPECT_EQ(predict(multi, lr, &t1).shape, (ad::Shape{2, 6, 8, 12, 16}));
  EXPECT_EQ(predict(uni, lr, nullptr).shape, (ad::Shape{2, 6, 8, 12, 16}));
  EXPECT_THROW(predict(multi, lr, nullptr), PreconditionError);
  EXPECT_THROW(predict(uni, lr, &t1), PreconditionError);
  EXPECT_THROW(predict(uni, ad::Tensor({1, 6, 8, 8, 6}), nullptr), ShapeError);
  EXPECT_THROW(predict(multi, lr, &lr), ShapeError);

  ad::Graph g;
  const auto bound = bind_parameters(g, multi, false);
  const ad::Var out = forward(g, multi, bound, g.constant(lr), g.constant(t1));
  EXPECT_EQ(g.value(out).data, predict(multi, lr, &t1).data);
}

TEST(Network, ConfigJsonAndValidation) {
  NetworkConfig c = config(8, false);
  EXPECT_EQ(network_config_from_json(to_json(c)), c);
  c.base_channels = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = config(8, true);
  c.levels = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(build_model(c, 0), ConfigError);
}

TEST(Network, ComposedGradientCheck) {
  for (bool multimodal : {true, false}) {
    const auto checks = iqt::testing::run_case(iqt::testing::network_case(multimodal), 20);
    for (std::size_t i = 0; i < checks.size(); ++i) {
      EXPECT_LT(checks[i].rel_error, 1e-3) << "instance " << i << " analytic " << checks[i].analytic << " numeric "
                                           << checks[i].numeric;
      EXPECT_LT(checks[i].forward_gap, 1e-5) << "instance " << i;
    }
  }
}

}  // namespace
