#include "iqt/network.hpp"

#include <cmath>
#include <random>

#include "iqt/error.hpp"

namespace iqt::net {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string level_name(int level) { return "l" + std::to_string(level); }

struct Builder {
  const NetworkConfig& cfg;
  std::uint64_t seed;
  ad::ParameterSet out;

  void conv(const std::string& prefix, int cout, int cin, int k, bool relu_follows) {
    const int fan_in = cin * k * k * k;
    const double bound = std::sqrt((relu_follows ? 6.0 : 3.0) / fan_in);
    ad::Tensor w(ad::Shape{cout, cin, k, k, k});
    std::mt19937_64 rng(seed ^ fnv1a(prefix));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (float& x : w.data) x = static_cast<float>(u(rng));
    out.push_back({prefix + "weight", std::move(w)});
    out.push_back({prefix + "bias", ad::Tensor(ad::Shape{cout})});
  }

  void block(const std::string& prefix, int cin, int cout) {
    for (int i = 1; i <= cfg.convs_per_block; ++i) {
      conv(prefix + "conv" + std::to_string(i) + ".", cout, i == 1 ? cin : cout, 3, true);
    }
  }

  void encoder(std::string_view group, int in_channels) {
    int cin = in_channels;
    for (int l = 1; l <= cfg.levels; ++l) {
      const int c = cfg.base_channels << (l - 1);
      block(std::string(group) + level_name(l) + ".", cin, c);
      cin = c;
    }
  }
};

}  // namespace

void NetworkConfig::validate() const {
  if (base_channels < 1) throw ConfigError("network: base_channels must be positive");
  if (levels != 3) throw ConfigError("network: levels must be 3");
  if (dti_in_channels != 6 || out_channels != 6) throw ConfigError("network: DTI input and output must have 6 channels");
  if (t1w_in_channels != 1) throw ConfigError("network: T1w input must have 1 channel");
  if (convs_per_block < 1) throw ConfigError("network: convs_per_block must be positive");
}

nlohmann::json to_json(const NetworkConfig& c) {
  return {{"base_channels", c.base_channels}, {"levels", c.levels},         {"dti_in_channels", c.dti_in_channels},
          {"t1w_in_channels", c.t1w_in_channels}, {"out_channels", c.out_channels}, {"multimodal", c.multimodal},
          {"convs_per_block", c.convs_per_block}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    c.base_channels = j.value("base_channels", c.base_channels);
    c.levels = j.value("levels", c.levels);
    c.dti_in_channels = j.value("dti_in_channels", c.dti_in_channels);
    c.t1w_in_channels = j.value("t1w_in_channels", c.t1w_in_channels);
    c.out_channels = j.value("out_channels", c.out_channels);
    c.multimodal = j.value("multimodal", c.multimodal);
    c.convs_per_block = j.value("convs_per_block", c.convs_per_block);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t ModelParams::index(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == name) return i;
  }
  throw ConfigError("model has no parameter named '" + std::string(name) + "'");
}

ModelParams build_model(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Builder b{cfg, seed, {}};
  const int base = cfg.base_channels;
  const int deep = base << (cfg.levels - 1);
  b.encoder(kDtiEncoder, cfg.dti_in_channels);
  if (cfg.multimodal) b.encoder(kT1wEncoder, cfg.t1w_in_channels);
  b.block(std::string(kBottleneck), deep, deep);
  int below = deep;
  for (int l = cfg.levels - 1; l >= 1; --l) {
    const int c = base << (l - 1);
    b.block(std::string(kDecoder) + level_name(l) + ".", below + c, c);
    below = c;
  }
  b.conv(std::string(kHead), cfg.out_channels, base, 1, false);
  return ModelParams{cfg, std::move(b.out)};
}

std::size_t parameter_count(const ModelParams& p) { return ad::parameter_count(p.params); }

std::size_t parameter_count(const ModelParams& p, std::string_view prefix) {
  std::size_t n = 0;
  for (const auto& param : p.params) {
    if (param.name.starts_with(prefix)) n += param.value.size();
  }
  return n;
}

std::vector<std::pair<std::string, ad::Shape>> shape_list(const ModelParams& p, std::string_view prefix) {
  std::vector<std::pair<std::string, ad::Shape>> out;
  for (const auto& param : p.params) {
    if (param.name.starts_with(prefix)) out.emplace_back(param.name, param.value.shape);
  }
  return out;
}

std::vector<ad::Var> bind_parameters(ad::Graph& g, const ModelParams& p, bool trainable) {
  std::vector<ad::Var> vars;
  vars.reserve(p.params.size());
  for (const auto& param : p.params) vars.push_back(trainable ? g.variable(param.value) : g.constant(param.value));
  return vars;
}

ad::Var forward(ad::Graph& g, const ModelParams& p, std::span<const ad::Var> bound, ad::Var lr_dti, std::optional<ad::Var> t1w) {
  const NetworkConfig& cfg = p.config;
  if (bound.size() != p.params.size()) throw ShapeError("forward: bound parameter count does not match the model");
  if (cfg.multimodal && !t1w) throw PreconditionError("forward: multimodal model requires a T1w patch");
  if (!cfg.multimodal && t1w) throw PreconditionError("forward: unimodal model takes no T1w patch");

  const ad::Shape& s = g.shape(lr_dti);
  if (s.size() != 5 || s[1] != cfg.dti_in_channels) {
    throw ShapeError("forward: DTI input must be [N, 6, D, H, W], got " + ad::shape_string(s));
  }
  const int scale = 1 << (cfg.levels - 1);
  if (s[2] % scale || s[3] % scale || s[4] % scale) {
    throw ShapeError("forward: spatial dims must be divisible by " + std::to_string(scale) + ", got " + ad::shape_string(s));
  }
  if (t1w) {
    const ad::Shape& ts = g.shape(*t1w);
    if (ts.size() != 5 || ts[0] != s[0] || ts[1] != cfg.t1w_in_channels || ts[2] != s[2] || ts[3] != s[3] || ts[4] != s[4]) {
      throw ShapeError("forward: T1w input must be [N, 1, D, H, W] matching the DTI input, got " + ad::shape_string(ts));
    }
  }

  auto param = [&](const std::string& name) { return bound[p.index(name)]; };
  auto conv = [&](const std::string& prefix, ad::Var x) {
    return ad::conv3d(g, x, param(prefix + "weight"), param(prefix + "bias"));
  };
  auto block = [&](const std::string& prefix, ad::Var x) {
    for (int i = 1; i <= cfg.convs_per_block; ++i) x = ad::relu(g, conv(prefix + "conv" + std::to_string(i) + ".", x));
    return x;
  };
  // Per-level features; pooling happens between levels.
  auto encode = [&](std::string_view group, ad::Var x) {
    std::vector<ad::Var> features;
    for (int l = 1; l <= cfg.levels; ++l) {
      if (l > 1) x = ad::maxpool2(g, x);
      x = block(std::string(group) + level_name(l) + ".", x);
      features.push_back(x);
    }
    return features;
  };

  std::vector<ad::Var> feats = encode(kDtiEncoder, lr_dti);
  if (t1w) {
    const std::vector<ad::Var> t1 = encode(kT1wEncoder, *t1w);
    for (std::size_t i = 0; i < feats.size(); ++i) feats[i] = ad::average_fuse(g, feats[i], t1[i]);
  }
  ad::Var x = block(std::string(kBottleneck), feats.back());
  for (int l = cfg.levels - 1; l >= 1; --l) {
    x = ad::upsample2_trilinear(g, x);
    x = ad::concat_channels(g, {x, feats[static_cast<std::size_t>(l - 1)]});
    x = block(std::string(kDecoder) + level_name(l) + ".", x);
  }
  return conv(std::string(kHead), x);
}

ad::Tensor predict(const ModelParams& p, const ad::Tensor& lr_dti, const ad::Tensor* t1w) {
  ad::Graph g;
  const auto bound = bind_parameters(g, p, false);
  const ad::Var lr = g.constant(lr_dti);
  std::optional<ad::Var> t;
  if (t1w != nullptr) t = g.constant(*t1w);
  const ad::Var out = forward(g, p, bound, lr, t);
  return g.value(out);
}

}  // namespace iqt::net
