#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "iqt/ad/adam.hpp"
#include "iqt/ad/graph.hpp"

namespace iqt::net {

struct NetworkConfig {
  int base_channels = 16;
  int levels = 3;
  int dti_in_channels = 6;
  int t1w_in_channels = 1;
  int out_channels = 6;
  bool multimodal = true;
  int convs_per_block = 2;

  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

nlohmann::json to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);

/// Parameter groups. Names look like "dti_enc.l1.conv1.weight".
inline constexpr std::string_view kDtiEncoder = "dti_enc.";
inline constexpr std::string_view kT1wEncoder = "t1w_enc.";
inline constexpr std::string_view kBottleneck = "bottleneck.";
inline constexpr std::string_view kDecoder = "dec.";
inline constexpr std::string_view kHead = "head.";

struct ModelParams {
  NetworkConfig config;
  ad::ParameterSet params;

  /// Index of the named parameter; throws ConfigError when absent.
  std::size_t index(std::string_view name) const;
  const ad::Tensor& get(std::string_view name) const { return params[index(name)].value; }
};

/// Fan-in scaled uniform weights (He for ReLU layers, LeCun for the linear
/// head), zero biases. Each tensor draws from a stream keyed by seed and
/// name, so shared layers match across the two model variants.
ModelParams build_model(const NetworkConfig& cfg, std::uint64_t seed);

std::size_t parameter_count(const ModelParams& params);
/// Scalar count of parameters whose names start with `prefix`.
std::size_t parameter_count(const ModelParams& params, std::string_view prefix);
std::vector<std::pair<std::string, ad::Shape>> shape_list(const ModelParams& params, std::string_view prefix);

/// Adds every parameter to `g`, as variables when `trainable`.
std::vector<ad::Var> bind_parameters(ad::Graph& g, const ModelParams& params, bool trainable);

/// Builds the network graph. `lr_dti` is [N, 6, D, H, W] with D, H, W
/// divisible by 4; `t1w` is [N, 1, D, H, W] and must be present exactly when
/// the model is multimodal. Returns [N, 6, D, H, W].
ad::Var forward(ad::Graph& g, const ModelParams& params, std::span<const ad::Var> bound, ad::Var lr_dti,
                std::optional<ad::Var> t1w);

/// Forward pass without gradient bookkeeping.
ad::Tensor predict(const ModelParams& params, const ad::Tensor& lr_dti, const ad::Tensor* t1w);

}  // namespace iqt::net
