#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iqt/ad/tensor.hpp"

namespace iqt::ad {

struct Parameter {
  std::string name;
  Tensor value;
};

using ParameterSet = std::vector<Parameter>;

std::size_t parameter_count(const ParameterSet& params);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  /// Zeroed moments shaped like `params`.
  static AdamState for_parameters(const ParameterSet& params, double learning_rate = 1e-3);
};

/// One bias-corrected Adam update. Validates every gradient before touching
/// any parameter; a non-finite entry throws NumericError naming the parameter
/// and leaves params and state unchanged.
void adam_step(ParameterSet& params, std::span<const std::vector<float>> grads, AdamState& state);

}  // namespace iqt::ad
