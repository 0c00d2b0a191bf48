#include "iqt/ad/adam.hpp"

#include <cmath>

#include "iqt/error.hpp"

namespace iqt::ad {

std::size_t parameter_count(const ParameterSet& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

AdamState AdamState::for_parameters(const ParameterSet& params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.size(), 0.0f);
    s.v.emplace_back(p.value.size(), 0.0f);
  }
  return s;
}

void adam_step(ParameterSet& params, std::span<const std::vector<float>> grads, AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].value.size();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw ShapeError("adam_step: size mismatch for parameter '" + params[i].name + "'");
    }
    for (float g : grads[i]) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient for parameter '" + params[i].name + "'");
      }
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i].value.data;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = state.learning_rate * (mj / bc1) / (std::sqrt(vj / bc2) + state.epsilon);
      theta[j] = static_cast<float>(theta[j] - update);
    }
  }
}

}  // namespace iqt::ad
