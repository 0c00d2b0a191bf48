#include "iqt/dti/protocol.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "iqt/error.hpp"

namespace iqt::dti {

std::size_t DiffusionProtocol::b0_count() const {
  std::size_t n = 0;
  for (double b : bvalues) n += (b == 0.0);
  return n;
}

void DiffusionProtocol::validate() const {
  if (directions.size() != bvalues.size()) {
    throw ConfigError("protocol: direction and b-value counts differ");
  }
  std::vector<Vec3> weighted;
  for (std::size_t i = 0; i < size(); ++i) {
    const Vec3& g = directions[i];
    const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (std::abs(norm - 1.0) > 1e-6) {
      throw ConfigError("protocol: direction " + std::to_string(i) + " is not unit length");
    }
    if (bvalues[i] < 0.0 || !std::isfinite(bvalues[i])) {
      throw ConfigError("protocol: b-value " + std::to_string(i) + " is negative or non-finite");
    }
    if (bvalues[i] > 0.0) weighted.push_back(g);
  }
  if (b0_count() == 0) throw ConfigError("protocol: at least one b=0 entry is required");
  if (weighted.size() < 6) throw ConfigError("protocol: at least six b>0 entries are required");
  Eigen::MatrixXd design(static_cast<Eigen::Index>(weighted.size()), 6);
  for (std::size_t k = 0; k < weighted.size(); ++k) {
    const Vec3& g = weighted[k];
    design.row(static_cast<Eigen::Index>(k)) << g[0] * g[0], g[1] * g[1], g[2] * g[2], 2 * g[0] * g[1], 2 * g[0] * g[2], 2 * g[1] * g[2];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design);
  const auto& sv = svd.singularValues();
  if (sv(5) <= 1e-10 * sv(0)) throw ConfigError("protocol: gradient directions do not span a rank-6 design");
}

DiffusionProtocol make_protocol(int n_directions, double bvalue, int n_b0) {
  if (n_directions < 6) throw ConfigError("protocol: need at least 6 directions");
  if (n_b0 < 1) throw ConfigError("protocol: need at least one b=0 entry");
  if (!(bvalue > 0.0)) throw ConfigError("protocol: b-value must be positive");
  DiffusionProtocol p;
  for (int i = 0; i < n_b0; ++i) {
    p.directions.push_back({1.0, 0.0, 0.0});
    p.bvalues.push_back(0.0);
  }
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_directions; ++i) {
    const double z = 1.0 - (i + 0.5) / n_directions;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    Vec3 g{r * std::cos(phi), r * std::sin(phi), z};
    const double norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    for (double& c : g) c /= norm;
    p.directions.push_back(g);
    p.bvalues.push_back(bvalue);
  }
  p.validate();
  return p;
}

nlohmann::json to_json(const DiffusionProtocol& p) {
  return {{"directions", p.directions}, {"bvalues", p.bvalues}};
}

DiffusionProtocol protocol_from_json(const nlohmann::json& j) {
  DiffusionProtocol p;
  try {
    p.directions = j.at("directions").get<std::vector<Vec3>>();
    p.bvalues = j.at("bvalues").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("protocol: ") + e.what());
  }
  p.validate();
  return p;
}

}  // namespace iqt::dti
