#pragma once

#include <array>
#include <nlohmann/json.hpp>
#include <vector>

namespace iqt::dti {

using Vec3 = std::array<double, 3>;

/// Gradient table. Entries with b == 0 are unweighted (S0) acquisitions.
struct DiffusionProtocol {
  std::vector<Vec3> directions;
  std::vector<double> bvalues;  // s/mm^2

  std::size_t size() const { return bvalues.size(); }
  std::size_t b0_count() const;

  /// Unit directions, at least one b=0 entry, and a rank-6 design over the
  /// b>0 entries. Throws ConfigError otherwise.
  void validate() const;
};

/// `n_directions` near-uniform hemisphere directions (Fibonacci lattice) at a
/// single b-value, preceded by `n_b0` unweighted entries.
DiffusionProtocol make_protocol(int n_directions, double bvalue, int n_b0);

nlohmann::json to_json(const DiffusionProtocol& p);
DiffusionProtocol protocol_from_json(const nlohmann::json& j);

}  // namespace iqt::dti
