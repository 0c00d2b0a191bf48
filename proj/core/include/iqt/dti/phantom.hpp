#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>

#include "iqt/dti/protocol.hpp"
#include "iqt/volume.hpp"

namespace iqt::dti {

enum TissueLabel : int { kBackground = 0, kCsf = 1, kGrayMatter = 2, kWhiteMatter = 3 };

struct PhantomSpec {
  Dims dims{48, 48, 48};  // DTI grid
  double dti_spacing_mm = 1.25;
  double t1w_spacing_mm = 0.625;
  /// Brain ellipsoid semi-axes as fractions of the half field of view.
  std::array<double, 3> brain_semi_axes{0.9, 0.85, 0.8};
  double csf_thickness_mm = 2.5;
  int bundle_count = 8;
  double bundle_radius_mm = 3.0;
  std::array<double, 2> bundle_fa_range{0.6, 0.9};
  double md_csf = 3.0e-3;  // mm^2/s
  double md_gm = 0.8e-3;
  double md_wm = 0.7e-3;
  /// T1w intensity per TissueLabel.
  std::array<double, 4> t1w_intensity{0.0, 0.2, 0.5, 0.8};
  double texture_amplitude = 0.04;
  double noise_sigma = 0.0;
  double s0 = 1000.0;
  int protocol_directions = 30;
  double protocol_bvalue = 1000.0;
  int protocol_b0 = 3;

  Dims t1w_dims() const;
  /// Throws ConfigError when the spec is unusable.
  void validate() const;
};

nlohmann::json to_json(const PhantomSpec& spec);
/// Missing keys keep their defaults; unknown keys are rejected.
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

struct Phantom {
  Volume t1w;            // T1w grid
  Volume t1w_labels;     // T1w grid, TissueLabel values
  Volume tensors;        // DTI grid, ground truth
  Volume dwi;            // DTI grid, one channel per protocol entry
  Volume mask;           // DTI grid
  Volume tissue_labels;  // DTI grid
  DiffusionProtocol protocol;
  std::size_t clamped_signals = 0;
};

/// Deterministic given (spec, seed).
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Cylindrically symmetric tensor with principal axis `axis`, given FA and MD.
std::array<double, 6> stick_tensor(const Vec3& axis, double fa, double md);

}  // namespace iqt::dti
