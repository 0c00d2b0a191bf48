#pragma once

#include <cstddef>
#include <cstdint>

#include "iqt/dti/protocol.hpp"
#include "iqt/volume.hpp"

namespace iqt::dti {

struct SimulatedDwi {
  Volume dwi;
  /// Signals above s0*(1+1e-6) at b>0 (non-PSD tensors) that were clamped.
  std::size_t clamped = 0;
};

/// S_k = s0 * exp(-b_k g_k^T D g_k) plus Gaussian noise of std noise_sigma*s0.
SimulatedDwi simulate_dwi(const Volume& tensors, const DiffusionProtocol& protocol, const Volume& s0, double noise_sigma,
                          std::uint64_t seed);

struct FitResult {
  Volume tensors;
  /// Masked voxels zero-filled because S0 was not positive and finite.
  std::size_t flagged = 0;
};

/// Log-linear least squares per masked voxel; zeros outside the mask.
FitResult fit_dti(const Volume& dwi, const DiffusionProtocol& protocol, const Volume& mask);

}  // namespace iqt::dti
