#pragma once

#include <optional>

#include "iqt/volume.hpp"

namespace iqt::resample {

/// Sigma (in source voxels) whose Gaussian FWHM equals `ratio`.
double fwhm_sigma(double ratio);

struct ResampleSpec {
  double source_spacing_mm = 1.0;
  double target_spacing_mm = 1.0;
  double ratio = 1.0;           // target / source
  double blur_sigma_vox = 0.0;  // in source voxels

  /// FWHM-matched blur when downsampling, none otherwise.
  static ResampleSpec between(double source_spacing_mm, double target_spacing_mm);
};

/// Separable Gaussian, truncated at 3 sigma and renormalized, with
/// half-sample symmetric reflection at the borders. sigma 0 returns a copy.
Volume gaussian_blur(const Volume& v, double sigma_vox);

/// Normalized 1D taps at offsets -r..r, r = ceil(3 sigma).
std::vector<double> gaussian_taps(double sigma_vox);

/// Trilinear resampling onto the grid with dims round(old*spacing/new) using
/// cell-centred coordinates; edge samples clamp.
Volume linear_resample(const Volume& v, double new_spacing_mm);

/// Trilinear resampling onto an explicit grid that spans the same field of
/// view convention (voxel i centred at (i + 0.5) * spacing).
Volume resample_to_grid(const Volume& v, Dims dims, double spacing_mm);

/// Blur and linearly downsample to `target_spacing_mm`.
Volume downsample(const Volume& v, double target_spacing_mm, std::optional<double> sigma_override = std::nullopt);

/// Blur, downsample to `target_spacing_mm`, and linearly upsample back onto
/// the source grid. The result records `target_spacing_mm` as its effective
/// resolution. Target == source returns the input unchanged.
Volume degrade(const Volume& v, double target_spacing_mm, std::optional<double> sigma_override = std::nullopt);

}  // namespace iqt::resample
