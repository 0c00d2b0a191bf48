#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>

#include "iqt/dti/protocol.hpp"
#include "iqt/volume.hpp"

namespace iqt::eval {

inline constexpr int kSsimWindow = 7;
inline constexpr double kFaDataRange = 1.0;
inline constexpr double kMdDataRange = 3e-3;  // mm^2/s
inline constexpr double kZeroNorm = 1e-12;

/// Median over masked voxels of sqrt(mean over the six channels of the
/// squared element error).
double dt_rmse(const Volume& pred, const Volume& truth, const Volume& mask);

/// sqrt(mean over masked voxels of the squared difference).
double scalar_rmse(const Volume& pred, const Volume& truth, const Volume& mask);

/// Mean local SSIM over windows centred on masked voxels. Windows are 7^3
/// uniform boxes truncated at the volume border; statistics use population
/// moments. The mean is clamped to [0, 1].
double ssim3d(const Volume& pred, const Volume& truth, const Volume& mask, double data_range);

struct CsimResult {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // zero-norm vectors in either argument
};

/// Mean |a.b| / (|a||b|); pairs where either norm is below 1e-12 are skipped.
CsimResult mean_abs_cosine(std::span<const dti::Vec3> a, std::span<const dti::Vec3> b);

/// Mean absolute cosine between principal eigenvectors over the mask.
CsimResult cfa_csim(const Volume& pred, const Volume& truth, const Volume& mask);

enum Metric : int { kDtRmse = 0, kMdRmse, kFaRmse, kMdSsim, kFaSsim, kCfaCsim };
inline constexpr int kMetricCount = 6;
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames{"dt_rmse", "md_rmse", "fa_rmse",
                                                                         "md_ssim", "fa_ssim", "cfa_csim"};
inline constexpr std::array<std::string_view, kMetricCount> kMetricLabels{"DT-RMSE", "MD RMSE", "FA RMSE",
                                                                          "MD SSIM", "FA SSIM", "CFA CSIM"};
/// True for error metrics (lower is better).
inline constexpr bool lower_is_better(int metric) { return metric <= kFaRmse; }

using MetricSet = std::array<double, kMetricCount>;

/// All six metrics for one predicted tensor field against the truth.
MetricSet compute_metrics(const Volume& pred, const Volume& truth, const Volume& mask);

}  // namespace iqt::eval
