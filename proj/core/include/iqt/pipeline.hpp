#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <random>
#include <span>
#include <vector>

#include "iqt/volume.hpp"

namespace iqt::pipeline {

constexpr int kPatchSize = 16;
constexpr int kPatchVoxels = kPatchSize * kPatchSize * kPatchSize;
constexpr int kPatchOverlap = 4;
constexpr int kTileStride = kPatchSize - kPatchOverlap;
constexpr int kTripletChannels = 13;
/// (nx, ny, nz, channels) of a training triplet.
constexpr std::array<int, 4> kTripletShape{kPatchSize, kPatchSize, kPatchSize, kTripletChannels};
constexpr int kLrChannel = 0;
constexpr int kT1wChannel = 6;
constexpr int kHrChannel = 7;
constexpr double kMinMaskFraction = 0.10;

using Origin = std::array<int, 3>;

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct NormalizationSpec {
  Range dti_diag{0.0, 2e-3};
  Range dti_offdiag{-2e-3, 2e-3};
  Range t1w{0.0, 1.0};

  void validate() const;
  friend bool operator==(const NormalizationSpec&, const NormalizationSpec&) = default;
};

nlohmann::json to_json(const NormalizationSpec& spec);
NormalizationSpec normalization_from_json(const nlohmann::json& j);

/// Clip each channel to its range, then map the range affinely onto [0, 1].
/// DTI volumes use the diagonal/off-diagonal ranges, T1w volumes the t1w one.
Volume normalize(const Volume& v, const NormalizationSpec& spec);
/// Clip to [0, 1] and invert the affine map.
Volume denormalize(const Volume& v, const NormalizationSpec& spec);

/// Linear interpolation between order statistics (position p/100 * (n-1)).
double percentile(std::vector<double> values, double p);

/// Pooled 2nd and 98th percentiles of masked intensities.
Range compute_t1w_percentiles(std::span<const Volume> volumes, std::span<const Volume> masks);

struct AugmentationSpec {
  double noise_sigma_max = 0.05;
  double brightness_delta_max = 0.1;
  Range gamma_range{0.8, 1.25};
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const AugmentationSpec& spec);
AugmentationSpec augmentation_from_json(const nlohmann::json& j);

/// gamma, then brightness, then Gaussian noise, then clip to [0, 1].
void augment_t1w(std::span<float> channel, const AugmentationSpec& spec, std::mt19937_64& rng);

/// Planar storage: channel c of voxel (x, y, z) at c*4096 + x + 16*(y + 16*z).
struct PatchTriplet {
  Origin origin{};
  std::vector<float> data;

  std::span<const float> channel(int c) const {
    return std::span<const float>(data).subspan(static_cast<std::size_t>(c) * kPatchVoxels, kPatchVoxels);
  }
  std::span<float> channel(int c) {
    return std::span<float>(data).subspan(static_cast<std::size_t>(c) * kPatchVoxels, kPatchVoxels);
  }
};

/// Throws ShapeError unless the triplet holds exactly kTripletShape values.
void validate_triplet(const PatchTriplet& t);

/// Copies the 16^3 window at `origin` of every channel, planar.
std::vector<float> cut_patch(const Volume& v, const Origin& origin);

/// Origins whose window overlaps the mask by at least kMinMaskFraction.
std::vector<Origin> admissible_origins(const Volume& mask);

/// Builds one triplet from already normalized volumes on a shared grid.
PatchTriplet make_triplet(const Volume& hr_norm, const Volume& lr_norm, const Volume& t1w_norm, const Origin& origin);

/// `count` triplets at uniformly drawn admissible origins, normalized with
/// `norm`. Deterministic given seed.
std::vector<PatchTriplet> extract_training_triplets(const Volume& hr_dti, const Volume& lr_dti, const Volume& t1w,
                                                    const Volume& mask, const NormalizationSpec& norm, int count,
                                                    std::uint64_t seed);

/// Per-axis origins on the stride-12 grid with the last one clamped to dim-16.
std::vector<int> axis_origins(int dim);
std::vector<Origin> tile_for_inference(Dims dims);

/// Sum and count buffers for overlap averaging.
class Blender {
 public:
  Blender(Dims dims, int channels);
  void add(const Origin& origin, std::span<const float> patch);
  /// Throws CoverageError naming the first uncovered voxel.
  Volume finish(double spacing_mm, VolumeKind kind) const;

 private:
  Dims dims_;
  int channels_;
  std::vector<double> sum_;
  std::vector<std::uint32_t> count_;
};

struct PatchPrediction {
  Origin origin{};
  std::vector<float> data;  // planar, channels * 4096
};

Volume blend_patches(std::span<const PatchPrediction> patches, Dims dims, int channels, double spacing_mm,
                     VolumeKind kind = VolumeKind::DTI);

/// Triplets plus the normalization used to build them.
struct TripletDataset {
  std::vector<PatchTriplet> triplets;
  NormalizationSpec normalization;
  nlohmann::json sampling = nlohmann::json::object();
};

/// JSON header line (magic "IQTD1", count, shape, origins, normalization,
/// sampling) followed by an (N, 16, 16, 16, 13) float32 payload.
void write_dataset(const TripletDataset& ds, const std::filesystem::path& path);
TripletDataset read_dataset(const std::filesystem::path& path);

}  // namespace iqt::pipeline
