#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace iqt {

enum class VolumeKind { T1w, DTI, Mask, CFA, Generic };

std::string_view to_string(VolumeKind kind);
VolumeKind parse_volume_kind(std::string_view name);

/// Expected channel count for a kind, or 0 when the kind does not constrain it.
int required_channels(VolumeKind kind);

struct Dims {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  int operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// DTI channel order used everywhere.
enum TensorChannel : int { kDxx = 0, kDyy = 1, kDzz = 2, kDxy = 3, kDxz = 4, kDyz = 5 };

/// Planar 4D grid with isotropic spacing. Storage is x fastest, then
/// y, z and channel slowest. Instances are immutable; derive new volumes by
/// building a data vector and constructing a fresh Volume.
class Volume {
 public:
  Volume() = default;
  Volume(Dims dims, int channels, double spacing_mm, VolumeKind kind, std::vector<float> data);

  /// Zero-filled volume.
  static Volume zeros(Dims dims, int channels, double spacing_mm, VolumeKind kind);

  const Dims& dims() const { return dims_; }
  int channels() const { return channels_; }
  double spacing_mm() const { return spacing_mm_; }
  VolumeKind kind() const { return kind_; }
  std::size_t voxels() const { return dims_.voxels(); }

  std::span<const float> data() const { return data_; }
  std::span<const float> channel(int c) const;

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_.nx) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(z));
  }
  float at(int x, int y, int z, int c = 0) const { return data_[static_cast<std::size_t>(c) * voxels() + index(x, y, z)]; }

  /// Effective resolution recorded by degradation, when known.
  const std::optional<double>& effective_resolution_mm() const { return effective_resolution_mm_; }
  Volume with_effective_resolution(double mm) const;
  Volume with_kind(VolumeKind kind) const;

  /// Moves the payload out, leaving this volume empty.
  std::vector<float> release() &&;

  friend bool operator==(const Volume& a, const Volume& b);

 private:
  Dims dims_{};
  int channels_ = 0;
  double spacing_mm_ = 1.0;
  VolumeKind kind_ = VolumeKind::Generic;
  std::optional<double> effective_resolution_mm_;
  std::vector<float> data_;
};

/// True when both volumes share dims and spacing.
bool same_grid(const Volume& a, const Volume& b);

Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& v, const std::filesystem::path& path);

/// Zeroes every channel where the mask is 0.
Volume apply_mask(const Volume& v, const Volume& mask);

/// Builds a Mask from a predicate-compatible vector of 0/1 values.
Volume make_mask(Dims dims, double spacing_mm, std::vector<float> values);

std::size_t mask_count(const Volume& mask);

/// Single channel copy of channel `c` as a Generic volume.
Volume extract_channel(const Volume& v, int c);

}  // namespace iqt
