#include "iqt/resample.hpp"

#include <algorithm>
#include <cmath>

#include "iqt/error.hpp"

namespace iqt::resample {

namespace {

struct Tap {
  int index;
  double weight;
};

// One output sample along an axis is a weighted sum of input samples.
using Stencil = std::vector<std::vector<Tap>>;

struct Buffer {
  Dims dims;
  int channels;
  std::vector<double> data;
};

Buffer to_buffer(const Volume& v) {
  const auto src = v.data();
  return {v.dims(), v.channels(), std::vector<double>(src.begin(), src.end())};
}

int dim_along(const Dims& d, int axis) { return d[axis]; }

Dims with_dim(Dims d, int axis, int value) {
  if (axis == 0) d.nx = value;
  if (axis == 1) d.ny = value;
  if (axis == 2) d.nz = value;
  return d;
}

Buffer apply_along(const Buffer& in, int axis, const Stencil& stencil) {
  const Dims od = with_dim(in.dims, axis, static_cast<int>(stencil.size()));
  Buffer out{od, in.channels, std::vector<double>(od.voxels() * static_cast<std::size_t>(in.channels))};
  const std::size_t istride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(in.dims.nx)
                                                        : static_cast<std::size_t>(in.dims.nx) * in.dims.ny;
  const std::size_t ostride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(od.nx)
                                                        : static_cast<std::size_t>(od.nx) * od.ny;
  const std::size_t in_vox = in.dims.voxels();
  const std::size_t out_vox = od.voxels();
  // Iterate over every line orthogonal to `axis`.
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.data.data() + c * in_vox;
    double* dst = out.data.data() + c * out_vox;
    for (int z = 0; z < (axis == 2 ? 1 : od.nz); ++z) {
      for (int y = 0; y < (axis == 1 ? 1 : od.ny); ++y) {
        for (int x = 0; x < (axis == 0 ? 1 : od.nx); ++x) {
          const std::size_t ibase = static_cast<std::size_t>(x) + static_cast<std::size_t>(in.dims.nx) * (y + static_cast<std::size_t>(in.dims.ny) * z);
          const std::size_t obase = static_cast<std::size_t>(x) + static_cast<std::size_t>(od.nx) * (y + static_cast<std::size_t>(od.ny) * z);
          for (std::size_t o = 0; o < stencil.size(); ++o) {
            double acc = 0.0;
            for (const Tap& t : stencil[o]) acc += t.weight * src[ibase + t.index * istride];
            dst[obase + o * ostride] = acc;
          }
        }
      }
    }
  }
  return out;
}

Volume to_volume(Buffer&& b, double spacing, VolumeKind kind) {
  std::vector<float> data(b.data.size());
  std::transform(b.data.begin(), b.data.end(), data.begin(), [](double x) { return static_cast<float>(x); });
  return Volume(b.dims, b.channels, spacing, kind == VolumeKind::Mask ? VolumeKind::Generic : kind, std::move(data));
}

int reflect(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

Stencil blur_stencil(int n, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size() / 2);
  Stencil s(static_cast<std::size_t>(n));
  for (int o = 0; o < n; ++o) {
    for (int k = -r; k <= r; ++k) s[o].push_back({reflect(o + k, n), taps[k + r]});
  }
  return s;
}

Stencil linear_stencil(int n_in, int n_out, double scale) {
  Stencil s(static_cast<std::size_t>(n_out));
  for (int o = 0; o < n_out; ++o) {
    double pos = (o + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(n_in - 1));
    const int i0 = std::min(static_cast<int>(std::floor(pos)), n_in - 1);
    const int i1 = std::min(i0 + 1, n_in - 1);
    const double w = pos - i0;
    if (w == 0.0 || i1 == i0) {
      s[o].push_back({i0, 1.0});
    } else {
      s[o].push_back({i0, 1.0 - w});
      s[o].push_back({i1, w});
    }
  }
  return s;
}

}  // namespace

double fwhm_sigma(double ratio) { return ratio / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

ResampleSpec ResampleSpec::between(double source_spacing_mm, double target_spacing_mm) {
  if (!(source_spacing_mm > 0.0) || !(target_spacing_mm > 0.0)) throw PreconditionError("resample: spacings must be positive");
  ResampleSpec s;
  s.source_spacing_mm = source_spacing_mm;
  s.target_spacing_mm = target_spacing_mm;
  s.ratio = target_spacing_mm / source_spacing_mm;
  s.blur_sigma_vox = s.ratio > 1.0 ? fwhm_sigma(s.ratio) : 0.0;
  return s;
}

std::vector<double> gaussian_taps(double sigma_vox) {
  if (sigma_vox < 0.0 || !std::isfinite(sigma_vox)) throw PreconditionError("gaussian_blur: sigma must be non-negative");
  if (sigma_vox == 0.0) return {1.0};
  const int r = static_cast<int>(std::ceil(3.0 * sigma_vox));
  std::vector<double> taps(2 * r + 1);
  double sum = 0.0;
  for (int k = -r; k <= r; ++k) {
    taps[k + r] = std::exp(-0.5 * k * k / (sigma_vox * sigma_vox));
    sum += taps[k + r];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

Volume gaussian_blur(const Volume& v, double sigma_vox) {
  const auto taps = gaussian_taps(sigma_vox);
  if (taps.size() == 1) return v;
  Buffer b = to_buffer(v);
  for (int axis = 0; axis < 3; ++axis) b = apply_along(b, axis, blur_stencil(dim_along(b.dims, axis), taps));
  Volume out = to_volume(std::move(b), v.spacing_mm(), v.kind());
  return v.effective_resolution_mm() ? out.with_effective_resolution(*v.effective_resolution_mm()) : out;
}

Volume resample_to_grid(const Volume& v, Dims dims, double spacing_mm) {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw ShapeError("resample: target dims must be positive");
  if (!(spacing_mm > 0.0)) throw PreconditionError("resample: spacing must be positive");
  if (dims == v.dims() && spacing_mm == v.spacing_mm()) return v;
  const double scale = spacing_mm / v.spacing_mm();
  Buffer b = to_buffer(v);
  for (int axis = 0; axis < 3; ++axis) b = apply_along(b, axis, linear_stencil(dim_along(b.dims, axis), dims[axis], scale));
  return to_volume(std::move(b), spacing_mm, v.kind());
}

Volume linear_resample(const Volume& v, double new_spacing_mm) {
  if (!(new_spacing_mm > 0.0)) throw PreconditionError("linear_resample: spacing must be positive");
  const double f = v.spacing_mm() / new_spacing_mm;
  const Dims d{static_cast<int>(std::lround(v.dims().nx * f)), static_cast<int>(std::lround(v.dims().ny * f)),
               static_cast<int>(std::lround(v.dims().nz * f))};
  if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw ShapeError("linear_resample: target grid has a zero dimension");
  return resample_to_grid(v, d, new_spacing_mm);
}

Volume downsample(const Volume& v, double target_spacing_mm, std::optional<double> sigma_override) {
  const ResampleSpec spec = ResampleSpec::between(v.spacing_mm(), target_spacing_mm);
  const double sigma = sigma_override.value_or(spec.blur_sigma_vox);
  return linear_resample(gaussian_blur(v, sigma), target_spacing_mm);
}

Volume degrade(const Volume& v, double target_spacing_mm, std::optional<double> sigma_override) {
  if (!(target_spacing_mm > 0.0)) throw PreconditionError("degrade: target spacing must be positive");
  if (target_spacing_mm < v.spacing_mm()) {
    throw PreconditionError("degrade: target spacing " + std::to_string(target_spacing_mm) + " mm is finer than source " +
                            std::to_string(v.spacing_mm()) + " mm");
  }
  if (target_spacing_mm == v.spacing_mm() && !sigma_override) return v.with_effective_resolution(target_spacing_mm);
  const Volume low = downsample(v, target_spacing_mm, sigma_override);
  return resample_to_grid(low, v.dims(), v.spacing_mm()).with_effective_resolution(target_spacing_mm);
}

}  // namespace iqt::resample
