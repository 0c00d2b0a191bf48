#include "iqt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "iqt/error.hpp"

namespace iqt::pipeline {

namespace {

constexpr const char* kDatasetMagic = "IQTD1";

void validate_range(const Range& r, const char* name) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || !(r.lo < r.hi)) {
    throw ConfigError(std::string("normalization: ") + name + " range must be finite with lo < hi");
  }
}

Range channel_range(const Volume& v, int c, const NormalizationSpec& spec) {
  switch (v.kind()) {
    case VolumeKind::DTI: return c < 3 ? spec.dti_diag : spec.dti_offdiag;
    case VolumeKind::T1w: return spec.t1w;
    default: throw ConfigError("normalize: no range defined for kind " + std::string(to_string(v.kind())));
  }
}

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

Range range_from(const nlohmann::json& j) {
  const auto a = j.get<std::array<double, 2>>();
  return {a[0], a[1]};
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

}  // namespace

void NormalizationSpec::validate() const {
  validate_range(dti_diag, "dti_diag");
  validate_range(dti_offdiag, "dti_offdiag");
  validate_range(t1w, "t1w");
}

nlohmann::json to_json(const NormalizationSpec& s) {
  return {{"dti_diag_range", range_json(s.dti_diag)},
          {"dti_offdiag_range", range_json(s.dti_offdiag)},
          {"t1w_range", range_json(s.t1w)}};
}

NormalizationSpec normalization_from_json(const nlohmann::json& j) {
  NormalizationSpec s;
  try {
    if (j.contains("dti_diag_range")) s.dti_diag = range_from(j.at("dti_diag_range"));
    if (j.contains("dti_offdiag_range")) s.dti_offdiag = range_from(j.at("dti_offdiag_range"));
    if (j.contains("t1w_range")) s.t1w = range_from(j.at("t1w_range"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("normalization: ") + e.what());
  }
  s.validate();
  return s;
}

Volume normalize(const Volume& v, const NormalizationSpec& spec) {
  spec.validate();
  const std::size_t n = v.voxels();
  const auto src = v.data();
  std::vector<float> out(src.size());
  for (int c = 0; c < v.channels(); ++c) {
    const Range r = channel_range(v, c, spec);
    const double inv = 1.0 / (r.hi - r.lo);
    for (std::size_t i = c * n; i < (c + 1) * n; ++i) {
      const double x = std::clamp(static_cast<double>(src[i]), r.lo, r.hi);
      out[i] = static_cast<float>((x - r.lo) * inv);
    }
  }
  Volume result(v.dims(), v.channels(), v.spacing_mm(), v.kind(), std::move(out));
  return v.effective_resolution_mm() ? result.with_effective_resolution(*v.effective_resolution_mm()) : result;
}

Volume denormalize(const Volume& v, const NormalizationSpec& spec) {
  spec.validate();
  const std::size_t n = v.voxels();
  const auto src = v.data();
  std::vector<float> out(src.size());
  for (int c = 0; c < v.channels(); ++c) {
    const Range r = channel_range(v, c, spec);
    for (std::size_t i = c * n; i < (c + 1) * n; ++i) {
      const double x = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
      out[i] = static_cast<float>(r.lo + x * (r.hi - r.lo));
    }
  }
  return Volume(v.dims(), v.channels(), v.spacing_mm(), v.kind(), std::move(out));
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ConfigError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Range compute_t1w_percentiles(std::span<const Volume> volumes, std::span<const Volume> masks) {
  if (volumes.size() != masks.size()) throw ShapeError("t1w percentiles: volume and mask counts differ");
  std::vector<double> pooled;
  for (std::size_t k = 0; k < volumes.size(); ++k) {
    if (!same_grid(volumes[k], masks[k]) || masks[k].channels() != 1) {
      throw ShapeError("t1w percentiles: mask grid does not match volume");
    }
    const auto v = volumes[k].channel(0);
    const auto m = masks[k].data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] != 0.0f) pooled.push_back(v[i]);
    }
  }
  if (pooled.empty()) throw ConfigError("t1w percentiles: union of masks is empty");
  std::sort(pooled.begin(), pooled.end());
  return {percentile(pooled, 2.0), percentile(pooled, 98.0)};
}

nlohmann::json to_json(const AugmentationSpec& s) {
  return {{"noise_sigma_max", s.noise_sigma_max},
          {"brightness_delta_max", s.brightness_delta_max},
          {"gamma_range", range_json(s.gamma_range)},
          {"seed", s.seed}};
}

AugmentationSpec augmentation_from_json(const nlohmann::json& j) {
  AugmentationSpec s;
  try {
    if (j.contains("noise_sigma_max")) s.noise_sigma_max = j.at("noise_sigma_max").get<double>();
    if (j.contains("brightness_delta_max")) s.brightness_delta_max = j.at("brightness_delta_max").get<double>();
    if (j.contains("gamma_range")) s.gamma_range = range_from(j.at("gamma_range"));
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("augmentation: ") + e.what());
  }
  if (s.noise_sigma_max < 0.0 || s.brightness_delta_max < 0.0 || !(s.gamma_range.lo > 0.0) ||
      s.gamma_range.hi < s.gamma_range.lo) {
    throw ConfigError("augmentation: magnitudes must be non-negative and gamma_range positive with lo <= hi");
  }
  return s;
}

void augment_t1w(std::span<float> channel, const AugmentationSpec& spec, std::mt19937_64& rng) {
  const double gamma = uniform(rng, spec.gamma_range.lo, spec.gamma_range.hi);
  const double delta = uniform(rng, -spec.brightness_delta_max, spec.brightness_delta_max);
  const double sigma = uniform(rng, 0.0, spec.noise_sigma_max);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (float& x : channel) {
    double y = std::pow(std::clamp(static_cast<double>(x), 0.0, 1.0), gamma);
    y += delta;
    if (sigma > 0.0) y += sigma * normal(rng);
    x = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
}

void validate_triplet(const PatchTriplet& t) {
  const std::size_t expected = static_cast<std::size_t>(kTripletShape[0]) * kTripletShape[1] * kTripletShape[2] * kTripletShape[3];
  if (t.data.size() != expected) {
    throw ShapeError("triplet holds " + std::to_string(t.data.size()) + " values, expected (16,16,16,13) = " +
                     std::to_string(expected));
  }
}

std::vector<float> cut_patch(const Volume& v, const Origin& o) {
  const Dims& d = v.dims();
  if (o[0] < 0 || o[1] < 0 || o[2] < 0 || o[0] + kPatchSize > d.nx || o[1] + kPatchSize > d.ny || o[2] + kPatchSize > d.nz) {
    throw ShapeError("patch window at (" + std::to_string(o[0]) + "," + std::to_string(o[1]) + "," + std::to_string(o[2]) +
                     ") leaves the volume");
  }
  std::vector<float> out(static_cast<std::size_t>(v.channels()) * kPatchVoxels);
  float* dst = out.data();
  for (int c = 0; c < v.channels(); ++c) {
    const auto src = v.channel(c);
    for (int z = 0; z < kPatchSize; ++z) {
      for (int y = 0; y < kPatchSize; ++y) {
        const float* row = src.data() + v.index(o[0], o[1] + y, o[2] + z);
        dst = std::copy(row, row + kPatchSize, dst);
      }
    }
  }
  return out;
}

std::vector<Origin> admissible_origins(const Volume& mask) {
  const Dims& d = mask.dims();
  if (d.nx < kPatchSize || d.ny < kPatchSize || d.nz < kPatchSize) throw ShapeError("volume smaller than a 16^3 patch");
  // Summed-volume table with a zero border.
  const int px = d.nx + 1, py = d.ny + 1;
  std::vector<std::int64_t> s(static_cast<std::size_t>(px) * py * (d.nz + 1), 0);
  auto at = [&](int x, int y, int z) -> std::int64_t& { return s[static_cast<std::size_t>(x) + px * (y + static_cast<std::size_t>(py) * z)]; };
  const auto m = mask.data();
  for (int z = 1; z <= d.nz; ++z) {
    for (int y = 1; y <= d.ny; ++y) {
      for (int x = 1; x <= d.nx; ++x) {
        const std::int64_t v = m[mask.index(x - 1, y - 1, z - 1)] != 0.0f ? 1 : 0;
        at(x, y, z) = v + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) - at(x - 1, y - 1, z) - at(x - 1, y, z - 1) -
                      at(x, y - 1, z - 1) + at(x - 1, y - 1, z - 1);
      }
    }
  }
  const auto needed = static_cast<std::int64_t>(std::ceil(kMinMaskFraction * kPatchVoxels));
  std::vector<Origin> out;
  const int k = kPatchSize;
  for (int z = 0; z + k <= d.nz; ++z) {
    for (int y = 0; y + k <= d.ny; ++y) {
      for (int x = 0; x + k <= d.nx; ++x) {
        const std::int64_t count = at(x + k, y + k, z + k) - at(x, y + k, z + k) - at(x + k, y, z + k) - at(x + k, y + k, z) +
                                   at(x, y, z + k) + at(x, y + k, z) + at(x + k, y, z) - at(x, y, z);
        if (count >= needed) out.push_back({x, y, z});
      }
    }
  }
  return out;
}

PatchTriplet make_triplet(const Volume& hr_norm, const Volume& lr_norm, const Volume& t1w_norm, const Origin& origin) {
  if (hr_norm.channels() != 6 || lr_norm.channels() != 6 || t1w_norm.channels() != 1) {
    throw ShapeError("triplet sources need 6 + 6 + 1 channels");
  }
  if (!same_grid(hr_norm, lr_norm) || !same_grid(hr_norm, t1w_norm)) {
    throw ShapeError("triplet sources must share one discretization");
  }
  PatchTriplet t;
  t.origin = origin;
  t.data.reserve(static_cast<std::size_t>(kTripletChannels) * kPatchVoxels);
  for (const Volume* v : {&lr_norm, &t1w_norm, &hr_norm}) {
    const auto p = cut_patch(*v, origin);
    t.data.insert(t.data.end(), p.begin(), p.end());
  }
  validate_triplet(t);
  return t;
}

std::vector<PatchTriplet> extract_training_triplets(const Volume& hr_dti, const Volume& lr_dti, const Volume& t1w,
                                                    const Volume& mask, const NormalizationSpec& norm, int count,
                                                    std::uint64_t seed) {
  if (count < 0) throw PreconditionError("triplet count must be non-negative");
  if (!same_grid(hr_dti, mask)) throw ShapeError("mask does not share the triplet discretization");
  if (count == 0) return {};
  const std::vector<Origin> origins = admissible_origins(mask);
  if (origins.empty()) throw SamplingError("no 16^3 window overlaps the mask by at least 10%");
  const Volume hr = normalize(hr_dti, norm);
  const Volume lr = normalize(lr_dti, norm);
  const Volume t1 = normalize(t1w, norm);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, origins.size() - 1);
  std::vector<PatchTriplet> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_triplet(hr, lr, t1, origins[pick(rng)]));
  return out;
}

std::vector<int> axis_origins(int dim) {
  if (dim < kPatchSize) throw ShapeError("dimension " + std::to_string(dim) + " is smaller than the 16-voxel patch");
  std::vector<int> out;
  for (int o = 0; o + kPatchSize <= dim; o += kTileStride) out.push_back(o);
  if (out.back() + kPatchSize < dim) out.push_back(dim - kPatchSize);
  return out;
}

std::vector<Origin> tile_for_inference(Dims dims) {
  const auto ox = axis_origins(dims.nx), oy = axis_origins(dims.ny), oz = axis_origins(dims.nz);
  std::vector<Origin> out;
  out.reserve(ox.size() * oy.size() * oz.size());
  for (int z : oz) {
    for (int y : oy) {
      for (int x : ox) out.push_back({x, y, z});
    }
  }
  return out;
}

Blender::Blender(Dims dims, int channels)
    : dims_(dims), channels_(channels), sum_(dims.voxels() * static_cast<std::size_t>(channels), 0.0), count_(dims.voxels(), 0) {}

void Blender::add(const Origin& o, std::span<const float> patch) {
  if (patch.size() != static_cast<std::size_t>(channels_) * kPatchVoxels) throw ShapeError("blend: patch has wrong size");
  if (o[0] < 0 || o[1] < 0 || o[2] < 0 || o[0] + kPatchSize > dims_.nx || o[1] + kPatchSize > dims_.ny ||
      o[2] + kPatchSize > dims_.nz) {
    throw ShapeError("blend: patch window leaves the volume");
  }
  const std::size_t n = dims_.voxels();
  for (int z = 0; z < kPatchSize; ++z) {
    for (int y = 0; y < kPatchSize; ++y) {
      const std::size_t base = static_cast<std::size_t>(o[0]) + static_cast<std::size_t>(dims_.nx) * (o[1] + y + static_cast<std::size_t>(dims_.ny) * (o[2] + z));
      const std::size_t pbase = static_cast<std::size_t>(kPatchSize) * (y + kPatchSize * z);
      for (int x = 0; x < kPatchSize; ++x) ++count_[base + x];
      for (int c = 0; c < channels_; ++c) {
        double* dst = sum_.data() + c * n + base;
        const float* src = patch.data() + static_cast<std::size_t>(c) * kPatchVoxels + pbase;
        for (int x = 0; x < kPatchSize; ++x) dst[x] += src[x];
      }
    }
  }
}

Volume Blender::finish(double spacing_mm, VolumeKind kind) const {
  const std::size_t n = dims_.voxels();
  std::vector<float> out(sum_.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (count_[i] == 0) {
      const int x = static_cast<int>(i % dims_.nx);
      const int y = static_cast<int>((i / dims_.nx) % dims_.ny);
      const int z = static_cast<int>(i / (static_cast<std::size_t>(dims_.nx) * dims_.ny));
      throw CoverageError("voxel (" + std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(z) +
                          ") is not covered by any patch");
    }
    for (int c = 0; c < channels_; ++c) out[c * n + i] = static_cast<float>(sum_[c * n + i] / count_[i]);
  }
  return Volume(dims_, channels_, spacing_mm, kind, std::move(out));
}

Volume blend_patches(std::span<const PatchPrediction> patches, Dims dims, int channels, double spacing_mm, VolumeKind kind) {
  Blender b(dims, channels);
  for (const auto& p : patches) b.add(p.origin, p.data);
  return b.finish(spacing_mm, kind);
}

void write_dataset(const TripletDataset& ds, const std::filesystem::path& path) {
  nlohmann::json origins = nlohmann::json::array();
  for (const auto& t : ds.triplets) {
    validate_triplet(t);
    origins.push_back(t.origin);
  }
  const nlohmann::json header = {{"magic", kDatasetMagic},
                                 {"count", ds.triplets.size()},
                                 {"shape", kTripletShape},
                                 {"origins", origins},
                                 {"normalization", to_json(ds.normalization)},
                                 {"sampling", ds.sampling}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << header.dump() << '\n';
  for (const auto& t : ds.triplets) detail::write_f32_le(out, t.data);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

TripletDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("header", "missing dataset header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("header", e.what());
  }
  if (!header.contains("magic") || header["magic"] != kDatasetMagic) throw FormatError("magic", "expected IQTD1");
  if (!header.contains("shape") || header["shape"].get<std::array<int, 4>>() != kTripletShape) {
    throw FormatError("shape", "expected [16,16,16,13]");
  }
  TripletDataset ds;
  ds.normalization = normalization_from_json(header.at("normalization"));
  ds.sampling = header.value("sampling", nlohmann::json::object());
  const auto count = header.at("count").get<std::size_t>();
  const auto& origins = header.at("origins");
  if (origins.size() != count) throw FormatError("origins", "length differs from count");
  ds.triplets.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.triplets[i].origin = origins[i].get<Origin>();
    ds.triplets[i].data.resize(static_cast<std::size_t>(kTripletChannels) * kPatchVoxels);
    detail::read_f32_le(in, ds.triplets[i].data, "dataset");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw TruncationError("dataset: trailing bytes after payload");
  return ds;
}

}  // namespace iqt::pipeline
