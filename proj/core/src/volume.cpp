#include "iqt/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "binary_io.hpp"
#include "iqt/error.hpp"

namespace iqt {

namespace {

constexpr const char* kMagic = "VJF1";

void check_invariants(const Dims& dims, int channels, double spacing_mm, VolumeKind kind, const std::vector<float>& data) {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw ShapeError("volume dims must be positive");
  }
  if (channels <= 0) {
    throw ShapeError("volume channel count must be positive");
  }
  if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm)) {
    throw ShapeError("volume spacing must be positive and finite");
  }
  if (data.size() != dims.voxels() * static_cast<std::size_t>(channels)) {
    throw ShapeError("volume payload length " + std::to_string(data.size()) + " does not match dims*channels " +
                     std::to_string(dims.voxels() * static_cast<std::size_t>(channels)));
  }
  const int required = required_channels(kind);
  if (required != 0 && channels != required) {
    throw ShapeError(std::string(to_string(kind)) + " volume requires " + std::to_string(required) + " channels, got " +
                     std::to_string(channels));
  }
  if (kind == VolumeKind::Mask) {
    for (float v : data) {
      if (v != 0.0f && v != 1.0f) {
        throw ShapeError("mask volume holds a non-binary value");
      }
    }
  }
}

}  // namespace

std::string_view to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::T1w: return "T1w";
    case VolumeKind::DTI: return "DTI";
    case VolumeKind::Mask: return "Mask";
    case VolumeKind::CFA: return "CFA";
    case VolumeKind::Generic: return "Generic";
  }
  return "Generic";
}

VolumeKind parse_volume_kind(std::string_view name) {
  if (name == "T1w") return VolumeKind::T1w;
  if (name == "DTI") return VolumeKind::DTI;
  if (name == "Mask") return VolumeKind::Mask;
  if (name == "CFA") return VolumeKind::CFA;
  if (name == "Generic") return VolumeKind::Generic;
  throw FormatError("kind", "unknown volume kind '" + std::string(name) + "'");
}

int required_channels(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::T1w: return 1;
    case VolumeKind::DTI: return 6;
    case VolumeKind::Mask: return 1;
    case VolumeKind::CFA: return 3;
    case VolumeKind::Generic: return 0;
  }
  return 0;
}

Volume::Volume(Dims dims, int channels, double spacing_mm, VolumeKind kind, std::vector<float> data)
    : dims_(dims), channels_(channels), spacing_mm_(spacing_mm), kind_(kind), data_(std::move(data)) {
  check_invariants(dims_, channels_, spacing_mm_, kind_, data_);
}

Volume Volume::zeros(Dims dims, int channels, double spacing_mm, VolumeKind kind) {
  return Volume(dims, channels, spacing_mm, kind, std::vector<float>(dims.voxels() * static_cast<std::size_t>(std::max(channels, 0)), 0.0f));
}

std::span<const float> Volume::channel(int c) const {
  if (c < 0 || c >= channels_) {
    throw ShapeError("channel index out of range");
  }
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(c) * voxels(), voxels());
}

Volume Volume::with_effective_resolution(double mm) const {
  Volume out = *this;
  out.effective_resolution_mm_ = mm;
  return out;
}

Volume Volume::with_kind(VolumeKind kind) const {
  Volume out(dims_, channels_, spacing_mm_, kind, data_);
  out.effective_resolution_mm_ = effective_resolution_mm_;
  return out;
}

std::vector<float> Volume::release() && {
  std::vector<float> out = std::move(data_);
  data_.clear();
  return out;
}

bool operator==(const Volume& a, const Volume& b) {
  return a.dims_ == b.dims_ && a.channels_ == b.channels_ && a.spacing_mm_ == b.spacing_mm_ && a.kind_ == b.kind_ &&
         a.effective_resolution_mm_ == b.effective_resolution_mm_ && a.data_ == b.data_;
}

bool same_grid(const Volume& a, const Volume& b) {
  return a.dims() == b.dims() && a.spacing_mm() == b.spacing_mm();
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path.string() + "' for reading");
  }
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw FormatError("header", "missing header line in '" + path.string() + "'");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("header", std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) {
    throw FormatError("header", "header is not a JSON object");
  }
  auto require = [&](const char* key) -> const nlohmann::json& {
    auto it = header.find(key);
    if (it == header.end()) {
      throw FormatError(key, "missing required key");
    }
    return *it;
  };

  const auto& magic = require("magic");
  if (!magic.is_string() || magic.get<std::string>() != kMagic) {
    throw FormatError("magic", "expected \"VJF1\"");
  }
  const auto& dims_json = require("dims");
  if (!dims_json.is_array() || dims_json.size() != 3 ||
      !std::all_of(dims_json.begin(), dims_json.end(), [](const auto& d) { return d.is_number_integer() && d.template get<long long>() > 0; })) {
    throw FormatError("dims", "expected three positive integers");
  }
  const auto& channels_json = require("channels");
  if (!channels_json.is_number_integer() || channels_json.get<long long>() <= 0) {
    throw FormatError("channels", "expected a positive integer");
  }
  const auto& spacing_json = require("spacing_mm");
  if (!spacing_json.is_number() || !(spacing_json.get<double>() > 0.0)) {
    throw FormatError("spacing_mm", "expected a positive number");
  }
  const auto& kind_json = require("kind");
  if (!kind_json.is_string()) {
    throw FormatError("kind", "expected a string");
  }

  const Dims dims{dims_json[0].get<int>(), dims_json[1].get<int>(), dims_json[2].get<int>()};
  const int channels = channels_json.get<int>();
  const VolumeKind kind = parse_volume_kind(kind_json.get<std::string>());
  const std::size_t count = dims.voxels() * static_cast<std::size_t>(channels);

  std::vector<float> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != count * sizeof(float)) {
    throw TruncationError("payload of '" + path.string() + "' holds " + std::to_string(got / sizeof(float)) +
                          " floats, header declares " + std::to_string(count));
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw TruncationError("payload of '" + path.string() + "' is longer than the header declares");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : data) {
      f = std::bit_cast<float>(detail::byteswap32(std::bit_cast<std::uint32_t>(f)));
    }
  }

  Volume v(dims, channels, spacing_json.get<double>(), kind, std::move(data));
  if (auto it = header.find("effective_resolution_mm"); it != header.end()) {
    if (!it->is_number()) {
      throw FormatError("effective_resolution_mm", "expected a number");
    }
    v = v.with_effective_resolution(it->get<double>());
  }
  return v;
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
  nlohmann::json header;
  header["magic"] = kMagic;
  header["dims"] = {v.dims().nx, v.dims().ny, v.dims().nz};
  header["channels"] = v.channels();
  header["spacing_mm"] = v.spacing_mm();
  header["kind"] = std::string(to_string(v.kind()));
  if (v.effective_resolution_mm()) {
    header["effective_resolution_mm"] = *v.effective_resolution_mm();
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open '" + path.string() + "' for writing");
  }
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  const auto data = v.data();
  detail::write_f32_le(out, data);
  out.flush();
  if (!out) {
    throw IoError("failed writing '" + path.string() + "'");
  }
}

Volume apply_mask(const Volume& v, const Volume& mask) {
  if (mask.kind() != VolumeKind::Mask) {
    throw ShapeError("apply_mask expects a Mask volume");
  }
  if (!same_grid(v, mask)) {
    throw ShapeError("mask grid does not match volume grid");
  }
  std::vector<float> out(v.data().begin(), v.data().end());
  const auto m = mask.data();
  const std::size_t n = v.voxels();
  for (int c = 0; c < v.channels(); ++c) {
    float* dst = out.data() + static_cast<std::size_t>(c) * n;
    for (std::size_t i = 0; i < n; ++i) {
      if (m[i] == 0.0f) dst[i] = 0.0f;
    }
  }
  Volume result(v.dims(), v.channels(), v.spacing_mm(), v.kind(), std::move(out));
  if (v.effective_resolution_mm()) result = result.with_effective_resolution(*v.effective_resolution_mm());
  return result;
}

Volume make_mask(Dims dims, double spacing_mm, std::vector<float> values) {
  return Volume(dims, 1, spacing_mm, VolumeKind::Mask, std::move(values));
}

std::size_t mask_count(const Volume& mask) {
  const auto d = mask.data();
  return static_cast<std::size_t>(std::count(d.begin(), d.end(), 1.0f));
}

Volume extract_channel(const Volume& v, int c) {
  const auto ch = v.channel(c);
  return Volume(v.dims(), 1, v.spacing_mm(), VolumeKind::Generic, std::vector<float>(ch.begin(), ch.end()));
}

}  // namespace iqt
