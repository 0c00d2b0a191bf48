#include "iqt/dti/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include "iqt/dti/fit.hpp"
#include "iqt/error.hpp"

namespace iqt::dti {

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 add_scaled(const Vec3& a, const Vec3& b, double s) { return {a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 unit(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Vec3 v{normal(rng), normal(rng), normal(rng)};
    if (dot(v, v) > 1e-12) return unit(v);
  }
}

Vec3 random_perpendicular(const Vec3& t, std::mt19937_64& rng) {
  for (;;) {
    const Vec3 r = random_unit(rng);
    const Vec3 p = add_scaled(r, t, -dot(r, t));
    if (dot(p, p) > 1e-6) return unit(p);
  }
}

// Tube around a circle (center, unit normal, radius).
struct Bundle {
  Vec3 center;
  Vec3 normal;
  double radius = 0.0;
  double fa = 0.0;

  // Distance from p to the circle and the circle tangent nearest p.
  double distance(const Vec3& p, Vec3* tangent) const {
    const Vec3 rel = sub(p, center);
    const double h = dot(rel, normal);
    const Vec3 q = add_scaled(rel, normal, -h);
    const double qn = std::sqrt(dot(q, q));
    if (tangent != nullptr) {
      *tangent = qn > 1e-12 ? unit(cross(normal, q)) : random_axis_fallback();
    }
    return std::sqrt(h * h + (qn - radius) * (qn - radius));
  }

  Vec3 random_axis_fallback() const { return unit(cross(normal, std::abs(normal[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0})); }
};

Bundle bundle_through(const Vec3& point, const Vec3& tangent, double radius, std::mt19937_64& rng) {
  const Vec3 n = random_perpendicular(tangent, rng);
  const Vec3 u = cross(tangent, n);
  Bundle b;
  b.normal = n;
  b.radius = radius;
  b.center = add_scaled(point, u, -radius);
  return b;
}

struct Geometry {
  const PhantomSpec& spec;
  double half_fov;
  std::vector<Bundle> bundles;

  // Ellipsoid level: <= 1 inside the brain.
  double brain_level(const Vec3& p, double shrink_mm) const {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double semi = spec.brain_semi_axes[a] * half_fov - shrink_mm;
      s += (p[a] / semi) * (p[a] / semi);
    }
    return s;
  }

  int classify(const Vec3& p, int* bundle, Vec3* tangent) const {
    *bundle = -1;
    if (brain_level(p, 0.0) > 1.0) return kBackground;
    if (brain_level(p, spec.csf_thickness_mm) > 1.0) return kCsf;
    double best = spec.bundle_radius_mm;
    for (std::size_t k = 0; k < bundles.size(); ++k) {
      Vec3 t;
      const double d = bundles[k].distance(p, &t);
      if (d < best) {
        best = d;
        *bundle = static_cast<int>(k);
        *tangent = t;
      }
    }
    return *bundle >= 0 ? kWhiteMatter : kGrayMatter;
  }
};

Vec3 voxel_center(int x, int y, int z, double spacing, double half_fov) {
  return {(x + 0.5) * spacing - half_fov, (y + 0.5) * spacing - half_fov, (z + 0.5) * spacing - half_fov};
}

}  // namespace

Dims PhantomSpec::t1w_dims() const {
  const double ratio = dti_spacing_mm / t1w_spacing_mm;
  return {static_cast<int>(std::lround(dims.nx * ratio)), static_cast<int>(std::lround(dims.ny * ratio)),
          static_cast<int>(std::lround(dims.nz * ratio))};
}

void PhantomSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0 || dims[a] % 8 != 0) throw ConfigError("phantom: dims must be positive multiples of 8");
  }
  if (dims.nx != dims.ny || dims.nx != dims.nz) throw ConfigError("phantom: dims must be cubic");
  if (!(dti_spacing_mm > 0.0) || !(t1w_spacing_mm > 0.0)) throw ConfigError("phantom: spacings must be positive");
  if (t1w_spacing_mm > dti_spacing_mm) throw ConfigError("phantom: t1w spacing must not exceed dti spacing");
  const double ratio = dti_spacing_mm / t1w_spacing_mm;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dims[a] * ratio - std::round(dims[a] * ratio)) > 1e-9) {
      throw ConfigError("phantom: dims * dti_spacing / t1w_spacing must be integral");
    }
  }
  for (double s : brain_semi_axes) {
    if (!(s > 0.0) || s > 1.0) throw ConfigError("phantom: brain_semi_axes must lie in (0, 1]");
  }
  if (csf_thickness_mm < 0.0) throw ConfigError("phantom: csf_thickness_mm must be non-negative");
  if (bundle_count < 2) throw ConfigError("phantom: at least two bundles are required");
  if (!(bundle_radius_mm > 0.0)) throw ConfigError("phantom: bundle_radius_mm must be positive");
  if (!(bundle_fa_range[0] >= 0.0 && bundle_fa_range[0] <= bundle_fa_range[1] && bundle_fa_range[1] <= 1.0)) {
    throw ConfigError("phantom: bundle_fa_range must satisfy 0 <= lo <= hi <= 1");
  }
  if (!(md_csf > 0.0 && md_gm > 0.0 && md_wm > 0.0)) throw ConfigError("phantom: diffusivities must be positive");
  if (texture_amplitude < 0.0 || noise_sigma < 0.0) throw ConfigError("phantom: amplitudes must be non-negative");
  if (!(s0 > 0.0)) throw ConfigError("phantom: s0 must be positive");
  const double half_fov = 0.5 * dims.nx * dti_spacing_mm;
  const double inner = *std::min_element(brain_semi_axes.begin(), brain_semi_axes.end()) * half_fov - csf_thickness_mm;
  if (inner < 3.0 * bundle_radius_mm) {
    throw ConfigError("phantom: brain interior too small to contain bundles of radius " + std::to_string(bundle_radius_mm) +
                      " mm");
  }
}

nlohmann::json to_json(const PhantomSpec& s) {
  return {{"dims", {s.dims.nx, s.dims.ny, s.dims.nz}},
          {"dti_spacing_mm", s.dti_spacing_mm},
          {"t1w_spacing_mm", s.t1w_spacing_mm},
          {"brain_semi_axes", s.brain_semi_axes},
          {"csf_thickness_mm", s.csf_thickness_mm},
          {"bundle_count", s.bundle_count},
          {"bundle_radius_mm", s.bundle_radius_mm},
          {"bundle_fa_range", s.bundle_fa_range},
          {"md_csf", s.md_csf},
          {"md_gm", s.md_gm},
          {"md_wm", s.md_wm},
          {"t1w_intensity", s.t1w_intensity},
          {"texture_amplitude", s.texture_amplitude},
          {"noise_sigma", s.noise_sigma},
          {"s0", s.s0},
          {"protocol", {{"directions", s.protocol_directions}, {"bvalue", s.protocol_bvalue}, {"b0", s.protocol_b0}}}};
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("phantom spec must be a JSON object");
  static const std::set<std::string> known{"dims",          "dti_spacing_mm", "t1w_spacing_mm", "brain_semi_axes",
                                           "csf_thickness_mm", "bundle_count", "bundle_radius_mm", "bundle_fa_range",
                                           "md_csf",        "md_gm",          "md_wm",          "t1w_intensity",
                                           "texture_amplitude", "noise_sigma", "s0",            "protocol"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("phantom spec: unknown key '" + key + "'");
  }
  PhantomSpec s;
  try {
    if (j.contains("dims")) {
      const auto d = j.at("dims").get<std::array<int, 3>>();
      s.dims = {d[0], d[1], d[2]};
    }
    auto opt = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("dti_spacing_mm", s.dti_spacing_mm);
    opt("t1w_spacing_mm", s.t1w_spacing_mm);
    opt("brain_semi_axes", s.brain_semi_axes);
    opt("csf_thickness_mm", s.csf_thickness_mm);
    opt("bundle_count", s.bundle_count);
    opt("bundle_radius_mm", s.bundle_radius_mm);
    opt("bundle_fa_range", s.bundle_fa_range);
    opt("md_csf", s.md_csf);
    opt("md_gm", s.md_gm);
    opt("md_wm", s.md_wm);
    opt("t1w_intensity", s.t1w_intensity);
    opt("texture_amplitude", s.texture_amplitude);
    opt("noise_sigma", s.noise_sigma);
    opt("s0", s.s0);
    if (j.contains("protocol")) {
      const auto& p = j.at("protocol");
      if (p.contains("directions")) s.protocol_directions = p.at("directions").get<int>();
      if (p.contains("bvalue")) s.protocol_bvalue = p.at("bvalue").get<double>();
      if (p.contains("b0")) s.protocol_b0 = p.at("b0").get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("phantom spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::array<double, 6> stick_tensor(const Vec3& axis, double fa, double md) {
  const double a = fa * std::sqrt(3.0 / (9.0 - 6.0 * fa * fa));
  const double l1 = md * (1.0 + 2.0 * a);
  const double lp = md * (1.0 - a);
  const Vec3 v = unit(axis);
  const double dl = l1 - lp;
  return {lp + dl * v[0] * v[0], lp + dl * v[1] * v[1], lp + dl * v[2] * v[2], dl * v[0] * v[1], dl * v[0] * v[2], dl * v[1] * v[2]};
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const double half_fov = 0.5 * spec.dims.nx * spec.dti_spacing_mm;
  Geometry geo{spec, half_fov, {}};

  std::array<double, 3> inner;
  for (int a = 0; a < 3; ++a) inner[a] = spec.brain_semi_axes[a] * half_fov - spec.csf_thickness_mm;
  std::uniform_real_distribution<double> unit01(0.0, 1.0);
  std::uniform_real_distribution<double> fa_dist(spec.bundle_fa_range[0], spec.bundle_fa_range[1]);
  const double min_inner = *std::min_element(inner.begin(), inner.end());
  auto curvature = [&] { return min_inner * (0.8 + 1.2 * unit01(rng)); };

  // Two bundles crossing near the centre at 60 to 90 degrees.
  const Vec3 cross_point{(unit01(rng) - 0.5) * 0.1 * min_inner, (unit01(rng) - 0.5) * 0.1 * min_inner,
                         (unit01(rng) - 0.5) * 0.1 * min_inner};
  const Vec3 t0 = random_unit(rng);
  const double theta = std::numbers::pi / 3.0 + unit01(rng) * std::numbers::pi / 6.0;
  const Vec3 t1 = add_scaled(Vec3{std::cos(theta) * t0[0], std::cos(theta) * t0[1], std::cos(theta) * t0[2]},
                             random_perpendicular(t0, rng), std::sin(theta));
  geo.bundles.push_back(bundle_through(cross_point, t0, curvature(), rng));
  geo.bundles.push_back(bundle_through(cross_point, unit(t1), curvature(), rng));
  while (static_cast<int>(geo.bundles.size()) < spec.bundle_count) {
    Vec3 p;
    do {
      for (int a = 0; a < 3; ++a) p[a] = (2.0 * unit01(rng) - 1.0) * 0.7 * inner[a];
    } while ((p[0] / inner[0]) * (p[0] / inner[0]) + (p[1] / inner[1]) * (p[1] / inner[1]) +
                 (p[2] / inner[2]) * (p[2] / inner[2]) >
             0.49);
    geo.bundles.push_back(bundle_through(p, random_unit(rng), curvature(), rng));
  }
  for (Bundle& b : geo.bundles) b.fa = fa_dist(rng);

  Phantom ph;
  const Dims d = spec.dims;
  const std::size_t n = d.voxels();
  std::vector<float> tensors(6 * n, 0.0f), labels(n, 0.0f), mask(n, 0.0f), s0(n, 0.0f);
  std::vector<std::size_t> bundle_voxels(geo.bundles.size(), 0);
  std::size_t idx = 0;
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x, ++idx) {
        int bundle = -1;
        Vec3 tangent{};
        const int label = geo.classify(voxel_center(x, y, z, spec.dti_spacing_mm, half_fov), &bundle, &tangent);
        labels[idx] = static_cast<float>(label);
        if (label == kBackground) continue;
        mask[idx] = 1.0f;
        s0[idx] = static_cast<float>(spec.s0);
        std::array<double, 6> t{};
        if (label == kCsf) {
          t = {spec.md_csf, spec.md_csf, spec.md_csf, 0, 0, 0};
        } else if (label == kGrayMatter) {
          t = {spec.md_gm, spec.md_gm, spec.md_gm, 0, 0, 0};
        } else {
          t = stick_tensor(tangent, geo.bundles[bundle].fa, spec.md_wm);
          ++bundle_voxels[bundle];
        }
        for (int c = 0; c < 6; ++c) tensors[c * n + idx] = static_cast<float>(t[c]);
      }
    }
  }
  if (bundle_voxels[0] == 0 || bundle_voxels[1] == 0) {
    throw ConfigError("phantom: grid too coarse to resolve the crossing bundles");
  }

  const double sp = spec.dti_spacing_mm;
  ph.tensors = Volume(d, 6, sp, VolumeKind::DTI, std::move(tensors));
  ph.tissue_labels = Volume(d, 1, sp, VolumeKind::Generic, std::move(labels));
  ph.mask = Volume(d, 1, sp, VolumeKind::Mask, std::move(mask));
  ph.protocol = make_protocol(spec.protocol_directions, spec.protocol_bvalue, spec.protocol_b0);
  const Volume s0_vol(d, 1, sp, VolumeKind::Generic, std::move(s0));
  SimulatedDwi sim = simulate_dwi(ph.tensors, ph.protocol, s0_vol, spec.noise_sigma, seed ^ 0x5DEECE66DULL);
  ph.dwi = std::move(sim.dwi);
  ph.clamped_signals = sim.clamped;

  const Dims td = spec.t1w_dims();
  const std::size_t tn = td.voxels();
  std::vector<float> t1w(tn, 0.0f), t1w_labels(tn, 0.0f);
  std::mt19937_64 texture_rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_real_distribution<double> texture(-spec.texture_amplitude, spec.texture_amplitude);
  idx = 0;
  for (int z = 0; z < td.nz; ++z) {
    for (int y = 0; y < td.ny; ++y) {
      for (int x = 0; x < td.nx; ++x, ++idx) {
        int bundle = -1;
        Vec3 tangent{};
        const int label = geo.classify(voxel_center(x, y, z, spec.t1w_spacing_mm, half_fov), &bundle, &tangent);
        t1w_labels[idx] = static_cast<float>(label);
        double value = spec.t1w_intensity[label];
        if (label != kBackground) value += texture(texture_rng);
        t1w[idx] = static_cast<float>(value);
      }
    }
  }
  ph.t1w = Volume(td, 1, spec.t1w_spacing_mm, VolumeKind::T1w, std::move(t1w));
  ph.t1w_labels = Volume(td, 1, spec.t1w_spacing_mm, VolumeKind::Generic, std::move(t1w_labels));
  return ph;
}

}  // namespace iqt::dti
