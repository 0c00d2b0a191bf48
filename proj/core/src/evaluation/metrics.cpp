#include "iqt/evaluation/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "iqt/dti/tensor_math.hpp"
#include "iqt/error.hpp"

namespace iqt::eval {

namespace {

void check_pair(const Volume& pred, const Volume& truth, const Volume& mask, int channels, const char* what) {
  if (pred.channels() != channels || truth.channels() != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + "-channel inputs");
  }
  if (pred.dims() != truth.dims() || mask.dims() != pred.dims() || mask.channels() != 1) {
    throw ShapeError(std::string(what) + ": prediction, truth and mask must share dims");
  }
}

std::vector<std::size_t> masked_indices(const Volume& mask, const char* what) {
  std::vector<std::size_t> idx;
  const auto m = mask.data();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0f) idx.push_back(i);
  }
  if (idx.empty()) throw EvaluationError(std::string(what) + ": mask is empty");
  return idx;
}

double median_of(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// 3D summed-area table with a zero border.
class Integral {
 public:
  Integral(const Dims& d) : nx_(d.nx + 1), ny_(d.ny + 1), data_(static_cast<std::size_t>(nx_) * ny_ * (d.nz + 1), 0.0) {}

  double& at(int x, int y, int z) { return data_[static_cast<std::size_t>(x) + nx_ * (y + static_cast<std::size_t>(ny_) * z)]; }
  double at(int x, int y, int z) const { return data_[static_cast<std::size_t>(x) + nx_ * (y + static_cast<std::size_t>(ny_) * z)]; }

  template <typename F>
  void build(const Dims& d, F&& value) {
    for (int z = 1; z <= d.nz; ++z) {
      for (int y = 1; y <= d.ny; ++y) {
        for (int x = 1; x <= d.nx; ++x) {
          at(x, y, z) = value(x - 1, y - 1, z - 1) + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) - at(x - 1, y - 1, z) -
                        at(x - 1, y, z - 1) - at(x, y - 1, z - 1) + at(x - 1, y - 1, z - 1);
        }
      }
    }
  }

  // Sum over [x0, x1) x [y0, y1) x [z0, z1).
  double box(int x0, int y0, int z0, int x1, int y1, int z1) const {
    return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0) + at(x1, y0, z0) -
           at(x0, y0, z0);
  }

 private:
  int nx_, ny_;
  std::vector<double> data_;
};

double mean_value(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double dt_rmse(const Volume& pred, const Volume& truth, const Volume& mask) {
  check_pair(pred, truth, mask, 6, "dt_rmse");
  const auto idx = masked_indices(mask, "dt_rmse");
  const std::size_t n = pred.voxels();
  const auto p = pred.data();
  const auto t = truth.data();
  std::vector<double> per_voxel;
  per_voxel.reserve(idx.size());
  for (std::size_t i : idx) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) {
      const double d = static_cast<double>(p[c * n + i]) - t[c * n + i];
      s += d * d;
    }
    per_voxel.push_back(std::sqrt(s / 6.0));
  }
  return median_of(per_voxel);
}

double scalar_rmse(const Volume& pred, const Volume& truth, const Volume& mask) {
  check_pair(pred, truth, mask, 1, "scalar_rmse");
  const auto idx = masked_indices(mask, "scalar_rmse");
  const auto p = pred.data();
  const auto t = truth.data();
  double s = 0.0;
  for (std::size_t i : idx) {
    const double d = static_cast<double>(p[i]) - t[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(idx.size()));
}

double ssim3d(const Volume& pred, const Volume& truth, const Volume& mask, double data_range) {
  check_pair(pred, truth, mask, 1, "ssim3d");
  if (!(data_range > 0.0)) throw PreconditionError("ssim3d: data_range must be positive");
  const auto idx = masked_indices(mask, "ssim3d");
  const Dims d = pred.dims();
  const auto a = pred.data();
  const auto b = truth.data();
  // Offsets keep the moment sums well conditioned; they cancel in the variances.
  const double oa = mean_value(a), ob = mean_value(b);
  Integral sa(d), sb(d), saa(d), sbb(d), sab(d);
  auto av = [&](int x, int y, int z) { return a[pred.index(x, y, z)] - oa; };
  auto bv = [&](int x, int y, int z) { return b[pred.index(x, y, z)] - ob; };
  sa.build(d, av);
  sb.build(d, bv);
  saa.build(d, [&](int x, int y, int z) { const double v = av(x, y, z); return v * v; });
  sbb.build(d, [&](int x, int y, int z) { const double v = bv(x, y, z); return v * v; });
  sab.build(d, [&](int x, int y, int z) { return av(x, y, z) * bv(x, y, z); });

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const int r = kSsimWindow / 2;
  double total = 0.0;
  for (std::size_t i : idx) {
    const int x = static_cast<int>(i % d.nx);
    const int y = static_cast<int>((i / d.nx) % d.ny);
    const int z = static_cast<int>(i / (static_cast<std::size_t>(d.nx) * d.ny));
    const int x0 = std::max(0, x - r), x1 = std::min(d.nx, x + r + 1);
    const int y0 = std::max(0, y - r), y1 = std::min(d.ny, y + r + 1);
    const int z0 = std::max(0, z - r), z1 = std::min(d.nz, z + r + 1);
    const double count = static_cast<double>(x1 - x0) * (y1 - y0) * (z1 - z0);
    const double ma = sa.box(x0, y0, z0, x1, y1, z1) / count;
    const double mb = sb.box(x0, y0, z0, x1, y1, z1) / count;
    const double va = saa.box(x0, y0, z0, x1, y1, z1) / count - ma * ma;
    const double vb = sbb.box(x0, y0, z0, x1, y1, z1) / count - mb * mb;
    const double cov = sab.box(x0, y0, z0, x1, y1, z1) / count - ma * mb;
    const double mua = ma + oa, mub = mb + ob;
    total += ((2.0 * mua * mub + c1) * (2.0 * cov + c2)) / ((mua * mua + mub * mub + c1) * (va + vb + c2));
  }
  return std::clamp(total / static_cast<double>(idx.size()), 0.0, 1.0);
}

CsimResult mean_abs_cosine(std::span<const dti::Vec3> a, std::span<const dti::Vec3> b) {
  if (a.size() != b.size()) throw ShapeError("csim: vector lists differ in length");
  CsimResult r;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double na = std::sqrt(a[i][0] * a[i][0] + a[i][1] * a[i][1] + a[i][2] * a[i][2]);
    const double nb = std::sqrt(b[i][0] * b[i][0] + b[i][1] * b[i][1] + b[i][2] * b[i][2]);
    if (na < kZeroNorm || nb < kZeroNorm) {
      ++r.excluded;
      continue;
    }
    const double dot = a[i][0] * b[i][0] + a[i][1] * b[i][1] + a[i][2] * b[i][2];
    sum += std::min(1.0, std::abs(dot) / (na * nb));
    ++r.used;
  }
  if (r.used == 0) throw EvaluationError("csim: every voxel was excluded");
  r.value = sum / static_cast<double>(r.used);
  return r;
}

CsimResult cfa_csim(const Volume& pred, const Volume& truth, const Volume& mask) {
  check_pair(pred, truth, mask, 6, "cfa_csim");
  const auto idx = masked_indices(mask, "cfa_csim");
  std::vector<dti::Vec3> a, b;
  a.reserve(idx.size());
  b.reserve(idx.size());
  for (std::size_t i : idx) {
    a.push_back(dti::principal_direction(dti::tensor_at(pred, i)));
    b.push_back(dti::principal_direction(dti::tensor_at(truth, i)));
  }
  return mean_abs_cosine(a, b);
}

MetricSet compute_metrics(const Volume& pred, const Volume& truth, const Volume& mask) {
  check_pair(pred, truth, mask, 6, "metrics");
  const Volume md_p = dti::mean_diffusivity(pred), md_t = dti::mean_diffusivity(truth);
  const Volume fa_p = dti::fractional_anisotropy(pred), fa_t = dti::fractional_anisotropy(truth);
  MetricSet m{};
  m[kDtRmse] = dt_rmse(pred, truth, mask);
  m[kMdRmse] = scalar_rmse(md_p, md_t, mask);
  m[kFaRmse] = scalar_rmse(fa_p, fa_t, mask);
  m[kMdSsim] = ssim3d(md_p, md_t, mask, kMdDataRange);
  m[kFaSsim] = ssim3d(fa_p, fa_t, mask, kFaDataRange);
  m[kCfaCsim] = cfa_csim(pred, truth, mask).value;
  return m;
}

}  // namespace iqt::eval
