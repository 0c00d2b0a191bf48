#include "iqt/dti/fit.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "iqt/error.hpp"

namespace iqt::dti {

namespace {

std::array<double, 6> design_row(const Vec3& g) {
  return {g[0] * g[0], g[1] * g[1], g[2] * g[2], 2 * g[0] * g[1], 2 * g[0] * g[2], 2 * g[1] * g[2]};
}

}  // namespace

SimulatedDwi simulate_dwi(const Volume& tensors, const DiffusionProtocol& protocol, const Volume& s0, double noise_sigma,
                          std::uint64_t seed) {
  if (tensors.channels() != 6) throw ShapeError("simulate_dwi: tensors must have 6 channels");
  if (s0.channels() != 1 || s0.dims() != tensors.dims()) throw ShapeError("simulate_dwi: s0 must be a matching single-channel volume");
  if (noise_sigma < 0.0) throw PreconditionError("simulate_dwi: noise_sigma must be non-negative");
  protocol.validate();

  const std::size_t n = tensors.voxels();
  const std::size_t k_count = protocol.size();
  const auto d = tensors.data();
  const auto s0v = s0.data();
  std::vector<float> out(n * k_count);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SimulatedDwi result;

  for (std::size_t k = 0; k < k_count; ++k) {
    const auto row = design_row(protocol.directions[k]);
    const double b = protocol.bvalues[k];
    for (std::size_t i = 0; i < n; ++i) {
      double adc = 0.0;
      for (int c = 0; c < 6; ++c) adc += row[c] * d[c * n + i];
      const double base = s0v[i];
      double s = base * std::exp(-b * adc);
      if (b > 0.0 && s > base * (1.0 + 1e-6) && base > 0.0) {
        s = base;
        ++result.clamped;
      }
      if (noise_sigma > 0.0) s += noise_sigma * base * normal(rng);
      out[k * n + i] = static_cast<float>(s);
    }
  }
  result.dwi = Volume(tensors.dims(), static_cast<int>(k_count), tensors.spacing_mm(), VolumeKind::Generic, std::move(out));
  return result;
}

FitResult fit_dti(const Volume& dwi, const DiffusionProtocol& protocol, const Volume& mask) {
  protocol.validate();
  if (static_cast<std::size_t>(dwi.channels()) != protocol.size()) {
    throw ShapeError("fit_dti: dwi has " + std::to_string(dwi.channels()) + " channels, protocol has " +
                     std::to_string(protocol.size()));
  }
  if (mask.channels() != 1 || mask.dims() != dwi.dims()) throw ShapeError("fit_dti: mask does not match dwi grid");

  std::vector<std::size_t> b0_rows, weighted_rows;
  for (std::size_t k = 0; k < protocol.size(); ++k) (protocol.bvalues[k] == 0.0 ? b0_rows : weighted_rows).push_back(k);

  const auto rows = static_cast<Eigen::Index>(weighted_rows.size());
  Eigen::MatrixXd design(rows, 6);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::size_t k = weighted_rows[r];
    const auto row = design_row(protocol.directions[k]);
    for (int c = 0; c < 6; ++c) design(r, c) = -protocol.bvalues[k] * row[c];
  }
  const Eigen::MatrixXd pinv = design.completeOrthogonalDecomposition().pseudoInverse();

  const std::size_t n = dwi.voxels();
  const auto s = dwi.data();
  const auto m = mask.data();
  std::vector<float> out(6 * n, 0.0f);
  FitResult result;
  Eigen::VectorXd y(rows);
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i] == 0.0f) continue;
    double s0 = 0.0;
    for (std::size_t k : b0_rows) s0 += s[k * n + i];
    s0 /= static_cast<double>(b0_rows.size());
    if (!(s0 > 0.0) || !std::isfinite(s0)) {
      ++result.flagged;
      continue;
    }
    const double eps = 1e-12 * s0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double sk = s[weighted_rows[r] * n + i];
      y(r) = std::log(std::max(sk, eps) / s0);
    }
    const Eigen::Matrix<double, 6, 1> dvec = pinv * y;
    if (!dvec.allFinite()) {
      ++result.flagged;
      continue;
    }
    for (int c = 0; c < 6; ++c) out[c * n + i] = static_cast<float>(dvec(c));
  }
  result.tensors = Volume(dwi.dims(), 6, dwi.spacing_mm(), VolumeKind::DTI, std::move(out));
  return result;
}

}  // namespace iqt::dti
