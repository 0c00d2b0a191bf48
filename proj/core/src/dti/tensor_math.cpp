#include "iqt/dti/tensor_math.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "iqt/error.hpp"

namespace iqt::dti {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 to_matrix(const Tensor6& d) {
  return {{{d[0], d[3], d[4]}, {d[3], d[1], d[5]}, {d[4], d[5], d[2]}}};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 scaled(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

Vec3 normalized(const Vec3& a) { return scaled(a, 1.0 / std::sqrt(dot(a, a))); }

// Sort eigenpairs into descending order.
EigenSystem sorted(Vec3 values, std::array<Vec3, 3> vectors) {
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] > values[b]; });
  EigenSystem es;
  for (int i = 0; i < 3; ++i) {
    es.values[i] = values[order[i]];
    es.vectors[i] = vectors[order[i]];
  }
  return es;
}

// Eigenvector of a simple eigenvalue: the largest cross product of rows of A - lambda I.
Vec3 eigenvector_from_rows(const Mat3& a, double lambda) {
  const Vec3 r0{a[0][0] - lambda, a[0][1], a[0][2]};
  const Vec3 r1{a[1][0], a[1][1] - lambda, a[1][2]};
  const Vec3 r2{a[2][0], a[2][1], a[2][2] - lambda};
  const Vec3 c01 = cross(r0, r1), c02 = cross(r0, r2), c12 = cross(r1, r2);
  const double d01 = dot(c01, c01), d02 = dot(c02, c02), d12 = dot(c12, c12);
  if (d01 >= d02 && d01 >= d12) return scaled(c01, 1.0 / std::sqrt(d01));
  if (d02 >= d12) return scaled(c02, 1.0 / std::sqrt(d02));
  return scaled(c12, 1.0 / std::sqrt(d12));
}

// Orthonormal pair spanning the complement of unit vector w.
void complement_basis(const Vec3& w, Vec3& u, Vec3& v) {
  if (std::abs(w[0]) > std::abs(w[1])) {
    const double inv = 1.0 / std::sqrt(w[0] * w[0] + w[2] * w[2]);
    u = {-w[2] * inv, 0.0, w[0] * inv};
  } else {
    const double inv = 1.0 / std::sqrt(w[1] * w[1] + w[2] * w[2]);
    u = {0.0, w[2] * inv, -w[1] * inv};
  }
  v = cross(w, u);
}

// Eigenvector for `lambda` restricted to the complement of `known`.
Vec3 eigenvector_in_complement(const Mat3& a, const Vec3& known, double lambda) {
  Vec3 u, v;
  complement_basis(known, u, v);
  auto apply = [&](const Vec3& x) {
    return Vec3{a[0][0] * x[0] + a[0][1] * x[1] + a[0][2] * x[2], a[1][0] * x[0] + a[1][1] * x[1] + a[1][2] * x[2],
                a[2][0] * x[0] + a[2][1] * x[1] + a[2][2] * x[2]};
  };
  const Vec3 au = apply(u), av = apply(v);
  double m00 = dot(u, au) - lambda;
  double m01 = dot(u, av);
  double m11 = dot(v, av) - lambda;
  const double a00 = std::abs(m00), a01 = std::abs(m01), a11 = std::abs(m11);
  if (a00 >= a11) {
    const double mx = std::max(a00, a01);
    if (mx > 0.0) {
      if (a00 >= a01) {
        m01 /= m00;
        m00 = 1.0 / std::sqrt(1.0 + m01 * m01);
        m01 *= m00;
      } else {
        m00 /= m01;
        m01 = 1.0 / std::sqrt(1.0 + m00 * m00);
        m00 *= m01;
      }
      return normalized(Vec3{m01 * u[0] - m00 * v[0], m01 * u[1] - m00 * v[1], m01 * u[2] - m00 * v[2]});
    }
    return u;
  }
  const double mx = std::max(a11, a01);
  if (mx > 0.0) {
    if (a11 >= a01) {
      m01 /= m11;
      m11 = 1.0 / std::sqrt(1.0 + m01 * m01);
      m01 *= m11;
    } else {
      m11 /= m01;
      m01 = 1.0 / std::sqrt(1.0 + m11 * m11);
      m11 *= m01;
    }
    return normalized(Vec3{m11 * u[0] - m01 * v[0], m11 * u[1] - m01 * v[1], m11 * u[2] - m01 * v[2]});
  }
  return u;
}

}  // namespace

EigenSystem eigen3_sym_jacobi(const Tensor6& d) {
  Mat3 a = to_matrix(d);
  Mat3 v{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (off == 0.0) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
    // Rotations leave tiny residual asymmetry; clear converged entries.
    for (int p = 0; p < 3; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a[p][q]) <= 1e-300 + 1e-18 * (std::abs(a[p][p]) + std::abs(a[q][q]))) {
          a[p][q] = a[q][p] = 0.0;
        }
      }
    }
  }
  std::array<Vec3, 3> vectors;
  for (int i = 0; i < 3; ++i) vectors[i] = {v[0][i], v[1][i], v[2][i]};
  return sorted({a[0][0], a[1][1], a[2][2]}, vectors);
}

EigenSystem eigen3_sym(const Tensor6& d_in) {
  double scale = 0.0;
  for (double x : d_in) scale = std::max(scale, std::abs(x));
  if (scale == 0.0 || !std::isfinite(scale)) {
    EigenSystem es;
    es.values = {0.0, 0.0, 0.0};
    if (!std::isfinite(scale)) es.values = {scale, scale, scale};
    es.vectors = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
    return es;
  }
  Tensor6 d;
  for (int i = 0; i < 6; ++i) d[i] = d_in[i] / scale;
  const Mat3 a = to_matrix(d);

  const double p1 = d[3] * d[3] + d[4] * d[4] + d[5] * d[5];
  EigenSystem es;
  if (p1 == 0.0) {
    es = sorted({d[0], d[1], d[2]}, {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}});
  } else {
    const double q = (d[0] + d[1] + d[2]) / 3.0;
    const double b00 = d[0] - q, b11 = d[1] - q, b22 = d[2] - q;
    const double p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    const double det = b00 * (b11 * b22 - d[5] * d[5]) - d[3] * (d[3] * b22 - d[5] * d[4]) + d[4] * (d[3] * d[5] - b11 * d[4]);
    double r = det / (2.0 * p * p * p);
    r = std::clamp(r, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double l1 = q + 2.0 * p * std::cos(phi);
    const double l3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
    const double l2 = 3.0 * q - l1 - l3;

    const double gap = std::min(l1 - l2, l2 - l3);
    const double mag = std::max({std::abs(l1), std::abs(l2), std::abs(l3)});
    if (gap < 1e-6 * mag) {
      es = eigen3_sym_jacobi(d);
    } else {
      es.values = {l1, l2, l3};
      if (l1 - l2 >= l2 - l3) {
        const Vec3 e1 = eigenvector_from_rows(a, l1);
        const Vec3 e2 = eigenvector_in_complement(a, e1, l2);
        es.vectors = {e1, e2, cross(e1, e2)};
      } else {
        const Vec3 e3 = eigenvector_from_rows(a, l3);
        const Vec3 e2 = eigenvector_in_complement(a, e3, l2);
        es.vectors = {cross(e2, e3), e2, e3};
      }
    }
  }
  for (double& l : es.values) l *= scale;
  return es;
}

double mean_diffusivity(const Tensor6& d) { return (d[0] + d[1] + d[2]) / 3.0; }

double fractional_anisotropy(const Vec3& l) {
  const double sq = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
  if (sq == 0.0) return 0.0;
  const double mean = (l[0] + l[1] + l[2]) / 3.0;
  const double dev = (l[0] - mean) * (l[0] - mean) + (l[1] - mean) * (l[1] - mean) + (l[2] - mean) * (l[2] - mean);
  const double fa = std::sqrt(1.5) * std::sqrt(dev) / std::sqrt(sq);
  return std::clamp(fa, 0.0, 1.0);
}

double fractional_anisotropy(const Tensor6& d) { return fractional_anisotropy(eigen3_sym(d).values); }

Vec3 principal_direction(const Tensor6& d) {
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) return {0.0, 0.0, 0.0};
  return eigen3_sym(d).vectors[0];
}

Tensor6 tensor_at(const Volume& field, std::size_t voxel) {
  const std::size_t n = field.voxels();
  const auto data = field.data();
  return {data[voxel], data[n + voxel], data[2 * n + voxel], data[3 * n + voxel], data[4 * n + voxel], data[5 * n + voxel]};
}

namespace {
void require_tensor_field(const Volume& field) {
  if (field.channels() != 6) throw ShapeError("expected a 6-channel tensor field");
}
}  // namespace

Volume mean_diffusivity(const Volume& field) {
  require_tensor_field(field);
  std::vector<float> out(field.voxels());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(mean_diffusivity(tensor_at(field, i)));
  return Volume(field.dims(), 1, field.spacing_mm(), VolumeKind::Generic, std::move(out));
}

Volume fractional_anisotropy(const Volume& field) {
  require_tensor_field(field);
  std::vector<float> out(field.voxels());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(fractional_anisotropy(tensor_at(field, i)));
  return Volume(field.dims(), 1, field.spacing_mm(), VolumeKind::Generic, std::move(out));
}

Volume colored_fa(const Volume& field) {
  require_tensor_field(field);
  const std::size_t n = field.voxels();
  std::vector<float> out(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor6 d = tensor_at(field, i);
    const EigenSystem es = eigen3_sym(d);
    const double fa = fractional_anisotropy(es.values);
    for (int c = 0; c < 3; ++c) out[c * n + i] = static_cast<float>(fa * std::abs(es.vectors[0][c]));
  }
  return Volume(field.dims(), 3, field.spacing_mm(), VolumeKind::CFA, std::move(out));
}

}  // namespace iqt::dti
