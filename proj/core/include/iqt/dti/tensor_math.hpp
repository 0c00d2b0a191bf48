#pragma once

#include <array>
#include <cstddef>

#include "iqt/dti/protocol.hpp"
#include "iqt/volume.hpp"

namespace iqt::dti {

/// Symmetric tensor elements [Dxx, Dyy, Dzz, Dxy, Dxz, Dyz].
using Tensor6 = std::array<double, 6>;

struct EigenSystem {
  Vec3 values{};                 // descending
  std::array<Vec3, 3> vectors{};  // vectors[i] pairs with values[i]
};

/// Eigen-decomposition of a symmetric 3x3 tensor. Uses the closed-form
/// trigonometric solution with robust eigenvector construction, and falls
/// back to cyclic Jacobi rotations when the relative eigenvalue gap drops
/// below 1e-6.
EigenSystem eigen3_sym(const Tensor6& d);

/// Cyclic Jacobi rotations; the near-degenerate fallback of eigen3_sym.
EigenSystem eigen3_sym_jacobi(const Tensor6& d);

double mean_diffusivity(const Tensor6& d);
double fractional_anisotropy(const Vec3& eigenvalues);
double fractional_anisotropy(const Tensor6& d);

/// Principal eigenvector (sign arbitrary), or the zero vector for an all-zero
/// tensor.
Vec3 principal_direction(const Tensor6& d);

Tensor6 tensor_at(const Volume& field, std::size_t voxel);

Volume mean_diffusivity(const Volume& field);
Volume fractional_anisotropy(const Volume& field);
/// Per voxel FA * (|e1x|, |e1y|, |e1z|).
Volume colored_fa(const Volume& field);

}  // namespace iqt::dti
