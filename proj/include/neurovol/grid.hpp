/*
 * NeuroVol
 *
 * Copyright 2026 The NeuroVol Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>

#include "neurovol/errors.hpp"

namespace neurovol {

/// Dense 3-D voxel grid with physical geometry. Voxels are stored x-fastest
/// (index = x + nx*(y + ny*z)), matching the NIfTI payload order. Physical
/// position of voxel (i,j,k) is origin + orientation * (i*sx, j*sy, k*sz).
///
/// Values are immutable by convention once a grid leaves its producer;
/// everything downstream takes grids by const reference and returns new ones.
template <typename Scalar>
struct Grid3 {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Eigen::Vector3i dims = Eigen::Vector3i::Zero();
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();   // mm
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();    // mm
  Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity();
  std::string intensity_units;
  Array values;

  Grid3() = default;

  /// Validating factory: checks the type invariants and throws on violation.
  static Grid3 create(const Eigen::Vector3i& dims, const Eigen::Vector3d& spacing,
                      Array values, const Eigen::Vector3d& origin = Eigen::Vector3d::Zero(),
                      const Eigen::Matrix3d& orientation = Eigen::Matrix3d::Identity(),
                      std::string intensity_units = {}) {
    Grid3 g;
    g.dims = dims;
    g.spacing = spacing;
    g.origin = origin;
    g.orientation = orientation;
    g.intensity_units = std::move(intensity_units);
    g.values = std::move(values);
    g.validate();
    return g;
  }

  /// Constant-filled grid with the given geometry.
  static Grid3 filled(const Eigen::Vector3i& dims, const Eigen::Vector3d& spacing,
                      Scalar value) {
    const auto n = static_cast<Eigen::Index>(dims.x()) * dims.y() * dims.z();
    return create(dims, spacing, Array::Constant(n, value));
  }

  /// New grid sharing this grid's geometry but holding other values.
  template <typename OtherScalar>
  Grid3<OtherScalar> with_values(typename Grid3<OtherScalar>::Array vals) const {
    Grid3<OtherScalar> g;
    g.dims = dims;
    g.spacing = spacing;
    g.origin = origin;
    g.orientation = orientation;
    g.values = std::move(vals);
    g.validate();
    return g;
  }

  Eigen::Index size() const {
    return static_cast<Eigen::Index>(dims.x()) * dims.y() * dims.z();
  }

  Eigen::Index index(int x, int y, int z) const {
    return static_cast<Eigen::Index>(x) +
           static_cast<Eigen::Index>(dims.x()) *
               (static_cast<Eigen::Index>(y) + static_cast<Eigen::Index>(dims.y()) * z);
  }

  Scalar at(int x, int y, int z) const { return values[index(x, y, z)]; }
  Scalar& at(int x, int y, int z) { return values[index(x, y, z)]; }

  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims.x() && y < dims.y() && z < dims.z();
  }

  /// Physical coordinates (mm) of the voxel center (i,j,k).
  Eigen::Vector3d index_to_physical(double i, double j, double k) const {
    return origin + orientation * Eigen::Vector3d(i * spacing.x(), j * spacing.y(),
                                                  k * spacing.z());
  }

  /// Continuous voxel coordinates of a physical point (inverse of the above).
  Eigen::Vector3d physical_to_index(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = orientation.transpose() * (p - origin);
    return {q.x() / spacing.x(), q.y() / spacing.y(), q.z() / spacing.z()};
  }

  /// Physical center of the grid (mm), the reference point for rotations.
  Eigen::Vector3d physical_center() const {
    return index_to_physical(0.5 * (dims.x() - 1), 0.5 * (dims.y() - 1),
                             0.5 * (dims.z() - 1));
  }

  bool same_geometry(const Grid3& other, double tol = 1e-6) const {
    return dims == other.dims && (spacing - other.spacing).cwiseAbs().maxCoeff() <= tol &&
           (origin - other.origin).cwiseAbs().maxCoeff() <= tol &&
           (orientation - other.orientation).cwiseAbs().maxCoeff() <= tol;
  }

  void validate() const {
    if (dims.minCoeff() <= 0)
      throw ShapeError("Grid3: all dimensions must be positive");
    if (values.size() != size())
      throw ShapeError("Grid3: voxel count does not match dims");
    if (!(spacing.minCoeff() > 0.0))
      throw ShapeError("Grid3: spacing components must be strictly positive");
    for (int r = 0; r < 3; ++r) {
      if (std::abs(orientation.row(r).norm() - 1.0) > 1e-6)
        throw ShapeError("Grid3: orientation rows must have unit norm");
    }
  }
};

/// The unit of exchange between all pipeline stages: 32-bit float voxels.
using Volume3D = Grid3<float>;

/// Binary brain mask, values in {0,1}, geometry matching its source volume.
using BrainMask = Grid3<std::uint8_t>;

/// Discrete label grid (phantom ground truth).
using LabelGrid = Grid3<std::uint8_t>;

/// Per-voxel probability map; double precision so EM iterates cleanly.
using ProbMap = Grid3<double>;

/// Volume of one voxel in cubic millimeters (product of the grid spacings).
template <typename Scalar>
double voxel_volume_mm3(const Grid3<Scalar>& g) {
  return g.spacing.x() * g.spacing.y() * g.spacing.z();
}

/// Throws unless the mask is strictly binary and matches the volume's dims.
template <typename Scalar>
void require_binary_mask(const Grid3<Scalar>& vol, const BrainMask& mask) {
  if (mask.dims != vol.dims)
    throw ShapeError("mask dims do not match volume dims");
  for (Eigen::Index i = 0; i < mask.values.size(); ++i) {
    if (mask.values[i] > 1)
      throw ShapeError("mask must be strictly binary");
  }
}

}  // namespace neurovol
