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
#include <string>

#include "neurovol/grid.hpp"

namespace neurovol {

/// 6-DOF rigid transform: ZYX Euler rotation about a fixed physical center c
/// plus a translation t, i.e. p -> R (p - c) + c + t. Angles are kept
/// normalized to (-pi, pi].
struct RigidTransform {
  Eigen::Vector3d euler_rad = Eigen::Vector3d::Zero();   // (rx, ry, rz)
  Eigen::Vector3d translation_mm = Eigen::Vector3d::Zero();
  Eigen::Vector3d center_mm = Eigen::Vector3d::Zero();

  static RigidTransform identity(const Eigen::Vector3d& center = Eigen::Vector3d::Zero());

  Eigen::Matrix3d rotation() const;  // R = Rz * Ry * Rx
  void normalize_angles();
};

Eigen::Vector3d apply_to_point(const RigidTransform& t, const Eigen::Vector3d& p);
Eigen::Vector3d apply_inverse_to_point(const RigidTransform& t, const Eigen::Vector3d& p);

/// Inverse transform, expressed about the same center.
RigidTransform inverse(const RigidTransform& t);

/// Composition: apply `inner` first, then `outer`. Result is expressed about
/// outer's center.
RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner);

struct RegParams {
  int pyramid_levels = 3;         // downsampling x2 per level
  int max_evaluations = 2000;     // cost evaluations per level
  double tol_translation_mm = 0.01;
  double tol_rotation_rad = 0.0005;
  double simplex_translation_mm = 5.0;
  double simplex_rotation_rad = 0.05;
};

struct RegistrationResult {
  RigidTransform transform;
  double final_cost = 0.0;
  int evaluations = 0;
};

/// Pull-back trilinear resampling: every reference voxel center p samples the
/// moving volume at T^-1(p); out-of-bounds samples are 0.
Volume3D resample_trilinear(const Volume3D& moving, const RigidTransform& t,
                            const Volume3D& reference);

/// Nearest-neighbor pull-back for binary masks.
BrainMask resample_nearest(const BrainMask& moving, const RigidTransform& t,
                           const Volume3D& reference);

/// Mean squared intensity difference over the voxels where fixed > 0, with the
/// moving volume resampled through T. Throws InputError when fixed has no
/// positive voxels.
double mse_cost(const Volume3D& fixed, const Volume3D& moving, const RigidTransform& t);

/// Coarse-to-fine 6-DOF registration of moving onto fixed: at each pyramid
/// level a derivative-free Nelder-Mead simplex minimizes mse_cost, restarted
/// from the previous level's optimum. The coarsest level starts from identity
/// plus a center-of-gravity translation seed. Deterministic; the result is
/// never worse than the identity transform.
RegistrationResult register_rigid(const Volume3D& fixed, const Volume3D& moving,
                                  const RegParams& params = {});

/// 2x2x2 mean pooling (spacing doubles); odd trailing planes are averaged
/// over the voxels present.
Volume3D downsample_by_two(const Volume3D& vol);

/// JSON persistence: {euler_rad, translation_mm, center_mm, final_cost}.
std::string transform_to_json(const RigidTransform& t, double final_cost);
RigidTransform transform_from_json(const std::string& text, double* final_cost = nullptr);

}  // namespace neurovol
