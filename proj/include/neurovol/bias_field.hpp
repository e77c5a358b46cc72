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

#include "neurovol/grid.hpp"

namespace neurovol {

/// Smooth multiplicative intensity field f(x) on the source grid geometry.
/// All values are strictly positive. Estimator outputs are normalized to
/// geometric mean 1 (within 1e-3); synthetic true fields from the phantom
/// module are normalized to arithmetic mean 1 instead (their construction
/// convention), which the estimator's correlation tests account for.
struct BiasField {
  Volume3D factors;
  bool converged = true;
  int iterations = 0;
};

/// Estimator configuration. The control-grid spacing must exceed twice the
/// largest voxel spacing so each spline interval spans several voxels.
struct BiasParams {
  double control_spacing_mm = 40.0;
  int max_iterations = 50;
  double tolerance = 1e-3;     // on the field-update coefficient of variation
  int smoothing_passes = 1;    // residual smoothing per iteration
};

/// Estimates a smooth multiplicative bias field in the log domain.
///
/// Per iteration: the current corrected log image is reduced to a sharpened
/// three-class tissue estimate (per-voxel class mean), the class-mean residual
/// is smoothed and fit with a least-squares cubic B-spline on the control
/// grid, and the fit accumulates into the log field. Iterations stop when the
/// multiplicative field update has coefficient of variation below tolerance.
/// The field is estimated inside the mask but evaluated everywhere (spline
/// extrapolation), exponentiated, and normalized to geometric mean 1.
///
/// mask == nullptr means "all voxels". Throws InputError when no voxel with
/// positive intensity lies inside the mask. Non-convergence at max_iterations
/// is reported through the converged flag, not an error.
BiasField estimate_bias_field(const Volume3D& vol, const BrainMask* mask,
                              const BiasParams& params = {});

/// Element-wise division v / f over the full grid. Throws ShapeError when the
/// grids disagree.
Volume3D correct_bias(const Volume3D& vol, const BiasField& field);

/// Coefficient of variation (population stddev / mean) of the voxelwise ratio
/// cur/prev, over the mask (all voxels when mask == nullptr). Zero for
/// identical fields and for scale-only updates.
double field_update_cv(const BiasField& prev, const BiasField& cur,
                       const BrainMask* mask = nullptr);

}  // namespace neurovol
