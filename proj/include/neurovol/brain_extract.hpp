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
#include <utility>

#include "neurovol/grid.hpp"

namespace neurovol {

struct ExtractParams {
  double frac = 0.10;             // fractional threshold inside the robust range
  double pct_low = 2.0;           // robust-range percentile pair
  double pct_high = 98.0;
  int closing_radius_vox = 2;     // Euclidean ball radius for morphological closing
  double cog_radius_factor = 1.4; // times the equivalent-sphere radius, pass 2
};

struct ExtractResult {
  BrainMask mask;
  Volume3D stripped;              // vol * mask, exactly 0 outside
  std::int64_t pass1_voxels = 0;
  std::int64_t pass2_voxels = 0;
};

/// 2nd/98th (configurable) percentiles of the nonzero voxel intensities,
/// linearly interpolated. Throws InputError for an all-zero volume.
std::pair<double, double> robust_intensity_range(const Volume3D& vol, double pct_low = 2.0,
                                                 double pct_high = 98.0);

/// Intensity-weighted centroid of the masked voxels, in voxel coordinates.
/// Negative intensities carry zero weight; an all-zero-weight mask falls back
/// to the unweighted centroid. Throws InputError for an empty mask.
Eigen::Vector3d center_of_gravity(const Volume3D& vol, const BrainMask& mask);

/// Two-pass threshold/component/morphology brain extractor.
///
/// Pass 1: threshold at t2 + frac*(t98 - t2), keep the largest 26-connected
/// component, close with an Euclidean ball, fill interior holes (6-connected
/// background flood). Pass 2: re-seed from the pass-1 center of gravity,
/// discard voxels beyond factor * equivalent-sphere radius, then re-extract,
/// re-close, re-fill. Throws ExtractionError when thresholding empties the
/// grid.
ExtractResult extract_brain(const Volume3D& vol, const ExtractParams& params = {});

// Binary morphology on masks (outside the grid counts as background).
// 26-connectivity for components, 6-connectivity for the hole-filling flood:
// the standard foreground/background topology pairing.
BrainMask dilate(const BrainMask& mask, int radius_vox);
BrainMask erode(const BrainMask& mask, int radius_vox);
BrainMask close_mask(const BrainMask& mask, int radius_vox);
BrainMask fill_holes(const BrainMask& mask);

/// Largest 26-connected component; ties broken by the smallest minimum linear
/// voxel index so the result is deterministic.
BrainMask largest_component(const BrainMask& mask);

/// Number of 26-connected components.
int count_components(const BrainMask& mask);

double dice_coefficient(const BrainMask& a, const BrainMask& b);

}  // namespace neurovol
