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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "neurovol/bias_field.hpp"
#include "neurovol/grid.hpp"

namespace neurovol {

/// Synthetic brain phantom: nested ellipsoids (WM core, GM shell, CSF shell,
/// skull shell) centered on the grid, each tissue sampled from a Gaussian at
/// its class mean. Semi-axes are in voxel units and must be strictly nested
/// WM < GM < CSF < skull per axis; tissue means strictly increasing
/// CSF < GM < WM. The skull shell sits at the outer ellipsoid boundary with a
/// dark gap against the CSF surface (inner table), and its intensity is
/// 0.8 x the WM mean so naive thresholding cannot ignore it.
struct PhantomSpec {
  Eigen::Vector3i dims{64, 64, 64};
  Eigen::Vector3d spacing_mm{2.0, 2.0, 2.0};
  double mean_csf = 500.0;
  double mean_gm = 2000.0;
  double mean_wm = 2500.0;
  double noise_sigma = 100.0;
  Eigen::Vector3d wm_semi_axes{16.0, 12.0, 10.0};
  Eigen::Vector3d gm_semi_axes{21.0, 17.0, 14.0};
  Eigen::Vector3d csf_semi_axes{25.0, 21.0, 17.0};
  Eigen::Vector3d skull_semi_axes{31.0, 27.0, 23.0};
  std::uint64_t seed = 20260809;
};

// Phantom label codes.
inline constexpr std::uint8_t kLabelBackground = 0;
inline constexpr std::uint8_t kLabelCsf = 1;
inline constexpr std::uint8_t kLabelGm = 2;
inline constexpr std::uint8_t kLabelWm = 3;
inline constexpr std::uint8_t kLabelSkull = 4;

/// Exact ground truth for one phantom: labels, per-tissue voxel counts, and
/// the volumes in mL they imply (count * voxel volume / 1000, exactly).
struct GroundTruth {
  LabelGrid labels;
  std::array<std::int64_t, 5> voxel_counts{};  // indexed by label code
  double csf_ml = 0.0;
  double gm_ml = 0.0;
  double wm_ml = 0.0;
  BrainMask brain_mask;  // labels 1..3
};

struct PhantomResult {
  Volume3D volume;
  GroundTruth truth;
};

/// Rigid pose for posed regeneration: ZYX Euler angles about the grid's
/// physical center plus a translation in mm. The ellipsoid membership test is
/// evaluated analytically at the inverse-transformed voxel center, so the
/// moved phantom carries exact ground truth (no interpolation).
struct PhantomPose {
  Eigen::Vector3d euler_rad = Eigen::Vector3d::Zero();
  Eigen::Vector3d translation_mm = Eigen::Vector3d::Zero();
};

/// Deterministic pure function of the spec; throws SpecError when the
/// semi-axes are not strictly nested or the means not strictly increasing.
PhantomResult generate_phantom(const PhantomSpec& spec);

/// Same phantom moved by a known rigid transform, with exact ground truth.
/// An optional per-axis scale on the GM outer boundary programs atrophy: the
/// GM shell shrinks and the CSF shell gains the difference.
PhantomResult generate_phantom_posed(const PhantomSpec& spec, const PhantomPose& pose,
                                     double gm_scale = 1.0);

/// Multiplies the volume by a smooth positive field
/// f = exp(b * mixture of low-order separable cosines), normalized so
/// mean(f) = 1 within 1e-3 and max|f - 1| <= amplitude. length_scale_mm is the
/// minimum half-wavelength of the mixture and must be at least 4x the largest
/// voxel spacing; amplitude must lie in [0, 0.5].
std::pair<Volume3D, BiasField> apply_bias_field(const Volume3D& vol, double amplitude,
                                                double length_scale_mm,
                                                std::uint64_t seed);

/// Adds independent zero-mean Gaussian noise to every voxel (the additive
/// scanner-noise term of the image formation model). Deterministic given seed.
Volume3D add_gaussian_noise(const Volume3D& vol, double sigma, std::uint64_t seed);

/// Parses a PhantomSpec from its JSON document form (fields exactly as in the
/// struct). Throws ParameterError on missing/invalid fields.
PhantomSpec parse_phantom_spec_json(const std::string& json_text);

/// Longitudinal cohort synthesis on top of the base spec: per patient a
/// jittered geometry, per visit a programmed GM shrink (CSF grows by the same
/// amount), a random rigid pose, an optional applied bias field, and global
/// additive scanner noise. Mirrors the observed GM-down / CSF-up pattern with
/// exact per-visit ground truth.
struct CohortSpec {
  int patients = 15;
  int visits_min = 3;
  int visits_max = 4;
  double gm_shrink_per_visit = 0.98;  // axis scale factor per visit step
  double max_translation_mm = 3.0;
  double max_rotation_deg = 3.0;
  double bias_amplitude = 0.1;
  double bias_length_scale_mm = 64.0;
  double scanner_noise_sigma = 20.0;
  std::uint64_t seed = 42;
};

struct CohortFiles {
  std::string manifest_path;
  std::vector<std::string> volume_paths;
};

/// Writes <out_dir>/P##_V#.nii.gz volumes with ground-truth JSON + label
/// sidecars and a manifest.json consumable by the pipeline runner.
CohortFiles generate_cohort(const PhantomSpec& base, const CohortSpec& cohort,
                            const std::string& out_dir);

}  // namespace neurovol
