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
#include <vector>

#include "neurovol/grid.hpp"

namespace neurovol {

/// Per-class Gaussian parameters for the three tissue classes, kept sorted by
/// ascending mean so index 0 is always CSF, 1 GM, 2 WM.
struct GaussianClassParams {
  Eigen::Vector3d means = Eigen::Vector3d::Zero();
  Eigen::Vector3d stddevs = Eigen::Vector3d::Ones();
  Eigen::Vector3d weights = Eigen::Vector3d::Constant(1.0 / 3.0);

  void validate(double sigma_floor) const;
};

/// The three per-voxel posterior maps (pve_0 = CSF, pve_1 = GM, pve_2 = WM).
/// Inside the mask the three values sum to 1 per voxel; outside they are 0.
struct TissueProbabilityMaps {
  ProbMap csf;
  ProbMap gm;
  ProbMap wm;

  const ProbMap& operator[](int c) const { return c == 0 ? csf : (c == 1 ? gm : wm); }
  ProbMap& operator[](int c) { return c == 0 ? csf : (c == 1 ? gm : wm); }
};

struct SegConfig {
  double beta_mrf = 0.4;         // MRF smoothness weight, 0 = plain GMM
  int em_iterations = 20;
  int mean_field_sweeps = 2;     // E-step sweeps
  double sigma_floor_frac = 1e-3;  // of the masked intensity range
  std::string init_method = "kmeans-quantile";
};

struct SegmentationResult {
  TissueProbabilityMaps maps;
  GaussianClassParams params;
  int iterations = 0;
  bool converged = false;
};

/// Gaussian likelihood g(y; mu, sigma). Throws ParameterError when sigma is
/// below the floor (or non-positive).
double gaussian_pdf(double y, double mu, double sigma, double sigma_floor = 0.0);

/// K-means (k = 3) on the masked intensities, centers seeded at the
/// 25th/50th/75th percentiles; per-cluster mean/stddev/fraction become the
/// initial parameters, classes sorted by mean. Throws DegenerateInputError
/// when fewer than three distinct values exist.
GaussianClassParams initialize_classes(const std::vector<float>& intensities,
                                       double sigma_floor);

/// Mean-field spatial prior at one voxel: prior_l proportional to
/// exp(beta * sum of the 6-neighborhood posteriors of class l), normalized.
/// Missing neighbors (volume boundary, outside mask) contribute 0.
Eigen::Vector3d mrf_spatial_prior(const TissueProbabilityMaps& posteriors, double beta_mrf,
                                  int x, int y, int z);

/// Posterior update, computed in log space with max-subtraction. Per masked
/// voxel the class score combines the mixing weight, the mean-field
/// neighborhood prior, and the Gaussian likelihood; `sweeps` Jacobi-style
/// mean-field passes are applied. With beta_mrf = 0 this is exactly the
/// classic GMM responsibility update.
TissueProbabilityMaps e_step(const Volume3D& vol, const BrainMask& mask,
                             const GaussianClassParams& params,
                             const TissueProbabilityMaps& prev, double beta_mrf,
                             int sweeps = 1);

/// Weighted parameter update; classes are re-sorted ascending by mean and the
/// maps permuted accordingly. Throws ClassCollapseError when a class's total
/// posterior mass vanishes.
GaussianClassParams m_step(const Volume3D& vol, const BrainMask& mask,
                           TissueProbabilityMaps& posteriors, double sigma_floor);

/// Full HMRF-EM segmentation: k-means init, then alternating E/M until the
/// configured iteration count or until the largest class-mean change drops
/// below 1e-4 x intensity range.
SegmentationResult segment_hmrf(const Volume3D& vol, const BrainMask& mask,
                                const SegConfig& config = {});

/// Mean-field pseudo-objective: GMM log-likelihood plus beta times the
/// neighbor-agreement score sum_i sum_{j in N6(i)} q_i . q_j.
double log_objective(const Volume3D& vol, const BrainMask& mask,
                     const TissueProbabilityMaps& posteriors,
                     const GaussianClassParams& params, double beta_mrf);

/// Zero-filled maps on the volume's geometry (the E-step's starting point).
TissueProbabilityMaps zero_maps(const Volume3D& vol);

}  // namespace neurovol
