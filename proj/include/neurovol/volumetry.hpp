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

#include <map>
#include <string>
#include <vector>

#include "neurovol/hmrf.hpp"

namespace neurovol {

struct TissueVolumesMl {
  double csf = 0.0;
  double gm = 0.0;
  double wm = 0.0;
};

/// One visit's extracted volumes for one patient.
struct VisitRecord {
  std::string patient_id;
  int visit = 0;  // 1-based, contiguous per patient
  TissueVolumesMl volumes;
  double voxel_volume_mm3 = 0.0;
  std::string source_path;
};

/// Per (visit, tissue) cohort aggregates; sample (n-1) standard deviation,
/// zero when only one patient contributes.
struct CohortStats {
  struct Cell {
    double mean_ml = 0.0;
    double std_ml = 0.0;
    int count = 0;
  };
  // visit -> {csf, gm, wm}
  std::map<int, std::array<Cell, 3>> per_visit;
};

/// Milliliters above threshold: count of voxels with p strictly greater than
/// threshold, times voxel volume, divided by 1000. Threshold must lie in (0,1).
double tissue_volume_ml(const ProbMap& map, double voxel_vol_mm3, double threshold = 0.4);

/// Applies tissue_volume_ml to the three maps.
TissueVolumesMl visit_volumes(const TissueProbabilityMaps& maps, double voxel_vol_mm3,
                              double threshold = 0.4);

/// Divides every element by the series maximum. Throws ScaleError when the
/// maximum is not positive.
std::vector<double> max_scale(const std::vector<double>& series);

/// Mean and sample standard deviation per visit and tissue over the patients
/// that have that visit. Throws InputError for an empty record list.
CohortStats cohort_stats(const std::vector<VisitRecord>& records);

}  // namespace neurovol
