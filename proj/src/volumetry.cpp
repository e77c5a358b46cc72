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
#include "neurovol/volumetry.hpp"

#include <cmath>

namespace neurovol {

double tissue_volume_ml(const ProbMap& map, double voxel_vol_mm3, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ParameterError("pve threshold must lie in (0, 1)");
  std::int64_t count = 0;
  for (Eigen::Index i = 0; i < map.values.size(); ++i)
    if (map.values[i] > threshold) ++count;  // strict: p == threshold is excluded
  return static_cast<double>(count) * voxel_vol_mm3 / 1000.0;
}

TissueVolumesMl visit_volumes(const TissueProbabilityMaps& maps, double voxel_vol_mm3,
                              double threshold) {
  TissueVolumesMl v;
  v.csf = tissue_volume_ml(maps.csf, voxel_vol_mm3, threshold);
  v.gm = tissue_volume_ml(maps.gm, voxel_vol_mm3, threshold);
  v.wm = tissue_volume_ml(maps.wm, voxel_vol_mm3, threshold);
  return v;
}

std::vector<double> max_scale(const std::vector<double>& series) {
  if (series.empty()) throw InputError("max_scale: empty series");
  double mx = series[0];
  for (const double v : series) mx = std::max(mx, v);
  if (!(mx > 0.0)) throw ScaleError("max_scale: series maximum must be positive");
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = series[i] / mx;
  return out;
}

CohortStats cohort_stats(const std::vector<VisitRecord>& records) {
  if (records.empty()) throw InputError("cohort_stats: no visit records");

  std::map<int, std::array<std::vector<double>, 3>> samples;
  for (const auto& r : records) {
    auto& cell = samples[r.visit];
    cell[0].push_back(r.volumes.csf);
    cell[1].push_back(r.volumes.gm);
    cell[2].push_back(r.volumes.wm);
  }

  CohortStats stats;
  for (auto& [visit, tissues] : samples) {
    std::array<CohortStats::Cell, 3> row;
    for (int t = 0; t < 3; ++t) {
      const auto& v = tissues[t];
      const int n = static_cast<int>(v.size());
      double mean = 0.0;
      for (const double x : v) mean += x;
      mean /= n;
      double var = 0.0;
      if (n >= 2) {
        for (const double x : v) var += (x - mean) * (x - mean);
        var /= (n - 1);
      }
      row[t] = {mean, std::sqrt(var), n};
    }
    stats.per_visit[visit] = row;
  }
  return stats;
}

}  // namespace neurovol
