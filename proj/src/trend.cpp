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
#include "neurovol/trend.hpp"

#include <cmath>

#include "neurovol/errors.hpp"

namespace neurovol {

std::string to_string(TrendDirection d) {
  switch (d) {
    case TrendDirection::kIncreasing: return "increasing";
    case TrendDirection::kDecreasing: return "decreasing";
    default: return "no-trend";
  }
}

int mk_sign(double diff_ml, double deadband_ml) {
  if (deadband_ml < 0.0) throw ParameterError("dead band must be non-negative");
  if (diff_ml > deadband_ml) return 1;
  if (diff_ml < -deadband_ml) return -1;
  return 0;
}

int mk_statistic(const std::vector<double>& volumes_ml, double deadband_ml) {
  const int n = static_cast<int>(volumes_ml.size());
  if (n < 3) throw SeriesTooShortError("trend analysis needs at least three visits");
  int s = 0;
  for (int k = 0; k < n - 1; ++k)
    for (int j = k + 1; j < n; ++j) s += mk_sign(volumes_ml[j] - volumes_ml[k], deadband_ml);
  return s;
}

double mk_variance(int n) {
  if (n < 3) throw SeriesTooShortError("variance defined for n >= 3");
  return static_cast<double>(n) * (n - 1) * (2 * n + 5) / 18.0;
}

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

TrendResult z_and_confidence(int s, double var_s) {
  if (!(var_s > 0.0)) throw ParameterError("Var(S) must be positive");
  TrendResult r;
  r.s = s;
  r.var_s = var_s;
  if (s > 0)
    r.z_vol = (s - 1) / std::sqrt(var_s);
  else if (s < 0)
    r.z_vol = (s + 1) / std::sqrt(var_s);
  else
    r.z_vol = 0.0;

  // Normal-table convention: |z| is rounded up to the next two-decimal table
  // row before the CDF lookup (1.6984 -> 1.70 -> 95.54%, 1.0445 -> 1.05 ->
  // 85.31%). The returned z stays unrounded.
  const double z_table = std::ceil(std::abs(r.z_vol) * 100.0 - 1e-9) / 100.0;
  r.confidence_pct = 100.0 * normal_cdf(z_table);

  if (r.z_vol > 0.0)
    r.direction = TrendDirection::kIncreasing;
  else if (r.z_vol < 0.0)
    r.direction = TrendDirection::kDecreasing;
  else
    r.direction = TrendDirection::kNoTrend;
  return r;
}

TrendResult analyze_trend(const LongitudinalSeries& series, double deadband_ml) {
  const int n = static_cast<int>(series.volumes_ml.size());
  const int s = mk_statistic(series.volumes_ml, deadband_ml);
  return z_and_confidence(s, mk_variance(n));
}

}  // namespace neurovol
