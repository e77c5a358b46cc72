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

#include <string>
#include <vector>

namespace neurovol {

/// One patient's ordered per-visit volumes for a single tissue. At least
/// three visits (the cohort selection rule).
struct LongitudinalSeries {
  std::string patient_id;
  std::string tissue;
  std::vector<double> volumes_ml;
};

enum class TrendDirection { kIncreasing, kDecreasing, kNoTrend };

std::string to_string(TrendDirection d);

struct TrendResult {
  int s = 0;
  double var_s = 0.0;
  double z_vol = 0.0;
  double confidence_pct = 50.0;
  TrendDirection direction = TrendDirection::kNoTrend;
};

/// Dead-banded pairwise sign: +1 above +deadband, -1 below -deadband, 0 inside
/// the inclusive band. The band suppresses sub-threshold volume jitter.
int mk_sign(double diff_ml, double deadband_ml = 1.0);

/// Mann-Kendall S = sum over all ordered pairs (k < j) of the dead-banded
/// sign of x_j - x_k. Throws SeriesTooShortError for fewer than 3 points.
int mk_statistic(const std::vector<double>& volumes_ml, double deadband_ml = 1.0);

/// Var(S) = n(n-1)(2n+5)/18 (untied form; the dead band's ties are
/// deliberately not corrected for, matching the published statistics).
double mk_variance(int n);

/// Standard normal CDF, absolute error well below 1e-7 on [-6, 6].
double normal_cdf(double x);

/// Continuity-corrected standardized statistic, one-sided confidence, and
/// direction. Confidence is 100 * Phi(|z| rounded up to the next 0.01), the
/// two-decimal normal-table convention that reproduces the published 95.54%
/// and 85.31% values exactly; z itself is returned unrounded.
TrendResult z_and_confidence(int s, double var_s);

/// Full modified Mann-Kendall analysis of one series.
TrendResult analyze_trend(const LongitudinalSeries& series, double deadband_ml = 1.0);

}  // namespace neurovol
