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
#include "neurovol/hmrf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace neurovol {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double percentile_sorted(const std::vector<float>& sorted, double q) {
  const auto n = static_cast<Eigen::Index>(sorted.size());
  if (n == 1) return sorted[0];
  const double pos = q * static_cast<double>(n - 1);
  const auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const auto hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<Eigen::Index> masked_indices(const BrainMask& mask) {
  std::vector<Eigen::Index> idx;
  idx.reserve(mask.values.size() / 4);
  for (Eigen::Index i = 0; i < mask.values.size(); ++i)
    if (mask.values[i] != 0) idx.push_back(i);
  return idx;
}

void sort_classes(GaussianClassParams& p, TissueProbabilityMaps* maps) {
  int order[3] = {0, 1, 2};
  std::sort(order, order + 3, [&](int a, int b) { return p.means[a] < p.means[b]; });
  if (order[0] == 0 && order[1] == 1 && order[2] == 2) return;

  GaussianClassParams sorted;
  for (int c = 0; c < 3; ++c) {
    sorted.means[c] = p.means[order[c]];
    sorted.stddevs[c] = p.stddevs[order[c]];
    sorted.weights[c] = p.weights[order[c]];
  }
  p = sorted;
  if (maps != nullptr) {
    TissueProbabilityMaps m;
    for (int c = 0; c < 3; ++c) m[c] = std::move((*maps)[order[c]]);
    *maps = std::move(m);
  }
}

}  // namespace

void GaussianClassParams::validate(double sigma_floor) const {
  if (std::abs(weights.sum() - 1.0) > 1e-9 || weights.minCoeff() < 0.0)
    throw ParameterError("class weights must be non-negative and sum to 1");
  if (stddevs.minCoeff() < sigma_floor)
    throw ParameterError("class stddev below floor");
  if (!(means[0] < means[1] && means[1] < means[2]))
    throw ParameterError("class means must be strictly increasing");
}

double gaussian_pdf(double y, double mu, double sigma, double sigma_floor) {
  if (sigma < sigma_floor || sigma <= 0.0)
    throw ParameterError("sigma below floor in gaussian_pdf");
  const double zscaled = (y - mu) / sigma;
  return std::exp(-0.5 * zscaled * zscaled) / (sigma * std::sqrt(2.0 * M_PI));
}

GaussianClassParams initialize_classes(const std::vector<float>& intensities,
                                       double sigma_floor) {
  constexpr int kClasses = 3;
  std::vector<float> sorted = intensities;
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
  if (distinct < kClasses)
    throw DegenerateInputError("need at least 3 distinct intensities to seed 3 classes");
  sorted = intensities;
  std::sort(sorted.begin(), sorted.end());

  double centers[kClasses] = {percentile_sorted(sorted, 0.25),
                              percentile_sorted(sorted, 0.50),
                              percentile_sorted(sorted, 0.75)};

  // Lloyd iterations on the 1-D intensities. Ties go to the lower class; an
  // emptied cluster keeps its previous center.
  std::vector<std::uint8_t> assign(intensities.size(), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    double sum[kClasses] = {0, 0, 0};
    std::int64_t cnt[kClasses] = {0, 0, 0};
    for (std::size_t i = 0; i < intensities.size(); ++i) {
      const double y = intensities[i];
      int best = 0;
      double best_d = std::abs(y - centers[0]);
      for (int c = 1; c < kClasses; ++c) {
        const double dist = std::abs(y - centers[c]);
        if (dist < best_d) {
          best = c;
          best_d = dist;
        }
      }
      if (assign[i] != best) {
        assign[i] = static_cast<std::uint8_t>(best);
        changed = true;
      }
      sum[best] += y;
      ++cnt[best];
    }
    for (int c = 0; c < kClasses; ++c)
      if (cnt[c] > 0) centers[c] = sum[c] / static_cast<double>(cnt[c]);
    if (!changed && iter > 0) break;
  }

  GaussianClassParams p;
  double var_sum[kClasses] = {0, 0, 0};
  std::int64_t cnt[kClasses] = {0, 0, 0};
  for (std::size_t i = 0; i < intensities.size(); ++i) {
    const int c = assign[i];
    const double diff = intensities[i] - centers[c];
    var_sum[c] += diff * diff;
    ++cnt[c];
  }
  for (int c = 0; c < kClasses; ++c) {
    if (cnt[c] == 0)
      throw DegenerateInputError("k-means produced an empty class");
    p.means[c] = centers[c];
    p.stddevs[c] = std::max(std::sqrt(var_sum[c] / static_cast<double>(cnt[c])), sigma_floor);
    p.weights[c] = static_cast<double>(cnt[c]) / static_cast<double>(intensities.size());
  }
  sort_classes(p, nullptr);
  return p;
}

Eigen::Vector3d mrf_spatial_prior(const TissueProbabilityMaps& posteriors, double beta_mrf,
                                  int x, int y, int z) {
  const ProbMap& ref = posteriors.csf;
  Eigen::Vector3d nsum = Eigen::Vector3d::Zero();
  static constexpr int kOff[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                     {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
  for (const auto& o : kOff) {
    const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
    if (!ref.in_bounds(nx, ny, nz)) continue;
    const Eigen::Index j = ref.index(nx, ny, nz);
    for (int c = 0; c < 3; ++c) nsum[c] += posteriors[c].values[j];
  }
  Eigen::Vector3d prior = (beta_mrf * nsum.array()).exp();
  return prior / prior.sum();
}

TissueProbabilityMaps zero_maps(const Volume3D& vol) {
  TissueProbabilityMaps maps;
  for (int c = 0; c < 3; ++c)
    maps[c] = vol.with_values<double>(ProbMap::Array::Zero(vol.values.size()));
  return maps;
}

TissueProbabilityMaps e_step(const Volume3D& vol, const BrainMask& mask,
                             const GaussianClassParams& params,
                             const TissueProbabilityMaps& prev, double beta_mrf,
                             int sweeps) {
  if (mask.dims != vol.dims) throw ShapeError("mask dims do not match volume");
  if (sweeps < 1) throw ParameterError("mean-field sweeps must be >= 1");

  const Eigen::Vector3i d = vol.dims;
  Eigen::Vector3d log_w;
  Eigen::Vector3d inv_two_var;
  Eigen::Vector3d log_norm;
  for (int c = 0; c < 3; ++c) {
    log_w[c] = std::log(std::max(params.weights[c], 1e-300));
    inv_two_var[c] = 1.0 / (2.0 * params.stddevs[c] * params.stddevs[c]);
    log_norm[c] = -std::log(params.stddevs[c]) - 0.5 * kLogTwoPi;
  }

  TissueProbabilityMaps cur = prev.csf.values.size() == vol.values.size()
                                  ? prev
                                  : zero_maps(vol);
  TissueProbabilityMaps next = zero_maps(vol);

  static constexpr int kOff[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                     {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};

  for (int sweep = 0; sweep < sweeps; ++sweep) {
    Eigen::Index idx = 0;
    for (int z = 0; z < d.z(); ++z) {
      for (int y = 0; y < d.y(); ++y) {
        for (int x = 0; x < d.x(); ++x, ++idx) {
          if (mask.values[idx] == 0) continue;
          const double v = vol.values[idx];
          if (!std::isfinite(v)) throw InputError("non-finite intensity inside mask");

          Eigen::Vector3d nsum = Eigen::Vector3d::Zero();
          if (beta_mrf != 0.0) {
            for (const auto& o : kOff) {
              const int ax = x + o[0], ay = y + o[1], az = z + o[2];
              if (ax < 0 || ay < 0 || az < 0 || ax >= d.x() || ay >= d.y() || az >= d.z())
                continue;
              const Eigen::Index j = vol.index(ax, ay, az);
              nsum[0] += cur.csf.values[j];
              nsum[1] += cur.gm.values[j];
              nsum[2] += cur.wm.values[j];
            }
          }

          double score[3];
          double max_score = -std::numeric_limits<double>::infinity();
          for (int c = 0; c < 3; ++c) {
            const double diff = v - params.means[c];
            score[c] = log_w[c] + beta_mrf * nsum[c] + log_norm[c] -
                       diff * diff * inv_two_var[c];
            max_score = std::max(max_score, score[c]);
          }
          double total = 0.0;
          double p[3];
          for (int c = 0; c < 3; ++c) {
            p[c] = std::exp(score[c] - max_score);
            total += p[c];
          }
          next.csf.values[idx] = p[0] / total;
          next.gm.values[idx] = p[1] / total;
          next.wm.values[idx] = p[2] / total;
        }
      }
    }
    if (sweep + 1 < sweeps) cur = next;
  }
  return next;
}

GaussianClassParams m_step(const Volume3D& vol, const BrainMask& mask,
                           TissueProbabilityMaps& posteriors, double sigma_floor) {
  const auto idx = masked_indices(mask);
  if (idx.empty()) throw InputError("m_step: empty mask");
  const auto n = static_cast<double>(idx.size());

  GaussianClassParams p;
  for (int c = 0; c < 3; ++c) {
    const ProbMap::Array& q = posteriors[c].values;
    double w = 0.0, s1 = 0.0;
    for (const Eigen::Index i : idx) {
      w += q[i];
      s1 += q[i] * vol.values[i];
    }
    if (w < 1e-12 * n)
      throw ClassCollapseError("class " + std::to_string(c) + " lost all posterior mass");
    const double mu = s1 / w;
    double s2 = 0.0;
    for (const Eigen::Index i : idx) {
      const double diff = vol.values[i] - mu;
      s2 += q[i] * diff * diff;
    }
    p.means[c] = mu;
    p.stddevs[c] = std::max(std::sqrt(s2 / w), sigma_floor);
    p.weights[c] = w / n;
  }
  sort_classes(p, &posteriors);
  return p;
}

SegmentationResult segment_hmrf(const Volume3D& vol, const BrainMask& mask,
                                const SegConfig& config) {
  if (config.em_iterations < 1) throw ParameterError("EM iterations must be >= 1");
  require_binary_mask(vol, mask);

  std::vector<float> intensities;
  intensities.reserve(vol.values.size() / 4);
  for (Eigen::Index i = 0; i < mask.values.size(); ++i)
    if (mask.values[i] != 0) intensities.push_back(vol.values[i]);
  if (intensities.empty()) throw InputError("segment_hmrf: empty mask");

  const auto [mn, mx] = std::minmax_element(intensities.begin(), intensities.end());
  const double range = static_cast<double>(*mx) - static_cast<double>(*mn);
  const double sigma_floor = std::max(config.sigma_floor_frac * range, 1e-12);

  GaussianClassParams params = initialize_classes(intensities, sigma_floor);

  SegmentationResult result;
  // Initial responsibilities are the plain GMM ones; the neighborhood prior
  // starts feeding in from the first full E-step.
  result.maps = e_step(vol, mask, params, zero_maps(vol), 0.0, 1);

  const double mean_tol = 1e-4 * range;
  for (int it = 1; it <= config.em_iterations; ++it) {
    result.maps = e_step(vol, mask, params, result.maps, config.beta_mrf,
                         config.mean_field_sweeps);
    const GaussianClassParams updated = m_step(vol, mask, result.maps, sigma_floor);
    const double dmu = (updated.means - params.means).cwiseAbs().maxCoeff();
    params = updated;
    result.iterations = it;
    if (dmu < mean_tol) {
      result.converged = true;
      break;
    }
  }
  result.params = params;
  return result;
}

double log_objective(const Volume3D& vol, const BrainMask& mask,
                     const TissueProbabilityMaps& posteriors,
                     const GaussianClassParams& params, double beta_mrf) {
  const Eigen::Vector3i d = vol.dims;
  Eigen::Vector3d log_w, inv_two_var, log_norm;
  for (int c = 0; c < 3; ++c) {
    log_w[c] = std::log(std::max(params.weights[c], 1e-300));
    inv_two_var[c] = 1.0 / (2.0 * params.stddevs[c] * params.stddevs[c]);
    log_norm[c] = -std::log(params.stddevs[c]) - 0.5 * kLogTwoPi;
  }

  static constexpr int kOff[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                     {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
  double loglik = 0.0;
  double smoothness = 0.0;
  Eigen::Index idx = 0;
  for (int z = 0; z < d.z(); ++z) {
    for (int y = 0; y < d.y(); ++y) {
      for (int x = 0; x < d.x(); ++x, ++idx) {
        if (mask.values[idx] == 0) continue;
        const double v = vol.values[idx];
        double max_score = -std::numeric_limits<double>::infinity();
        double score[3];
        for (int c = 0; c < 3; ++c) {
          const double diff = v - params.means[c];
          score[c] = log_w[c] + log_norm[c] - diff * diff * inv_two_var[c];
          max_score = std::max(max_score, score[c]);
        }
        double total = 0.0;
        for (int c = 0; c < 3; ++c) total += std::exp(score[c] - max_score);
        loglik += max_score + std::log(total);

        if (beta_mrf != 0.0) {
          for (const auto& o : kOff) {
            const int ax = x + o[0], ay = y + o[1], az = z + o[2];
            if (ax < 0 || ay < 0 || az < 0 || ax >= d.x() || ay >= d.y() || az >= d.z())
              continue;
            const Eigen::Index j = vol.index(ax, ay, az);
            smoothness += posteriors.csf.values[idx] * posteriors.csf.values[j] +
                          posteriors.gm.values[idx] * posteriors.gm.values[j] +
                          posteriors.wm.values[idx] * posteriors.wm.values[j];
          }
        }
      }
    }
  }
  return loglik + beta_mrf * smoothness;
}

}  // namespace neurovol
