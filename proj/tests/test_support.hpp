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

// Shared helpers and independent oracles for the test suites. Everything here
// must stay independent of the library implementations it checks: oracles are
// brute-force or series-based reimplementations.

#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "neurovol/grid.hpp"
#include "neurovol/hmrf.hpp"

namespace testsup {

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("neurovol_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::filesystem::path path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Random valid volume for round-trip property tests.
inline neurovol::Volume3D random_volume(std::uint64_t seed, int max_dim = 12) {
  std::mt19937_64 engine(seed);
  std::uniform_int_distribution<int> udim(1, max_dim);
  std::uniform_real_distribution<double> uspace(0.3, 3.0);
  std::uniform_real_distribution<float> uval(-1000.0f, 3000.0f);
  const Eigen::Vector3i dims(udim(engine), udim(engine), udim(engine));
  const Eigen::Vector3d spacing(uspace(engine), uspace(engine), uspace(engine));
  neurovol::Volume3D::Array vals(static_cast<Eigen::Index>(dims.x()) * dims.y() * dims.z());
  for (Eigen::Index i = 0; i < vals.size(); ++i) vals[i] = uval(engine);
  return neurovol::Volume3D::create(dims, spacing, std::move(vals));
}

/// Exact percentile oracle: full sort, linear interpolation on (n-1).
inline double percentile_oracle(std::vector<double> values, double pct) {
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - lo) * (values[hi] - values[lo]);
}

/// High-precision standard normal CDF oracle: Taylor series around 0 for
/// |x| <= 1, asymptotic continued fraction for the tail, in long double.
inline double normal_cdf_oracle(double x) {
  const long double ax = std::fabs(static_cast<long double>(x));
  const long double pdf = std::exp(-0.5L * ax * ax) / std::sqrt(2.0L * M_PIl);
  long double phi;
  if (ax <= 7.0L) {
    // Phi(x) = 1/2 + pdf(x) * sum_{k>=0} x^(2k+1) / (1*3*5*...*(2k+1)).
    // All terms positive, no cancellation; converges over the whole range.
    long double term = ax;
    long double sum = ax;
    for (int k = 1; k < 600; ++k) {
      term *= ax * ax / (2.0L * k + 1.0L);
      sum += term;
      if (term < sum * 1e-22L) break;
    }
    phi = 0.5L + pdf * sum;
  } else {
    // Deep tail: continued fraction for the Mills ratio.
    long double cf = 0.0L;
    for (int k = 200; k >= 1; --k) cf = static_cast<long double>(k) / (ax + cf);
    phi = 1.0L - pdf / (ax + cf);
  }
  const long double result = x >= 0 ? phi : 1.0L - phi;
  return static_cast<double>(result);
}

/// Brute-force Mann-Kendall oracle with dead band via literal pair loops.
inline int mk_statistic_oracle(const std::vector<double>& x, double band) {
  int s = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    for (std::size_t j = k + 1; j < x.size(); ++j) {
      const double d = x[j] - x[k];
      if (d > band)
        ++s;
      else if (d < -band)
        --s;
    }
  }
  return s;
}

/// Independent plain GMM-EM oracle mirroring the library's protocol (quantile
/// seeded 1-D k-means init, alternating E/M), but coded from the textbook
/// formulas with its own data layout.
struct GmmOracle {
  std::vector<double> mu{0, 0, 0}, sigma{1, 1, 1}, pi{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::vector<std::array<double, 3>> resp;

  static double pct(std::vector<double> sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
  }

  void init_kmeans(const std::vector<double>& y, double sigma_floor) {
    std::vector<double> sorted = y;
    std::sort(sorted.begin(), sorted.end());
    double centers[3] = {pct(sorted, 0.25), pct(sorted, 0.50), pct(sorted, 0.75)};
    std::vector<int> assign(y.size(), 0);
    for (int iter = 0; iter < 100; ++iter) {
      bool changed = false;
      double sum[3] = {0, 0, 0};
      long cnt[3] = {0, 0, 0};
      for (std::size_t i = 0; i < y.size(); ++i) {
        int best = 0;
        for (int c = 1; c < 3; ++c)
          if (std::abs(y[i] - centers[c]) < std::abs(y[i] - centers[best])) best = c;
        if (assign[i] != best) {
          assign[i] = best;
          changed = true;
        }
        sum[best] += y[i];
        ++cnt[best];
      }
      for (int c = 0; c < 3; ++c)
        if (cnt[c] > 0) centers[c] = sum[c] / cnt[c];
      if (!changed && iter > 0) break;
    }
    double var[3] = {0, 0, 0};
    long cnt[3] = {0, 0, 0};
    for (std::size_t i = 0; i < y.size(); ++i) {
      var[assign[i]] += (y[i] - centers[assign[i]]) * (y[i] - centers[assign[i]]);
      ++cnt[assign[i]];
    }
    for (int c = 0; c < 3; ++c) {
      mu[c] = centers[c];
      sigma[c] = std::max(std::sqrt(var[c] / std::max<long>(cnt[c], 1)), sigma_floor);
      pi[c] = static_cast<double>(cnt[c]) / static_cast<double>(y.size());
    }
    sort_classes();
  }

  void sort_classes() {
    int order[3] = {0, 1, 2};
    std::sort(order, order + 3, [&](int a, int b) { return mu[a] < mu[b]; });
    const auto m = mu;
    const auto s = sigma;
    const auto p = pi;
    for (int c = 0; c < 3; ++c) {
      mu[c] = m[order[c]];
      sigma[c] = s[order[c]];
      pi[c] = p[order[c]];
    }
    if (!resp.empty()) {
      for (auto& r : resp) {
        const auto old = r;
        for (int c = 0; c < 3; ++c) r[c] = old[order[c]];
      }
    }
  }

  void e_step(const std::vector<double>& y) {
    resp.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      double logp[3];
      double mx = -1e300;
      for (int c = 0; c < 3; ++c) {
        const double d = (y[i] - mu[c]) / sigma[c];
        logp[c] = std::log(std::max(pi[c], 1e-300)) - std::log(sigma[c]) -
                  0.5 * std::log(2.0 * M_PI) - 0.5 * d * d;
        mx = std::max(mx, logp[c]);
      }
      double tot = 0;
      for (int c = 0; c < 3; ++c) {
        resp[i][c] = std::exp(logp[c] - mx);
        tot += resp[i][c];
      }
      for (int c = 0; c < 3; ++c) resp[i][c] /= tot;
    }
  }

  void m_step(const std::vector<double>& y, double sigma_floor) {
    for (int c = 0; c < 3; ++c) {
      double w = 0, s1 = 0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        w += resp[i][c];
        s1 += resp[i][c] * y[i];
      }
      mu[c] = s1 / w;
      double s2 = 0;
      for (std::size_t i = 0; i < y.size(); ++i)
        s2 += resp[i][c] * (y[i] - mu[c]) * (y[i] - mu[c]);
      sigma[c] = std::max(std::sqrt(s2 / w), sigma_floor);
      pi[c] = w / static_cast<double>(y.size());
    }
    sort_classes();
  }

  double log_likelihood(const std::vector<double>& y) const {
    double total = 0;
    for (const double v : y) {
      double acc = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = (v - mu[c]) / sigma[c];
        acc += pi[c] * std::exp(-0.5 * d * d) / (sigma[c] * std::sqrt(2.0 * M_PI));
      }
      total += std::log(acc);
    }
    return total;
  }

  /// Mirrors segment_hmrf's sequencing at beta = 0: init, initial E, then
  /// `iters` rounds of E (with pre-M params) followed by M.
  void run(const std::vector<double>& y, double sigma_floor, int iters) {
    init_kmeans(y, sigma_floor);
    e_step(y);
    for (int it = 0; it < iters; ++it) {
      e_step(y);
      m_step(y, sigma_floor);
    }
  }
};

inline double dice_oracle(const neurovol::BrainMask& a, const neurovol::BrainMask& b) {
  std::int64_t inter = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.values.size(); ++i) {
    na += a.values[i] != 0;
    nb += b.values[i] != 0;
    inter += (a.values[i] != 0 && b.values[i] != 0);
  }
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace testsup
