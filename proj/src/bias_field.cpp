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
#include "neurovol/bias_field.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

namespace neurovol {

namespace {

constexpr double kLogFloor = 1e-3;  // intensity floor before the log transform

// Uniform cubic B-spline basis at local parameter t in [0,1].
void cubic_basis(double t, double b[4]) {
  const double t2 = t * t, t3 = t2 * t;
  b[0] = (1.0 - 3.0 * t + 3.0 * t2 - t3) / 6.0;
  b[1] = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0;
  b[2] = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
  b[3] = t3 / 6.0;
}

// Regular cubic B-spline lattice over the volume extent. The requested
// control spacing is stretched per axis so an integer number of intervals
// covers the extent exactly; coefficients extend one knot beyond each end.
struct SplineLattice {
  Eigen::Vector3i ncoef;
  std::array<std::vector<int>, 3> base;        // per-axis interval index per voxel
  std::array<std::vector<double>, 3> weights;  // 4 basis values per voxel

  SplineLattice(const Volume3D& vol, double control_spacing_mm) {
    if (control_spacing_mm <= 2.0 * vol.spacing.maxCoeff())
      throw ParameterError("control spacing must exceed 2x the voxel spacing");
    for (int axis = 0; axis < 3; ++axis) {
      const int n = vol.dims[axis];
      const double extent = std::max((n - 1) * vol.spacing[axis], 1e-9);
      const int intervals = std::max(1, static_cast<int>(std::ceil(extent / control_spacing_mm)));
      const double h = extent / intervals;
      ncoef[axis] = intervals + 3;
      base[axis].resize(n);
      weights[axis].resize(4 * n);
      for (int i = 0; i < n; ++i) {
        const double u = (i * vol.spacing[axis]) / h;
        int cell = std::min(static_cast<int>(u), intervals - 1);
        base[axis][i] = cell;
        cubic_basis(u - cell, &weights[axis][4 * i]);
      }
    }
  }

  int coef_count() const { return ncoef.x() * ncoef.y() * ncoef.z(); }

  // The 64 global coefficient indices and tensor weights at voxel (x,y,z).
  void local_support(int x, int y, int z, int idx[64], double w[64]) const {
    const int bx = base[0][x], by = base[1][y], bz = base[2][z];
    const double* wx = &weights[0][4 * x];
    const double* wy = &weights[1][4 * y];
    const double* wz = &weights[2][4 * z];
    int k = 0;
    for (int c = 0; c < 4; ++c) {
      const double wzc = wz[c];
      const int zoff = (bz + c) * ncoef.y();
      for (int b = 0; b < 4; ++b) {
        const double wyb = wy[b] * wzc;
        const int yoff = (zoff + by + b) * ncoef.x();
        for (int a = 0; a < 4; ++a, ++k) {
          idx[k] = yoff + bx + a;
          w[k] = wx[a] * wyb;
        }
      }
    }
  }
};

// Least-squares fit machinery with the normal matrix factorized once; only
// the right-hand side changes across iterations.
class SplineFitter {
 public:
  SplineFitter(const Volume3D& vol, const std::vector<Eigen::Index>& mask_idx,
               const SplineLattice& lattice)
      : vol_(vol), lattice_(lattice), m_(lattice.coef_count()) {
    normal_ = Eigen::MatrixXd::Zero(m_, m_);
    int idx[64];
    double w[64];
    for (const Eigen::Index i : mask_idx) {
      const auto [x, y, z] = unflatten(i);
      lattice_.local_support(x, y, z, idx, w);
      for (int a = 0; a < 64; ++a) {
        const double wa = w[a];
        const int ia = idx[a];
        for (int b = a; b < 64; ++b) normal_(ia, idx[b]) += wa * w[b];
      }
    }
    normal_ = normal_.selfadjointView<Eigen::Upper>();
    // Tikhonov damping keeps unsupported coefficients (no mask voxels in
    // range) pinned near zero, i.e. field ~ 1 away from data.
    const double damping = 1e-6 * std::max(normal_.diagonal().maxCoeff(), 1.0);
    normal_.diagonal().array() += damping;
    solver_.compute(normal_);
  }

  Eigen::VectorXd fit(const std::vector<Eigen::Index>& mask_idx,
                      const std::vector<double>& residual) const {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m_);
    int idx[64];
    double w[64];
    for (std::size_t k = 0; k < mask_idx.size(); ++k) {
      const auto [x, y, z] = unflatten(mask_idx[k]);
      lattice_.local_support(x, y, z, idx, w);
      for (int a = 0; a < 64; ++a) rhs[idx[a]] += w[a] * residual[k];
    }
    return solver_.solve(rhs);
  }

  // Joint least squares with per-class nuisance offsets: the offsets absorb
  // each class's mean residual so the spline is not pulled toward
  // anatomy-shaped structure (a per-class constant is not a field). Solved by
  // eliminating the offsets (Schur complement of the cached normal matrix).
  Eigen::VectorXd fit_with_class_offsets(const std::vector<Eigen::Index>& mask_idx,
                                         const std::vector<double>& residual,
                                         const std::vector<std::uint8_t>& assign,
                                         int num_classes) const {
    std::vector<Eigen::VectorXd> a_cols(num_classes, Eigen::VectorXd::Zero(m_));
    std::vector<double> b_sum(num_classes, 0.0);
    std::vector<std::int64_t> n_class(num_classes, 0);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m_);

    int idx[64];
    double w[64];
    for (std::size_t k = 0; k < mask_idx.size(); ++k) {
      const auto [x, y, z] = unflatten(mask_idx[k]);
      lattice_.local_support(x, y, z, idx, w);
      const int cls = assign[k];
      Eigen::VectorXd& acc = a_cols[cls];
      for (int a = 0; a < 64; ++a) {
        rhs[idx[a]] += w[a] * residual[k];
        acc[idx[a]] += w[a];
      }
      b_sum[cls] += residual[k];
      ++n_class[cls];
    }

    Eigen::MatrixXd schur = normal_;
    for (int c = 0; c < num_classes; ++c) {
      if (n_class[c] == 0) continue;
      const double inv_n = 1.0 / static_cast<double>(n_class[c]);
      schur.selfadjointView<Eigen::Lower>().rankUpdate(a_cols[c], -inv_n);
      rhs -= (b_sum[c] * inv_n) * a_cols[c];
    }
    return Eigen::LDLT<Eigen::MatrixXd>(schur.selfadjointView<Eigen::Lower>()).solve(rhs);
  }

  // Dense evaluation of the spline over the whole grid.
  Eigen::ArrayXd evaluate(const Eigen::VectorXd& coef) const {
    Eigen::ArrayXd out(vol_.values.size());
    int idx[64];
    double w[64];
    Eigen::Index flat = 0;
    for (int z = 0; z < vol_.dims.z(); ++z)
      for (int y = 0; y < vol_.dims.y(); ++y)
        for (int x = 0; x < vol_.dims.x(); ++x, ++flat) {
          lattice_.local_support(x, y, z, idx, w);
          double acc = 0.0;
          for (int a = 0; a < 64; ++a) acc += w[a] * coef[idx[a]];
          out[flat] = acc;
        }
    return out;
  }

 private:
  std::tuple<int, int, int> unflatten(Eigen::Index i) const {
    const int x = static_cast<int>(i % vol_.dims.x());
    const int y = static_cast<int>((i / vol_.dims.x()) % vol_.dims.y());
    const int z = static_cast<int>(i / (static_cast<Eigen::Index>(vol_.dims.x()) * vol_.dims.y()));
    return {x, y, z};
  }

  const Volume3D& vol_;
  const SplineLattice& lattice_;
  int m_;
  Eigen::MatrixXd normal_;
  Eigen::LDLT<Eigen::MatrixXd> solver_;
};

// Sharpened tissue estimate: optimal three-class 1-D clustering of the masked
// log intensities, solved exactly by dynamic programming on a binned
// histogram. Exact clustering avoids the bad local optima a seeded Lloyd
// iteration can fall into when one intensity clump dominates. Returns the
// per-sample class mean plus the assignments. Degenerates to fewer classes on
// (near-)constant data.
struct TissueEstimate {
  std::vector<double> class_mean;
  std::vector<std::uint8_t> assign;
  int num_classes = 1;
};

TissueEstimate class_mean_estimate(const std::vector<double>& samples) {
  constexpr int kBins = 1024;
  constexpr int kClasses = 3;

  TissueEstimate out;
  out.assign.assign(samples.size(), 0);

  double lo = samples[0], hi = samples[0];
  for (const double s : samples) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (hi - lo < 1e-12) {
    out.class_mean.assign(samples.size(), lo);
    return out;
  }

  const double width = (hi - lo) / kBins;
  std::vector<double> w(kBins, 0.0), wx(kBins, 0.0), wxx(kBins, 0.0);
  std::vector<int> sample_bin(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int b = std::min(static_cast<int>((samples[i] - lo) / width), kBins - 1);
    sample_bin[i] = b;
    w[b] += 1.0;
    wx[b] += samples[i];
    wxx[b] += samples[i] * samples[i];
  }

  // Compact to non-empty bins; prefix sums give O(1) within-range SSE.
  std::vector<double> pw{0.0}, pwx{0.0}, pwxx{0.0};
  std::vector<int> bin_of;  // compact index -> original bin
  for (int b = 0; b < kBins; ++b) {
    if (w[b] == 0.0) continue;
    pw.push_back(pw.back() + w[b]);
    pwx.push_back(pwx.back() + wx[b]);
    pwxx.push_back(pwxx.back() + wxx[b]);
    bin_of.push_back(b);
  }
  const int n = static_cast<int>(bin_of.size());
  const int k = std::min(kClasses, n);
  out.num_classes = k;

  auto sse = [&](int a, int b) {  // compact bins [a, b], inclusive
    const double sw = pw[b + 1] - pw[a];
    const double sx = pwx[b + 1] - pwx[a];
    const double sxx = pwxx[b + 1] - pwxx[a];
    return sxx - sx * sx / sw;
  };

  // dp[c][b]: best cost of clustering compact bins [0, b] into c+1 groups.
  std::vector<std::vector<double>> dp(k, std::vector<double>(n, 0.0));
  std::vector<std::vector<int>> arg(k, std::vector<int>(n, 0));
  for (int b = 0; b < n; ++b) dp[0][b] = sse(0, b);
  for (int c = 1; c < k; ++c) {
    for (int b = c; b < n; ++b) {
      double best = std::numeric_limits<double>::infinity();
      int best_a = c;
      for (int a = c; a <= b; ++a) {
        const double cost = dp[c - 1][a - 1] + sse(a, b);
        if (cost < best) {
          best = cost;
          best_a = a;
        }
      }
      dp[c][b] = best;
      arg[c][b] = best_a;
    }
  }

  // Backtrack group boundaries, then group means and per-original-bin class.
  std::vector<int> start(k);
  int b = n - 1;
  for (int c = k - 1; c >= 0; --c) {
    start[c] = c == 0 ? 0 : arg[c][b];
    b = start[c] - 1;
  }
  std::vector<double> means(k);
  std::vector<std::uint8_t> bin_class(kBins, 0);
  for (int c = 0; c < k; ++c) {
    const int a = start[c];
    const int e = c + 1 < k ? start[c + 1] - 1 : n - 1;
    means[c] = (pwx[e + 1] - pwx[a]) / (pw[e + 1] - pw[a]);
    for (int cb = a; cb <= e; ++cb) {
      const int next = cb + 1 < n ? bin_of[cb + 1] : kBins;
      for (int ob = bin_of[cb]; ob < next; ++ob) bin_class[ob] = static_cast<std::uint8_t>(c);
    }
  }

  out.class_mean.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.assign[i] = bin_class[sample_bin[i]];
    out.class_mean[i] = means[out.assign[i]];
  }
  return out;
}

// One 6-neighbor mean pass over the masked residual.
void smooth_masked(const Volume3D& vol, const std::vector<Eigen::Index>& mask_idx,
                   const std::vector<std::int32_t>& mask_pos, std::vector<double>& values) {
  static constexpr int kOff[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                     {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
  std::vector<double> out(values.size());
  for (std::size_t k = 0; k < mask_idx.size(); ++k) {
    const Eigen::Index i = mask_idx[k];
    const int x = static_cast<int>(i % vol.dims.x());
    const int y = static_cast<int>((i / vol.dims.x()) % vol.dims.y());
    const int z = static_cast<int>(i / (static_cast<Eigen::Index>(vol.dims.x()) * vol.dims.y()));
    double acc = values[k];
    int count = 1;
    for (const auto& o : kOff) {
      const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
      if (!vol.in_bounds(nx, ny, nz)) continue;
      const std::int32_t pos = mask_pos[vol.index(nx, ny, nz)];
      if (pos >= 0) {
        acc += values[pos];
        ++count;
      }
    }
    out[k] = acc / count;
  }
  values = std::move(out);
}

}  // namespace

BiasField estimate_bias_field(const Volume3D& vol, const BrainMask* mask,
                              const BiasParams& params) {
  vol.validate();
  if (params.max_iterations < 1) throw ParameterError("max iterations must be >= 1");
  if (!(params.tolerance > 0.0)) throw ParameterError("tolerance must be positive");
  if (mask != nullptr && mask->dims != vol.dims)
    throw ShapeError("bias mask dims do not match volume");

  std::vector<Eigen::Index> mask_idx;
  mask_idx.reserve(vol.values.size() / 2);
  std::int64_t positive = 0;
  for (Eigen::Index i = 0; i < vol.values.size(); ++i) {
    if (mask == nullptr || mask->values[i] != 0) {
      mask_idx.push_back(i);
      if (vol.values[i] > 0.0f) ++positive;
    }
  }
  if (mask_idx.empty()) throw InputError("estimate_bias_field: empty mask");
  if (positive == 0)
    throw InputError("estimate_bias_field: no positive intensities inside mask");

  // Reverse lookup flat index -> position in the masked sample list.
  std::vector<std::int32_t> mask_pos(vol.values.size(), -1);
  for (std::size_t k = 0; k < mask_idx.size(); ++k)
    mask_pos[mask_idx[k]] = static_cast<std::int32_t>(k);

  std::vector<double> log_intensity(mask_idx.size());
  for (std::size_t k = 0; k < mask_idx.size(); ++k)
    log_intensity[k] = std::log(std::max<double>(vol.values[mask_idx[k]], kLogFloor));

  const SplineLattice lattice(vol, params.control_spacing_mm);
  const SplineFitter fitter(vol, mask_idx, lattice);

  Eigen::ArrayXd log_field = Eigen::ArrayXd::Zero(vol.values.size());
  std::vector<double> corrected(mask_idx.size());
  std::vector<double> residual(mask_idx.size());

  BiasField out;
  out.converged = false;
  for (int iter = 1; iter <= params.max_iterations; ++iter) {
    for (std::size_t k = 0; k < mask_idx.size(); ++k)
      corrected[k] = log_intensity[k] - log_field[mask_idx[k]];

    const TissueEstimate tissue = class_mean_estimate(corrected);
    for (std::size_t k = 0; k < mask_idx.size(); ++k)
      residual[k] = corrected[k] - tissue.class_mean[k];
    for (int pass = 0; pass < params.smoothing_passes; ++pass)
      smooth_masked(vol, mask_idx, mask_pos, residual);

    const Eigen::VectorXd coef = fitter.fit_with_class_offsets(
        mask_idx, residual, tissue.assign, tissue.num_classes);
    const Eigen::ArrayXd increment = fitter.evaluate(coef);
    log_field += increment;
    out.iterations = iter;

    // Convergence on the multiplicative field update: CV of exp(increment)
    // over the mask.
    double mean = 0.0, mean_sq = 0.0;
    for (const Eigen::Index i : mask_idx) {
      const double u = std::exp(increment[i]);
      mean += u;
      mean_sq += u * u;
    }
    mean /= static_cast<double>(mask_idx.size());
    mean_sq /= static_cast<double>(mask_idx.size());
    const double cv = std::sqrt(std::max(mean_sq - mean * mean, 0.0)) / mean;
    if (cv < params.tolerance) {
      out.converged = true;
      break;
    }
  }

  // Geometric-mean normalization over the full grid, then exponentiate.
  log_field -= log_field.mean();
  Volume3D::Array factors(vol.values.size());
  for (Eigen::Index i = 0; i < vol.values.size(); ++i)
    factors[i] = static_cast<float>(std::exp(log_field[i]));
  out.factors = vol.with_values<float>(std::move(factors));
  return out;
}

Volume3D correct_bias(const Volume3D& vol, const BiasField& field) {
  if (!vol.same_geometry(field.factors))
    throw ShapeError("correct_bias: field geometry does not match volume");
  Volume3D::Array out = vol.values / field.factors.values;
  return vol.with_values<float>(std::move(out));
}

double field_update_cv(const BiasField& prev, const BiasField& cur, const BrainMask* mask) {
  if (!prev.factors.same_geometry(cur.factors))
    throw ShapeError("field_update_cv: field grids do not match");
  if (mask != nullptr && mask->dims != prev.factors.dims)
    throw ShapeError("field_update_cv: mask dims do not match");

  double mean = 0.0, mean_sq = 0.0;
  std::int64_t n = 0;
  for (Eigen::Index i = 0; i < prev.factors.values.size(); ++i) {
    if (mask != nullptr && mask->values[i] == 0) continue;
    const double r = static_cast<double>(cur.factors.values[i]) / prev.factors.values[i];
    mean += r;
    mean_sq += r * r;
    ++n;
  }
  if (n == 0) throw InputError("field_update_cv: empty mask");
  mean /= static_cast<double>(n);
  mean_sq /= static_cast<double>(n);
  return std::sqrt(std::max(mean_sq - mean * mean, 0.0)) / mean;
}

}  // namespace neurovol
