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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "neurovol/bias_field.hpp"
#include "neurovol/phantom.hpp"
#include "test_support.hpp"

using namespace neurovol;

namespace {

PhantomSpec small_spec() {
  PhantomSpec spec;
  spec.dims = {48, 48, 48};
  spec.wm_semi_axes = {12.0, 9.0, 7.5};
  spec.gm_semi_axes = {15.75, 12.75, 10.5};
  spec.csf_semi_axes = {18.75, 15.75, 12.75};
  spec.skull_semi_axes = {23.25, 20.25, 17.25};
  spec.noise_sigma = 50.0;
  return spec;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

double masked_cv(const Volume3D& vol, const LabelGrid& labels, std::uint8_t label) {
  double sum = 0, sum_sq = 0;
  std::int64_t n = 0;
  for (Eigen::Index i = 0; i < vol.values.size(); ++i) {
    if (labels.values[i] != label) continue;
    sum += vol.values[i];
    sum_sq += static_cast<double>(vol.values[i]) * vol.values[i];
    ++n;
  }
  const double mean = sum / n;
  return std::sqrt(std::max(sum_sq / n - mean * mean, 0.0)) / mean;
}

double log_tv_per_mm(const Volume3D& field, const BrainMask& mask) {
  double tv = 0;
  std::int64_t edges = 0;
  const auto d = field.dims;
  for (int z = 0; z < d.z(); ++z)
    for (int y = 0; y < d.y(); ++y)
      for (int x = 0; x < d.x(); ++x) {
        if (mask.at(x, y, z) == 0) continue;
        const double here = std::log(field.at(x, y, z));
        const int nb[3][3] = {{x + 1, y, z}, {x, y + 1, z}, {x, y, z + 1}};
        for (int k = 0; k < 3; ++k) {
          if (!field.in_bounds(nb[k][0], nb[k][1], nb[k][2])) continue;
          if (mask.at(nb[k][0], nb[k][1], nb[k][2]) == 0) continue;
          tv += std::abs(std::log(field.at(nb[k][0], nb[k][1], nb[k][2])) - here) /
                field.spacing[k];
          ++edges;
        }
      }
  return tv / static_cast<double>(edges);
}

}  // namespace

TEST_CASE("constant volume yields the unit field") {
  const Volume3D v = Volume3D::filled({24, 24, 24}, {2.0, 2.0, 2.0}, 800.0f);
  const BiasField f = estimate_bias_field(v, nullptr);
  CHECK((f.factors.values - 1.0f).abs().maxCoeff() <= 1e-3);
  CHECK(f.converged);
}

TEST_CASE("recovers an applied field on the phantom") {
  const PhantomSpec spec = small_spec();
  const PhantomResult ph = generate_phantom(spec);
  const auto [corrupted, true_field] = apply_bias_field(ph.volume, 0.2, 64.0, 17);

  const BrainMask& brain = ph.truth.brain_mask;
  const BiasField est = estimate_bias_field(corrupted, &brain);

  SUBCASE("log-field correlation inside the brain mask") {
    std::vector<double> est_log, true_log;
    for (Eigen::Index i = 0; i < brain.values.size(); ++i) {
      if (brain.values[i] == 0) continue;
      est_log.push_back(std::log(est.factors.values[i]));
      true_log.push_back(std::log(true_field.factors.values[i]));
    }
    CHECK(pearson(est_log, true_log) >= 0.95);
  }

  SUBCASE("within-class GM coefficient of variation halves") {
    const Volume3D corrected = correct_bias(corrupted, est);
    const double before = masked_cv(corrupted, ph.truth.labels, kLabelGm);
    const double after = masked_cv(corrected, ph.truth.labels, kLabelGm);
    CHECK(after <= 0.5 * before);
  }

  SUBCASE("field invariants: positivity and geometric mean") {
    CHECK(est.factors.values.minCoeff() > 0.0f);
    double log_mean = 0.0;
    for (Eigen::Index i = 0; i < est.factors.values.size(); ++i)
      log_mean += std::log(est.factors.values[i]);
    log_mean /= static_cast<double>(est.factors.values.size());
    CHECK(std::abs(std::exp(log_mean) - 1.0) <= 1e-3);
  }

  SUBCASE("smoothness guard: estimated field no rougher than 10x the true one") {
    const double est_tv = log_tv_per_mm(est.factors, brain);
    const double true_tv = log_tv_per_mm(true_field.factors, brain);
    CHECK(est_tv <= 10.0 * true_tv);
  }

  SUBCASE("idempotence trend: re-estimation shrinks the field range") {
    const Volume3D corrected = correct_bias(corrupted, est);
    const BiasField second = estimate_bias_field(corrected, &brain);
    auto log_range = [&](const BiasField& f) {
      double lo = 1e300, hi = -1e300;
      for (Eigen::Index i = 0; i < f.factors.values.size(); ++i) {
        if (brain.values[i] == 0) continue;
        const double lg = std::log(f.factors.values[i]);
        lo = std::min(lo, lg);
        hi = std::max(hi, lg);
      }
      return hi - lo;
    };
    CHECK(log_range(second) < 0.25 * log_range(est));
  }
}

TEST_CASE("correct_bias is pointwise division") {
  const Volume3D v = Volume3D::filled({8, 8, 8}, {1.0, 1.0, 1.0}, 10.0f);

  BiasField unit;
  unit.factors = Volume3D::filled({8, 8, 8}, {1.0, 1.0, 1.0}, 1.0f);
  CHECK((correct_bias(v, unit).values == v.values).all());

  BiasField twos;
  twos.factors = Volume3D::filled({8, 8, 8}, {1.0, 1.0, 1.0}, 2.0f);
  CHECK((correct_bias(v, twos).values == 5.0f).all());

  BiasField wrong;
  wrong.factors = Volume3D::filled({4, 4, 4}, {1.0, 1.0, 1.0}, 1.0f);
  CHECK_THROWS_AS(correct_bias(v, wrong), ShapeError);
}

TEST_CASE("algebraic inversion through the phantom field") {
  const PhantomSpec spec = small_spec();
  const PhantomResult ph = generate_phantom(spec);
  const auto [corrupted, truth] = apply_bias_field(ph.volume, 0.2, 64.0, 3);
  const Volume3D recovered = correct_bias(corrupted, truth);
  double max_rel = 0.0;
  for (Eigen::Index i = 0; i < recovered.values.size(); ++i) {
    const double u = ph.volume.values[i];
    if (u == 0.0) continue;
    max_rel = std::max(max_rel,
                       std::abs(static_cast<double>(recovered.values[i]) - u) / std::abs(u));
  }
  CHECK(max_rel < 1e-6);
}

TEST_CASE("field_update_cv") {
  BiasField a, b;
  a.factors = Volume3D::filled({4, 4, 4}, {1.0, 1.0, 1.0}, 1.0f);
  b.factors = Volume3D::filled({4, 4, 4}, {1.0, 1.0, 1.0}, 1.0f);
  CHECK(field_update_cv(a, b) == doctest::Approx(0.0));

  b.factors.values.setConstant(2.0f);
  CHECK(field_update_cv(a, b) == doctest::Approx(0.0));  // scale-only update

  // Ratio half 1.0, half 1.1: CV = 0.05 / 1.05.
  for (Eigen::Index i = 0; i < b.factors.values.size(); ++i)
    b.factors.values[i] = (i % 2 == 0) ? 1.0f : 1.1f;
  CHECK(field_update_cv(a, b) == doctest::Approx(0.05 / 1.05).epsilon(1e-5));

  BiasField wrong;
  wrong.factors = Volume3D::filled({2, 2, 2}, {1.0, 1.0, 1.0}, 1.0f);
  CHECK_THROWS_AS(field_update_cv(a, wrong), ShapeError);
}

TEST_CASE("empty mask and parameter validation") {
  const Volume3D v = Volume3D::filled({8, 8, 8}, {1.0, 1.0, 1.0}, 10.0f);
  BrainMask empty;
  empty.dims = v.dims;
  empty.spacing = v.spacing;
  empty.values = BrainMask::Array::Zero(v.values.size());
  CHECK_THROWS_AS(estimate_bias_field(v, &empty), InputError);

  const Volume3D zeros = Volume3D::filled({8, 8, 8}, {1.0, 1.0, 1.0}, 0.0f);
  CHECK_THROWS_AS(estimate_bias_field(zeros, nullptr), InputError);

  BiasParams bad;
  bad.control_spacing_mm = 1.0;  // must exceed 2x voxel spacing
  CHECK_THROWS_AS(estimate_bias_field(v, nullptr, bad), ParameterError);
}

TEST_CASE("non-convergence is flagged, not thrown") {
  const PhantomSpec spec = small_spec();
  const PhantomResult ph = generate_phantom(spec);
  const auto [corrupted, _] = apply_bias_field(ph.volume, 0.2, 64.0, 9);
  BiasParams params;
  params.max_iterations = 1;
  const BiasField est = estimate_bias_field(corrupted, &ph.truth.brain_mask, params);
  CHECK(est.iterations == 1);
  CHECK(!est.converged);
}
