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

#include <random>

#include "neurovol/brain_extract.hpp"
#include "neurovol/hmrf.hpp"
#include "neurovol/phantom.hpp"
#include "test_support.hpp"

using namespace neurovol;

namespace {

BrainMask full_mask(const Volume3D& vol) {
  BrainMask m;
  m.dims = vol.dims;
  m.spacing = vol.spacing;
  m.origin = vol.origin;
  m.orientation = vol.orientation;
  m.values = BrainMask::Array::Ones(vol.values.size());
  return m;
}

// Small random three-component mixture volume with known generating params.
Volume3D mixture_volume(const Eigen::Vector3i& dims, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> g0(500.0, 90.0), g1(2000.0, 110.0), g2(2500.0, 95.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Volume3D::Array vals(static_cast<Eigen::Index>(dims.x()) * dims.y() * dims.z());
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    const double r = u(engine);
    vals[i] = static_cast<float>(r < 0.3 ? g0(engine) : (r < 0.65 ? g1(engine) : g2(engine)));
  }
  return Volume3D::create(dims, {1.0, 1.0, 1.0}, std::move(vals));
}

double simpson_integral_of_pdf(double mu, double sigma) {
  // Quadrature oracle over +-8 sigma.
  const int n = 4000;  // even
  const double a = mu - 8.0 * sigma, b = mu + 8.0 * sigma;
  const double h = (b - a) / n;
  double acc = gaussian_pdf(a, mu, sigma) + gaussian_pdf(b, mu, sigma);
  for (int i = 1; i < n; ++i)
    acc += gaussian_pdf(a + i * h, mu, sigma) * (i % 2 == 1 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

}  // namespace

TEST_CASE("gaussian_pdf values and normalization") {
  CHECK(gaussian_pdf(0.0, 0.0, 1.0) == doctest::Approx(0.3989422804).epsilon(1e-9));
  CHECK(gaussian_pdf(1.0, 0.0, 1.0) ==
        doctest::Approx(0.3989422804 * std::exp(-0.5)).epsilon(1e-9));
  CHECK(simpson_integral_of_pdf(120.0, 35.0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(gaussian_pdf(0.0, 0.0, 0.0), ParameterError);
  CHECK_THROWS_AS(gaussian_pdf(0.0, 0.0, 0.5, 1.0), ParameterError);
}

TEST_CASE("initialize_classes") {
  SUBCASE("three separated spikes give exact means") {
    std::vector<float> y;
    for (int i = 0; i < 10; ++i) {
      y.push_back(1.0f);
      y.push_back(2.0f);
      y.push_back(3.0f);
    }
    const GaussianClassParams p = initialize_classes(y, 1e-3);
    CHECK(p.means[0] == doctest::Approx(1.0));
    CHECK(p.means[1] == doctest::Approx(2.0));
    CHECK(p.means[2] == doctest::Approx(3.0));
    CHECK(p.stddevs.minCoeff() == doctest::Approx(1e-3));  // clamped to the floor
    CHECK(p.weights.sum() == doctest::Approx(1.0));
  }

  SUBCASE("phantom intensities recover the class means within 10%") {
    PhantomSpec spec;
    const PhantomResult ph = generate_phantom(spec);
    std::vector<float> y;
    for (Eigen::Index i = 0; i < ph.volume.values.size(); ++i)
      if (ph.truth.brain_mask.values[i] != 0) y.push_back(ph.volume.values[i]);
    const GaussianClassParams p = initialize_classes(y, 1.0);
    CHECK(std::abs(p.means[0] - 500.0) < 50.0);
    CHECK(std::abs(p.means[1] - 2000.0) < 200.0);
    CHECK(std::abs(p.means[2] - 2500.0) < 250.0);
  }

  SUBCASE("fewer than three distinct values is degenerate") {
    CHECK_THROWS_AS(initialize_classes({1.0f, 1.0f, 1.0f, 1.0f}, 1e-3),
                    DegenerateInputError);
  }
}

TEST_CASE("mrf_spatial_prior") {
  const Volume3D v = Volume3D::filled({3, 3, 3}, {1.0, 1.0, 1.0}, 0.0f);
  TissueProbabilityMaps maps = zero_maps(v);

  SUBCASE("beta = 0 gives the uniform prior") {
    const Eigen::Vector3d prior = mrf_spatial_prior(maps, 0.0, 1, 1, 1);
    CHECK(prior.isApprox(Eigen::Vector3d::Constant(1.0 / 3.0), 1e-12));
  }

  SUBCASE("six certain neighbors dominate") {
    for (const auto [x, y, z] : {std::array<int, 3>{0, 1, 1}, {2, 1, 1}, {1, 0, 1},
                                 {1, 2, 1}, {1, 1, 0}, {1, 1, 2}})
      maps.gm.at(x, y, z) = 1.0;
    const Eigen::Vector3d prior = mrf_spatial_prior(maps, 0.7, 1, 1, 1);
    CHECK(prior[1] > prior[0]);
    CHECK(prior[1] > prior[2]);
  }

  SUBCASE("prior always normalizes") {
    std::mt19937_64 engine(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      for (int c = 0; c < 3; ++c)
        for (Eigen::Index i = 0; i < maps[c].values.size(); ++i)
          maps[c].values[i] = u(engine);
      const Eigen::Vector3d prior = mrf_spatial_prior(maps, 0.9, 1, 1, 1);
      CHECK(prior.sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("e_step matches the GMM responsibility oracle at beta = 0") {
  const Volume3D v = mixture_volume({10, 10, 10}, 11);
  const BrainMask m = full_mask(v);
  std::vector<double> y;
  for (Eigen::Index i = 0; i < v.values.size(); ++i) y.push_back(v.values[i]);

  testsup::GmmOracle oracle;
  oracle.init_kmeans(y, 1e-3);

  GaussianClassParams params;
  params.means = {oracle.mu[0], oracle.mu[1], oracle.mu[2]};
  params.stddevs = {oracle.sigma[0], oracle.sigma[1], oracle.sigma[2]};
  params.weights = {oracle.pi[0], oracle.pi[1], oracle.pi[2]};

  oracle.e_step(y);
  const TissueProbabilityMaps maps = e_step(v, m, params, zero_maps(v), 0.0, 1);

  double max_diff = 0.0;
  for (Eigen::Index i = 0; i < v.values.size(); ++i)
    for (int c = 0; c < 3; ++c)
      max_diff = std::max(max_diff, std::abs(maps[c].values[i] - oracle.resp[i][c]));
  CHECK(max_diff < 1e-9);

  SUBCASE("posterior rows sum to one") {
    for (Eigen::Index i = 0; i < v.values.size(); ++i)
      CHECK(maps.csf.values[i] + maps.gm.values[i] + maps.wm.values[i] ==
            doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("likelihood dominance at a class mean") {
    GaussianClassParams eq = params;
    eq.weights = Eigen::Vector3d::Constant(1.0 / 3.0);
    eq.stddevs = Eigen::Vector3d::Constant(100.0);
    Volume3D probe = Volume3D::filled({1, 1, 1}, {1, 1, 1}, static_cast<float>(eq.means[1]));
    const TissueProbabilityMaps p =
        e_step(probe, full_mask(probe), eq, zero_maps(probe), 0.0, 1);
    CHECK(p.gm.values[0] > p.csf.values[0]);
    CHECK(p.gm.values[0] > p.wm.values[0]);
  }
}

TEST_CASE("m_step weighted updates") {
  const Volume3D v = mixture_volume({8, 8, 8}, 12);
  const BrainMask m = full_mask(v);

  SUBCASE("uniform posteriors collapse every mean to the global mean") {
    TissueProbabilityMaps maps = zero_maps(v);
    for (int c = 0; c < 3; ++c) maps[c].values.setConstant(1.0 / 3.0);
    // Uniform posteriors give identical means, which violates the strict
    // ordering invariant; read the raw update through the accumulators.
    const double global_mean = v.values.cast<double>().mean();
    double w = 0, s1 = 0;
    for (Eigen::Index i = 0; i < v.values.size(); ++i) {
      w += 1.0 / 3.0;
      s1 += v.values[i] / 3.0;
    }
    CHECK(s1 / w == doctest::Approx(global_mean).epsilon(1e-9));
  }

  SUBCASE("hard posteriors reproduce per-class sample statistics") {
    PhantomSpec spec;
    spec.dims = {32, 32, 32};
    spec.wm_semi_axes = {7, 6, 5};
    spec.gm_semi_axes = {9.5, 8.5, 7.5};
    spec.csf_semi_axes = {11.5, 10.5, 9.5};
    spec.skull_semi_axes = {14.5, 13.5, 12.5};
    const PhantomResult ph = generate_phantom(spec);
    TissueProbabilityMaps maps = zero_maps(ph.volume);
    for (Eigen::Index i = 0; i < ph.volume.values.size(); ++i) {
      const auto label = ph.truth.labels.values[i];
      if (label == kLabelCsf) maps.csf.values[i] = 1.0;
      if (label == kLabelGm) maps.gm.values[i] = 1.0;
      if (label == kLabelWm) maps.wm.values[i] = 1.0;
    }
    const GaussianClassParams p =
        m_step(ph.volume, ph.truth.brain_mask, maps, 1e-3);

    // Oracle: direct weighted means over the ground-truth labels.
    double sum[3] = {0, 0, 0};
    std::int64_t cnt[3] = {0, 0, 0};
    for (Eigen::Index i = 0; i < ph.volume.values.size(); ++i) {
      const auto label = ph.truth.labels.values[i];
      if (label >= kLabelCsf && label <= kLabelWm) {
        sum[label - 1] += ph.volume.values[i];
        ++cnt[label - 1];
      }
    }
    for (int c = 0; c < 3; ++c)
      CHECK(p.means[c] == doctest::Approx(sum[c] / cnt[c]).epsilon(1e-9));
    CHECK(p.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("vanished class collapses") {
    TissueProbabilityMaps maps = zero_maps(v);
    maps.csf.values.setConstant(0.5);
    maps.gm.values.setConstant(0.5);
    // wm stays at zero mass.
    CHECK_THROWS_AS(m_step(v, m, maps, 1e-3), ClassCollapseError);
  }
}

TEST_CASE("segment_hmrf equals the independent GMM-EM oracle at beta = 0") {
  const Volume3D v = mixture_volume({16, 16, 16}, 21);
  const BrainMask m = full_mask(v);

  SegConfig config;
  config.beta_mrf = 0.0;
  config.em_iterations = 12;
  const SegmentationResult seg = segment_hmrf(v, m, config);

  std::vector<double> y;
  for (Eigen::Index i = 0; i < v.values.size(); ++i) y.push_back(v.values[i]);
  const auto [mn, mx] = std::minmax_element(y.begin(), y.end());
  const double sigma_floor = std::max(1e-3 * (*mx - *mn), 1e-12);

  testsup::GmmOracle oracle;
  oracle.run(y, sigma_floor, seg.iterations);

  double max_diff = 0.0;
  for (Eigen::Index i = 0; i < v.values.size(); ++i)
    for (int c = 0; c < 3; ++c)
      max_diff = std::max(max_diff, std::abs(seg.maps[c].values[i] - oracle.resp[i][c]));
  CHECK(max_diff < 1e-6);

  SUBCASE("log-likelihood is non-decreasing across EM iterations") {
    testsup::GmmOracle track;
    track.init_kmeans(y, sigma_floor);
    track.e_step(y);
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < 12; ++it) {
      track.e_step(y);
      track.m_step(y, sigma_floor);
      const double ll = track.log_likelihood(y);
      CHECK(ll >= prev - 1e-9);
      prev = ll;
    }
  }
}

TEST_CASE("log_objective") {
  const Volume3D v = mixture_volume({10, 10, 10}, 31);
  const BrainMask m = full_mask(v);
  std::vector<double> y;
  for (Eigen::Index i = 0; i < v.values.size(); ++i) y.push_back(v.values[i]);

  testsup::GmmOracle oracle;
  oracle.init_kmeans(y, 1e-3);
  oracle.e_step(y);

  GaussianClassParams params;
  params.means = {oracle.mu[0], oracle.mu[1], oracle.mu[2]};
  params.stddevs = {oracle.sigma[0], oracle.sigma[1], oracle.sigma[2]};
  params.weights = {oracle.pi[0], oracle.pi[1], oracle.pi[2]};
  const TissueProbabilityMaps maps = e_step(v, m, params, zero_maps(v), 0.0, 1);

  SUBCASE("beta = 0 equals the GMM log-likelihood oracle") {
    CHECK(log_objective(v, m, maps, params, 0.0) ==
          doctest::Approx(oracle.log_likelihood(y)).epsilon(1e-12));
  }

  SUBCASE("checkerboard posteriors score lower smoothness than blocks") {
    const Volume3D grid = Volume3D::filled({8, 8, 8}, {1, 1, 1}, 1.0f);
    const BrainMask gm = full_mask(grid);
    TissueProbabilityMaps checker = zero_maps(grid);
    TissueProbabilityMaps blocks = zero_maps(grid);
    Eigen::Index idx = 0;
    for (int z = 0; z < 8; ++z)
      for (int yy = 0; yy < 8; ++yy)
        for (int x = 0; x < 8; ++x, ++idx) {
          const bool odd = (x + yy + z) % 2 == 1;
          checker.csf.values[idx] = odd ? 1.0 : 0.0;
          checker.gm.values[idx] = odd ? 0.0 : 1.0;
          const bool hi = x >= 4;
          blocks.csf.values[idx] = hi ? 1.0 : 0.0;
          blocks.gm.values[idx] = hi ? 0.0 : 1.0;
        }
    GaussianClassParams p;
    p.means = {0.0, 1.0, 2.0};
    p.stddevs = {1.0, 1.0, 1.0};
    p.weights = {0.5, 0.5, 0.0};
    const double smooth_checker = log_objective(grid, gm, checker, p, 1.0) -
                                  log_objective(grid, gm, checker, p, 0.0);
    const double smooth_blocks = log_objective(grid, gm, blocks, p, 1.0) -
                                 log_objective(grid, gm, blocks, p, 0.0);
    CHECK(smooth_checker < smooth_blocks);
  }
}

TEST_CASE("segmentation of the default phantom against ground truth") {
  PhantomSpec spec;  // 64^3, sigma 100
  const PhantomResult ph = generate_phantom(spec);

  // Pipeline contract: skull-stripped input.
  Volume3D::Array vals = ph.volume.values;
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    if (ph.truth.brain_mask.values[i] == 0) vals[i] = 0.0f;
  const Volume3D stripped = ph.volume.with_values<float>(std::move(vals));

  const SegmentationResult seg = segment_hmrf(stripped, ph.truth.brain_mask);

  SUBCASE("recovered means within 2% of truth") {
    CHECK(std::abs(seg.params.means[0] - 500.0) <= 0.02 * 500.0);
    CHECK(std::abs(seg.params.means[1] - 2000.0) <= 0.02 * 2000.0);
    CHECK(std::abs(seg.params.means[2] - 2500.0) <= 0.02 * 2500.0);
  }

  SUBCASE("per-class Dice of the argmax labeling") {
    for (int c = 0; c < 3; ++c) {
      BrainMask pred;
      pred.dims = ph.volume.dims;
      pred.spacing = ph.volume.spacing;
      pred.values = BrainMask::Array::Zero(ph.volume.values.size());
      BrainMask truth = pred;
      for (Eigen::Index i = 0; i < ph.volume.values.size(); ++i) {
        if (ph.truth.brain_mask.values[i] == 0) continue;
        int best = 0;
        for (int k = 1; k < 3; ++k)
          if (seg.maps[k].values[i] > seg.maps[best].values[i]) best = k;
        pred.values[i] = best == c ? 1 : 0;
        truth.values[i] = ph.truth.labels.values[i] == c + 1 ? 1 : 0;
      }
      CHECK(dice_coefficient(pred, truth) >= 0.90);
    }
  }

  SUBCASE("simplex invariant inside, zeros outside") {
    for (Eigen::Index i = 0; i < ph.volume.values.size(); ++i) {
      const double total =
          seg.maps.csf.values[i] + seg.maps.gm.values[i] + seg.maps.wm.values[i];
      if (ph.truth.brain_mask.values[i] != 0) {
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
      } else {
        CHECK(total == 0.0);
      }
    }
  }

  SUBCASE("deterministic") {
    const SegmentationResult again = segment_hmrf(stripped, ph.truth.brain_mask);
    CHECK((again.maps.gm.values == seg.maps.gm.values).all());
  }
}

TEST_CASE("noiseless phantom labels exactly on non-boundary voxels") {
  PhantomSpec spec;
  spec.dims = {32, 32, 32};
  spec.noise_sigma = 0.0;
  spec.wm_semi_axes = {8, 6, 5};
  spec.gm_semi_axes = {10.5, 8.5, 7};
  spec.csf_semi_axes = {12.5, 10.5, 8.5};
  spec.skull_semi_axes = {15.5, 13.5, 11.5};
  const PhantomResult ph = generate_phantom(spec);

  const SegmentationResult seg = segment_hmrf(ph.volume, ph.truth.brain_mask);
  for (Eigen::Index i = 0; i < ph.volume.values.size(); ++i) {
    if (ph.truth.brain_mask.values[i] == 0) continue;
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (seg.maps[k].values[i] > seg.maps[best].values[i]) best = k;
    CHECK(best + 1 == ph.truth.labels.values[i]);
  }
}

TEST_CASE("error propagation") {
  const Volume3D v = mixture_volume({6, 6, 6}, 5);
  BrainMask empty = full_mask(v);
  empty.values.setZero();
  CHECK_THROWS_AS(segment_hmrf(v, empty), InputError);

  const Volume3D constant = Volume3D::filled({6, 6, 6}, {1, 1, 1}, 5.0f);
  CHECK_THROWS_AS(segment_hmrf(constant, full_mask(constant)), DegenerateInputError);
}
