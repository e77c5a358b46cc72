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

#include <sys/stat.h>

#include <fstream>
#include <sstream>

#include "neurovol/nifti.hpp"
#include "neurovol/phantom.hpp"
#include "neurovol/pipeline.hpp"
#include "test_support.hpp"

using namespace neurovol;

namespace {

PhantomSpec small_base() {
  PhantomSpec spec;
  spec.dims = {40, 40, 40};
  spec.wm_semi_axes = {9.5, 7.0, 5.5};
  spec.gm_semi_axes = {12.5, 10.0, 8.0};
  spec.csf_semi_axes = {15.0, 12.5, 10.0};
  spec.skull_semi_axes = {19.0, 16.5, 14.0};
  spec.noise_sigma = 50.0;
  return spec;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("manifest validation") {
  CHECK_THROWS_WITH_AS(
      parse_manifest_json(R"({"patients":[{"id":"P1","visits":["a.nii","b.nii"]}]})"),
      doctest::Contains("at least three visits"), InputError);
  CHECK_THROWS_AS(parse_manifest_json(R"({"patients":[
      {"id":"P1","visits":["a","b","c"]},
      {"id":"P1","visits":["d","e","f"]}]})"),
                  InputError);
  CHECK_THROWS_AS(parse_manifest_json(R"({"patients":[]})"), InputError);
  CHECK_THROWS_AS(parse_manifest_json("not json"), InputError);

  const Manifest m =
      parse_manifest_json(R"({"patients":[{"id":"P1","visits":["a","b","c"]}]})");
  CHECK(m.patients.size() == 1);
  CHECK(m.patients[0].visit_paths.size() == 3);
}

TEST_CASE("four identical visits give identity registrations and no trend") {
  testsup::TempDir dir("pipe_ident");
  const PhantomResult ph = generate_phantom(small_base());
  const Volume3D noisy = add_gaussian_noise(ph.volume, 15.0, 3);
  const std::string path = dir.str() + "/visit.nii.gz";
  write_nifti(noisy, path);

  PatientEntry entry{"P1", {path, path, path, path}};
  PipelineConfig config;
  config.registration.max_evaluations = 600;
  const PatientReport report = run_patient(entry, config);

  REQUIRE(report.visits.size() == 4);
  for (const auto& v : report.visits) {
    REQUIRE(v.ok);
    if (v.visit == 1) continue;
    REQUIRE(v.transform.has_value());
    CHECK(v.transform->translation_mm.cwiseAbs().maxCoeff() < 0.1);
    CHECK(v.transform->euler_rad.cwiseAbs().maxCoeff() < 0.001);
  }
  REQUIRE(report.trend_available);
  CHECK(report.trend_csf.direction == TrendDirection::kNoTrend);
  CHECK(report.trend_gm.direction == TrendDirection::kNoTrend);
  CHECK(report.trend_wm.direction == TrendDirection::kNoTrend);

  SUBCASE("stage order is fixed") {
    const std::vector<std::string> first = {"read", "bias", "strip", "segment", "volume"};
    CHECK(report.visits[0].stages == first);
    const std::vector<std::string> later = {"read", "bias", "strip", "register",
                                            "segment", "volume"};
    CHECK(report.visits[1].stages == later);
    for (const auto& v : report.visits) {
      REQUIRE(v.timings.size() == v.stages.size());
      for (std::size_t s = 0; s < v.stages.size(); ++s)
        CHECK(v.timings[s].stage == v.stages[s]);
    }
  }
}

TEST_CASE("programmed atrophy is detected per patient") {
  testsup::TempDir dir("pipe_atrophy");
  const PhantomSpec base = small_base();

  PatientEntry entry{"P1", {}};
  for (int v = 1; v <= 4; ++v) {
    PhantomSpec spec = base;
    spec.seed = 100 + v;
    PhantomPose pose;
    if (v > 1) {
      pose.translation_mm = {1.5 * (v - 1), -1.0, 0.5};
      pose.euler_rad = {0.0, 0.0, 0.02 * (v - 1)};
    }
    const double gm_scale = std::pow(0.96, v - 1);
    const PhantomResult ph = generate_phantom_posed(spec, pose, gm_scale);
    Volume3D vol = add_gaussian_noise(ph.volume, 15.0, 1000 + v);
    const std::string path = dir.str() + "/v" + std::to_string(v) + ".nii.gz";
    write_nifti(vol, path);
    entry.visit_paths.push_back(path);
  }

  PipelineConfig config;
  const PatientReport report = run_patient(entry, config);
  REQUIRE(report.trend_available);
  CHECK(report.trend_gm.direction == TrendDirection::kDecreasing);
  CHECK(report.trend_csf.direction == TrendDirection::kIncreasing);
  CHECK(report.trend_gm.confidence_pct >= 85.31);
  CHECK(report.trend_csf.confidence_pct >= 85.31);

  SUBCASE("reported volumes decrease monotonically for GM") {
    double prev = 1e300;
    for (const auto& v : report.visits) {
      REQUIRE(v.ok);
      CHECK(v.volumes.gm < prev);
      prev = v.volumes.gm;
    }
  }
}

TEST_CASE("a failing visit is isolated and trend still computes from the rest") {
  testsup::TempDir dir("pipe_fail");
  const PhantomSpec base = small_base();
  PatientEntry entry{"P1", {}};
  for (int v = 1; v <= 4; ++v) {
    PhantomSpec spec = base;
    spec.seed = 300 + v;
    const PhantomResult ph = generate_phantom_posed(spec, PhantomPose{},
                                                    std::pow(0.96, v - 1));
    const std::string path = dir.str() + "/v" + std::to_string(v) + ".nii.gz";
    write_nifti(add_gaussian_noise(ph.volume, 15.0, v), path);
    entry.visit_paths.push_back(path);
  }
  // Corrupt visit 3.
  entry.visit_paths[2] = dir.str() + "/broken.nii";
  std::ofstream(entry.visit_paths[2]) << "not a nifti";

  PipelineConfig config;
  const PatientReport report = run_patient(entry, config);
  CHECK(!report.visits[2].ok);
  CHECK(report.visits[2].failed_stage == "read");
  CHECK(report.visits[3].ok);  // later visits still attempted
  CHECK(report.trend_available);  // three successes remain
  CHECK(!report.fully_failed);
}

TEST_CASE("cohort run: determinism and worker independence") {
  testsup::TempDir dir("pipe_cohort");
  PhantomSpec base = small_base();
  CohortSpec cohort;
  cohort.patients = 3;
  cohort.visits_min = 3;
  cohort.visits_max = 3;
  cohort.bias_amplitude = 0.05;
  cohort.scanner_noise_sigma = 15.0;
  cohort.seed = 5;
  const CohortFiles files = generate_cohort(base, cohort, dir.str() + "/data");
  const Manifest manifest = load_manifest(files.manifest_path);

  PipelineConfig config;
  config.workers = 1;
  config.out_dir = dir.str() + "/out1";
  const CohortResult r1 = run_cohort(manifest, config);
  CHECK(r1.exit_code == 0);

  config.workers = 4;
  config.out_dir = dir.str() + "/out4";
  const CohortResult r4 = run_cohort(manifest, config);

  config.workers = 1;
  config.out_dir = dir.str() + "/out1b";
  run_cohort(manifest, config);

  for (const char* name :
       {"volumes.csv", "trend.csv", "cohort_table.csv", "plot.csv", "summary.json"}) {
    const std::string a = read_file(dir.str() + "/out1/" + name);
    const std::string b = read_file(dir.str() + "/out4/" + name);
    const std::string c = read_file(dir.str() + "/out1b/" + name);
    CHECK(a == b);
    CHECK(a == c);
    CHECK(!a.empty());
  }

  SUBCASE("volumes CSV parses back") {
    const auto records = parse_volumes_csv(dir.str() + "/out1/volumes.csv");
    CHECK(records.size() == 9);  // 3 patients x 3 visits
    CHECK(records[0].patient_id == "P01");
  }
}

TEST_CASE("emit_reports writes headers-only files for an empty cohort") {
  testsup::TempDir dir("pipe_empty");
  PipelineConfig config;
  const auto files = emit_reports({}, CohortStats{}, config, dir.str() + "/out");
  for (const auto& f : files) {
    const std::string content = read_file(f);
    CHECK(!content.empty());
  }
  CHECK(read_file(dir.str() + "/out/volumes.csv") == "patient_id,visit,csf_ml,gm_ml,wm_ml\n");
}

TEST_CASE("emit_reports fails atomically on an unwritable directory") {
  if (::geteuid() == 0) return;  // root ignores permission bits
  testsup::TempDir dir("pipe_ro");
  const std::string ro = dir.str() + "/ro";
  std::filesystem::create_directories(ro);
  ::chmod(ro.c_str(), 0500);
  PipelineConfig config;
  CHECK_THROWS_AS(emit_reports({}, CohortStats{}, config, ro + "/out"), IoError);
  CHECK(!std::filesystem::exists(ro + "/out/volumes.csv"));
  ::chmod(ro.c_str(), 0700);
}

TEST_CASE("table-1 style fixture renders through the CSV writers") {
  // The published cohort means serve as a formatting fixture: the volumes CSV
  // row must carry the two-decimal values verbatim.
  std::vector<PatientReport> reports(1);
  PatientReport& r = reports[0];
  r.id = "P1";
  const double gm[4] = {554.21, 536.83, 526.15, 497.34};
  const double csf[4] = {379.31, 387.44, 398.97, 390.72};
  const double wm[4] = {547.21, 557.89, 558.88, 549.02};
  for (int v = 1; v <= 4; ++v) {
    VisitOutcome o;
    o.visit = v;
    o.ok = true;
    o.volumes = {csf[v - 1], gm[v - 1], wm[v - 1]};
    o.voxel_volume_mm3 = 1.0;
    r.visits.push_back(o);
  }
  LongitudinalSeries gm_series{"P1", "gm", {gm[0], gm[1], gm[2], gm[3]}};
  r.trend_gm = analyze_trend(gm_series);
  r.trend_csf = analyze_trend({"P1", "csf", {csf[0], csf[1], csf[2], csf[3]}});
  r.trend_wm = analyze_trend({"P1", "wm", {wm[0], wm[1], wm[2], wm[3]}});
  r.trend_available = true;

  std::vector<VisitRecord> records;
  for (const auto& v : r.visits)
    records.push_back({"P1", v.visit, v.volumes, 1.0, ""});

  testsup::TempDir dir("pipe_fixture");
  PipelineConfig config;
  const auto files = emit_reports(reports, cohort_stats(records), config, dir.str() + "/out");

  const std::string volumes = read_file(dir.str() + "/out/volumes.csv");
  CHECK(volumes.find("P1,1,379.31,554.21,547.21") != std::string::npos);

  const std::string table = read_file(dir.str() + "/out/cohort_table.csv");
  CHECK(table.find("gm,mean_ml,554.21,536.83,526.15,497.34") != std::string::npos);

  const std::string trend = read_file(dir.str() + "/out/trend.csv");
  CHECK(trend.find("P1,gm,4,-6,8.667,-1.698,95.54,decreasing") != std::string::npos);

  SUBCASE("trend subcommand path reproduces the same rows") {
    const std::string csv =
        trend_csv_from_records(parse_volumes_csv(dir.str() + "/out/volumes.csv"), 1.0);
    CHECK(csv.find("P1,gm,4,-6,8.667,-1.698,95.54,decreasing") != std::string::npos);
  }
}

TEST_CASE("volumes CSV parser rejects malformed input") {
  testsup::TempDir dir("pipe_csv");
  {
    std::ofstream out(dir.str() + "/bad_header.csv");
    out << "wrong,header\n";
  }
  CHECK_THROWS_AS(parse_volumes_csv(dir.str() + "/bad_header.csv"), InputError);
  {
    std::ofstream out(dir.str() + "/bad_row.csv");
    out << "patient_id,visit,csf_ml,gm_ml,wm_ml\nP1,notanumber,1,2,3\n";
  }
  CHECK_THROWS_AS(parse_volumes_csv(dir.str() + "/bad_row.csv"), InputError);
  CHECK_THROWS_AS(parse_volumes_csv(dir.str() + "/missing.csv"), IoError);
}
