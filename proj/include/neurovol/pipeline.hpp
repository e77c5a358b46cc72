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

#include <optional>
#include <string>
#include <vector>

#include "neurovol/bias_field.hpp"
#include "neurovol/brain_extract.hpp"
#include "neurovol/hmrf.hpp"
#include "neurovol/registration.hpp"
#include "neurovol/trend.hpp"
#include "neurovol/volumetry.hpp"

namespace neurovol {

struct PatientEntry {
  std::string id;
  std::vector<std::string> visit_paths;  // ordered, >= 3
};

struct Manifest {
  std::vector<PatientEntry> patients;
};

/// Parses and validates the manifest JSON {patients: [{id, visits: [...]}]}.
/// Throws InputError when a patient has fewer than three visits ("at least
/// three visits") or ids are duplicated.
Manifest load_manifest(const std::string& path);
Manifest parse_manifest_json(const std::string& text);

struct PipelineConfig {
  double beta_mrf = 0.4;
  double pve_threshold = 0.4;
  double deadband_ml = 1.0;
  BiasParams bias;
  ExtractParams extract;
  RegParams registration;
  SegConfig seg;
  std::string out_dir;
  int workers = 1;
  std::uint64_t seed = 0;
  bool keep_intermediates = false;
};

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct VisitOutcome {
  int visit = 0;
  std::string source_path;
  bool ok = false;
  std::string failed_stage;
  std::string message;
  TissueVolumesMl volumes;
  double voxel_volume_mm3 = 0.0;
  std::optional<RigidTransform> transform;  // visits 2..n
  double registration_cost = 0.0;
  std::vector<std::string> stages;          // completed, in execution order
  std::vector<StageTiming> timings;
  std::vector<std::string> warnings;
};

struct PatientReport {
  std::string id;
  std::vector<VisitOutcome> visits;
  bool trend_available = false;
  TrendResult trend_csf;
  TrendResult trend_gm;
  TrendResult trend_wm;
  bool fully_failed = false;
  std::string failure_message;
};

/// Full per-patient pipeline: read -> bias correct -> skull strip per visit;
/// visits 2..n rigidly registered to visit 1 and resampled onto its geometry
/// (intensities trilinear, masks nearest-neighbor); every aligned visit
/// segmented; volumes extracted; per-tissue Mann-Kendall trend. A stage
/// failure marks the visit and the remaining visits are still attempted;
/// fewer than three successful visits leaves the trend unavailable.
PatientReport run_patient(const PatientEntry& entry, const PipelineConfig& config);

struct CohortResult {
  std::vector<PatientReport> reports;
  CohortStats stats;
  std::vector<std::string> written_files;
  int exit_code = 0;  // 0 success, 1 any patient fully failed
};

/// Runs every patient (parallel up to config.workers), aggregates cohort
/// statistics, and emits the report files into config.out_dir. Outputs are
/// byte-identical for identical manifest + config + seed, independent of the
/// worker count.
CohortResult run_cohort(const Manifest& manifest, const PipelineConfig& config);

/// Writes volumes.csv, trend.csv, cohort_table.csv, plot.csv and summary.json
/// atomically (write-temp-then-rename; all temps are staged before any final
/// file appears). Stage timings go to run_log.txt, which is excluded from the
/// deterministic output set. Returns the deterministic files written.
std::vector<std::string> emit_reports(const std::vector<PatientReport>& reports,
                                      const CohortStats& stats,
                                      const PipelineConfig& config,
                                      const std::string& out_dir);

/// Reads a volumes.csv back into visit records (the `trend` subcommand path).
std::vector<VisitRecord> parse_volumes_csv(const std::string& path);

/// Renders the trend CSV body for precomputed visit records.
std::string trend_csv_from_records(const std::vector<VisitRecord>& records,
                                   double deadband_ml);

}  // namespace neurovol
