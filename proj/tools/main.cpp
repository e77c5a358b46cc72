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
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "neurovol/nifti.hpp"
#include "neurovol/phantom.hpp"
#include "neurovol/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartialFailure = 1;
constexpr int kExitInvalidInput = 2;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw neurovol::IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_run(const std::string& manifest_path, neurovol::PipelineConfig config) {
  const neurovol::Manifest manifest = neurovol::load_manifest(manifest_path);
  const neurovol::CohortResult result = neurovol::run_cohort(manifest, config);
  for (const auto& r : result.reports) {
    std::cerr << r.id << ": "
              << (r.fully_failed ? "FAILED (" + r.failure_message + ")"
                                 : std::to_string(r.visits.size()) + " visits processed")
              << "\n";
  }
  std::cerr << "reports written to " << config.out_dir << "\n";
  return result.exit_code == 0 ? kExitOk : kExitPartialFailure;
}

int cmd_phantom(const std::string& spec_path, const std::string& out_dir) {
  const std::string text = read_text_file(spec_path);
  const neurovol::PhantomSpec spec = neurovol::parse_phantom_spec_json(text);

  const nlohmann::json j = nlohmann::json::parse(text);
  if (j.contains("cohort")) {
    const auto& c = j.at("cohort");
    neurovol::CohortSpec cohort;
    cohort.patients = c.value("patients", cohort.patients);
    cohort.visits_min = c.value("visits_min", cohort.visits_min);
    cohort.visits_max = c.value("visits_max", cohort.visits_max);
    cohort.gm_shrink_per_visit = c.value("gm_shrink_per_visit", cohort.gm_shrink_per_visit);
    cohort.max_translation_mm = c.value("max_translation_mm", cohort.max_translation_mm);
    cohort.max_rotation_deg = c.value("max_rotation_deg", cohort.max_rotation_deg);
    cohort.bias_amplitude = c.value("bias_amplitude", cohort.bias_amplitude);
    cohort.bias_length_scale_mm = c.value("bias_length_scale_mm", cohort.bias_length_scale_mm);
    cohort.scanner_noise_sigma = c.value("scanner_noise_sigma", cohort.scanner_noise_sigma);
    cohort.seed = c.value("seed", cohort.seed);
    const neurovol::CohortFiles files = neurovol::generate_cohort(spec, cohort, out_dir);
    std::cerr << "cohort manifest: " << files.manifest_path << " ("
              << files.volume_paths.size() << " volumes)\n";
    return kExitOk;
  }

  std::filesystem::create_directories(out_dir);
  const neurovol::PhantomResult ph = neurovol::generate_phantom(spec);
  const auto base = std::filesystem::path(out_dir) / "phantom";
  neurovol::write_nifti(ph.volume, base.string() + ".nii.gz");
  neurovol::write_nifti_mask(ph.truth.brain_mask, base.string() + "_brainmask.nii.gz");
  {
    neurovol::Volume3D::Array vals(ph.truth.labels.values.size());
    for (Eigen::Index i = 0; i < vals.size(); ++i)
      vals[i] = static_cast<float>(ph.truth.labels.values[i]);
    neurovol::write_nifti(ph.truth.labels.with_values<float>(std::move(vals)),
                          base.string() + "_labels.nii.gz");
  }
  nlohmann::ordered_json truth;
  truth["volumes_ml"] = {{"csf", ph.truth.csf_ml},
                         {"gm", ph.truth.gm_ml},
                         {"wm", ph.truth.wm_ml}};
  truth["voxel_counts"] = {{"background", ph.truth.voxel_counts[0]},
                           {"csf", ph.truth.voxel_counts[1]},
                           {"gm", ph.truth.voxel_counts[2]},
                           {"wm", ph.truth.voxel_counts[3]},
                           {"skull", ph.truth.voxel_counts[4]}};
  truth["voxel_volume_mm3"] = neurovol::voxel_volume_mm3(ph.volume);
  std::ofstream tf(base.string() + "_truth.json");
  tf << truth.dump(2) << "\n";
  std::cerr << "phantom written to " << out_dir << "\n";
  return kExitOk;
}

int cmd_trend(const std::string& csv_path, double deadband_ml, const std::string& out_path) {
  const auto records = neurovol::parse_volumes_csv(csv_path);
  const std::string csv = neurovol::trend_csv_from_records(records, deadband_ml);
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw neurovol::IoError("cannot write " + out_path);
    out << csv;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Longitudinal structural-MRI volumetry and trend analysis"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Process a cohort manifest end to end");
  std::string manifest_path, out_dir;
  neurovol::PipelineConfig config;
  run->add_option("--manifest", manifest_path, "Cohort manifest JSON")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--beta-mrf", config.beta_mrf, "MRF smoothness weight");
  run->add_option("--pve-threshold", config.pve_threshold, "Probability-map volume threshold");
  run->add_option("--deadband-ml", config.deadband_ml, "Mann-Kendall dead band (mL)");
  run->add_option("--em-iters", config.seg.em_iterations, "EM iterations");
  run->add_option("--workers", config.workers, "Parallel patients");
  run->add_option("--seed", config.seed, "Global seed (echoed into reports)");
  run->add_flag("--keep-intermediates", config.keep_intermediates,
                "Write per-visit intermediate volumes");

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom or cohort");
  std::string spec_path, phantom_out;
  phantom->add_option("--spec", spec_path, "Phantom spec JSON")->required();
  phantom->add_option("--out", phantom_out, "Output directory")->required();

  // trend
  auto* trend = app.add_subcommand("trend", "Mann-Kendall analysis of a volumes CSV");
  std::string csv_path, trend_out;
  double deadband = 1.0;
  trend->add_option("--csv", csv_path, "volumes.csv produced by `run`")->required();
  trend->add_option("--deadband-ml", deadband, "Dead band (mL)");
  trend->add_option("--out", trend_out, "Write the trend CSV here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      config.out_dir = out_dir;
      return cmd_run(manifest_path, config);
    }
    if (phantom->parsed()) return cmd_phantom(spec_path, phantom_out);
    if (trend->parsed()) return cmd_trend(csv_path, deadband, trend_out);
  } catch (const neurovol::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const neurovol::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const neurovol::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPartialFailure;
  }
  return kExitOk;
}
