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
#include "neurovol/pipeline.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "neurovol/nifti.hpp"

namespace neurovol {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

class StageClock {
 public:
  explicit StageClock(VisitOutcome& outcome) : outcome_(outcome) {}

  template <typename F>
  auto run(const std::string& stage, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    current_ = stage;
    auto finish = [&] {
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
      outcome_.stages.push_back(stage);
      outcome_.timings.push_back({stage, dt.count()});
    };
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      finish();
    } else {
      auto result = body();
      finish();
      return result;
    }
  }

  const std::string& current() const { return current_; }

 private:
  VisitOutcome& outcome_;
  std::string current_;
};

struct PreparedVisit {
  Volume3D stripped;
  BrainMask mask;
};

std::string intermediate_path(const PipelineConfig& config, const std::string& pid,
                              int visit, const std::string& suffix) {
  const fs::path dir = fs::path(config.out_dir) / "intermediates" / pid;
  fs::create_directories(dir);
  char name[64];
  std::snprintf(name, sizeof(name), "visit_%d%s", visit, suffix.c_str());
  return (dir / name).string();
}

}  // namespace

Manifest parse_manifest_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid manifest JSON: ") + e.what());
  }

  Manifest m;
  try {
    std::set<std::string> seen;
    for (const auto& p : j.at("patients")) {
      PatientEntry entry;
      entry.id = p.at("id").get<std::string>();
      for (const auto& v : p.at("visits")) entry.visit_paths.push_back(v.get<std::string>());
      if (entry.visit_paths.size() < 3)
        throw InputError("patient " + entry.id +
                         ": at least three visits are required to track change");
      if (!seen.insert(entry.id).second)
        throw InputError("duplicate patient id " + entry.id);
      m.patients.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid manifest structure: ") + e.what());
  }
  if (m.patients.empty()) throw InputError("manifest lists no patients");
  return m;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest_json(ss.str());
}

PatientReport run_patient(const PatientEntry& entry, const PipelineConfig& config) {
  PatientReport report;
  report.id = entry.id;

  SegConfig seg = config.seg;
  seg.beta_mrf = config.beta_mrf;

  std::optional<PreparedVisit> reference;
  int successes = 0;

  for (int v = 1; v <= static_cast<int>(entry.visit_paths.size()); ++v) {
    VisitOutcome outcome;
    outcome.visit = v;
    outcome.source_path = entry.visit_paths[v - 1];
    StageClock clock(outcome);

    try {
      NiftiReadReport read_report;
      Volume3D vol = clock.run("read", [&] {
        return read_nifti(outcome.source_path, &read_report);
      });
      if (read_report.nonfinite_replaced > 0)
        outcome.warnings.push_back(std::to_string(read_report.nonfinite_replaced) +
                                   " non-finite voxels replaced by 0");

      Volume3D corrected = clock.run("bias", [&] {
        // The bias field is estimated on a robust foreground mask (the
        // extraction threshold applied to the raw volume) so background noise
        // stays out of the log-domain fit; correction divides the full grid.
        const auto [t2, t98] =
            robust_intensity_range(vol, config.extract.pct_low, config.extract.pct_high);
        const double fg_threshold = t2 + config.extract.frac * (t98 - t2);
        BrainMask fg;
        fg.dims = vol.dims;
        fg.spacing = vol.spacing;
        fg.origin = vol.origin;
        fg.orientation = vol.orientation;
        fg.values = BrainMask::Array::Zero(vol.values.size());
        for (Eigen::Index i = 0; i < vol.values.size(); ++i)
          fg.values[i] = vol.values[i] > fg_threshold ? 1 : 0;
        const BiasField field = estimate_bias_field(vol, &fg, config.bias);
        if (!field.converged)
          outcome.warnings.push_back("bias field did not converge in " +
                                     std::to_string(field.iterations) + " iterations");
        if (config.keep_intermediates)
          write_nifti(field.factors,
                      intermediate_path(config, entry.id, v, "_biasfield.nii.gz"));
        return correct_bias(vol, field);
      });

      PreparedVisit prepared = clock.run("strip", [&] {
        ExtractResult ex = extract_brain(corrected, config.extract);
        return PreparedVisit{std::move(ex.stripped), std::move(ex.mask)};
      });

      Volume3D aligned;
      BrainMask aligned_mask;
      if (v == 1) {
        reference = prepared;
        aligned = prepared.stripped;
        aligned_mask = prepared.mask;
      } else {
        clock.run("register", [&] {
          if (!reference.has_value())
            throw InputError("reference visit unavailable (visit 1 failed)");
          const RegistrationResult reg =
              register_rigid(reference->stripped, prepared.stripped, config.registration);
          outcome.transform = reg.transform;
          outcome.registration_cost = reg.final_cost;
          aligned = resample_trilinear(prepared.stripped, reg.transform, reference->stripped);
          aligned_mask = resample_nearest(prepared.mask, reg.transform, reference->stripped);
        });
      }

      if (config.keep_intermediates) {
        write_nifti(aligned, intermediate_path(config, entry.id, v, "_aligned.nii.gz"));
        write_nifti_mask(aligned_mask, intermediate_path(config, entry.id, v, "_mask.nii.gz"));
      }

      const SegmentationResult segres = clock.run("segment", [&] {
        return segment_hmrf(aligned, aligned_mask, seg);
      });
      if (config.keep_intermediates) {
        // Probability maps persisted with the pve_0/pve_1/pve_2 suffixes.
        for (int c = 0; c < 3; ++c) {
          Volume3D::Array vals(segres.maps[c].values.size());
          for (Eigen::Index i = 0; i < vals.size(); ++i)
            vals[i] = static_cast<float>(segres.maps[c].values[i]);
          char suffix[32];
          std::snprintf(suffix, sizeof(suffix), "_pve%d.nii.gz", c);
          write_nifti(aligned.with_values<float>(std::move(vals)),
                      intermediate_path(config, entry.id, v, suffix));
        }
      }

      clock.run("volume", [&] {
        outcome.voxel_volume_mm3 = voxel_volume_mm3(aligned);
        outcome.volumes =
            visit_volumes(segres.maps, outcome.voxel_volume_mm3, config.pve_threshold);
      });

      outcome.ok = true;
      ++successes;
    } catch (const std::exception& e) {
      outcome.ok = false;
      outcome.failed_stage = clock.current();
      outcome.message = e.what();
    }
    report.visits.push_back(std::move(outcome));
  }

  report.fully_failed = successes == 0;
  if (report.fully_failed) report.failure_message = "no visit completed";

  if (successes >= 3) {
    LongitudinalSeries csf{entry.id, "csf", {}};
    LongitudinalSeries gm{entry.id, "gm", {}};
    LongitudinalSeries wm{entry.id, "wm", {}};
    for (const auto& visit : report.visits) {
      if (!visit.ok) continue;
      csf.volumes_ml.push_back(visit.volumes.csf);
      gm.volumes_ml.push_back(visit.volumes.gm);
      wm.volumes_ml.push_back(visit.volumes.wm);
    }
    report.trend_csf = analyze_trend(csf, config.deadband_ml);
    report.trend_gm = analyze_trend(gm, config.deadband_ml);
    report.trend_wm = analyze_trend(wm, config.deadband_ml);
    report.trend_available = true;
  }
  return report;
}

namespace {

std::vector<VisitRecord> collect_records(const std::vector<PatientReport>& reports) {
  std::vector<VisitRecord> records;
  for (const auto& r : reports) {
    for (const auto& v : r.visits) {
      if (!v.ok) continue;
      VisitRecord rec;
      rec.patient_id = r.id;
      rec.visit = v.visit;
      rec.volumes = v.volumes;
      rec.voxel_volume_mm3 = v.voxel_volume_mm3;
      rec.source_path = v.source_path;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

std::string volumes_csv(const std::vector<VisitRecord>& records) {
  std::string out = "patient_id,visit,csf_ml,gm_ml,wm_ml\n";
  for (const auto& r : records) {
    out += r.patient_id + "," + std::to_string(r.visit) + "," + fmt("%.2f", r.volumes.csf) +
           "," + fmt("%.2f", r.volumes.gm) + "," + fmt("%.2f", r.volumes.wm) + "\n";
  }
  return out;
}

void append_trend_row(std::string& out, const std::string& pid, const std::string& tissue,
                      std::size_t n, const TrendResult& t) {
  out += pid + "," + tissue + "," + std::to_string(n) + "," + std::to_string(t.s) + "," +
         fmt("%.3f", t.var_s) + "," + fmt("%.3f", t.z_vol) + "," +
         fmt("%.2f", t.confidence_pct) + "," + to_string(t.direction) + "\n";
}

std::string trend_csv(const std::vector<PatientReport>& reports) {
  std::string out = "patient_id,tissue,n_visits,S,var_s,z_vol,confidence_pct,direction\n";
  for (const auto& r : reports) {
    if (!r.trend_available) continue;
    std::size_t n = 0;
    for (const auto& v : r.visits) n += v.ok ? 1 : 0;
    append_trend_row(out, r.id, "csf", n, r.trend_csf);
    append_trend_row(out, r.id, "gm", n, r.trend_gm);
    append_trend_row(out, r.id, "wm", n, r.trend_wm);
  }
  return out;
}

// Cohort table mirrors the published layout: one block per tissue (GM, CSF,
// WM), rows for mean, std, and contributing patient count, visits as columns.
std::string cohort_table_csv(const CohortStats& stats) {
  int max_visit = 0;
  for (const auto& [visit, _] : stats.per_visit) max_visit = std::max(max_visit, visit);

  std::string out = "tissue,stat";
  for (int v = 1; v <= max_visit; ++v) out += ",visit_" + std::to_string(v);
  out += "\n";

  const struct {
    const char* name;
    int index;
  } tissues[3] = {{"gm", 1}, {"csf", 0}, {"wm", 2}};
  for (const auto& tissue : tissues) {
    for (const char* stat : {"mean_ml", "std_ml", "count"}) {
      out += std::string(tissue.name) + "," + stat;
      for (int v = 1; v <= max_visit; ++v) {
        out += ",";
        const auto it = stats.per_visit.find(v);
        if (it == stats.per_visit.end()) continue;
        const auto& cell = it->second[tissue.index];
        if (std::string(stat) == "mean_ml")
          out += fmt("%.2f", cell.mean_ml);
        else if (std::string(stat) == "std_ml")
          out += fmt("%.2f", cell.std_ml);
        else
          out += std::to_string(cell.count);
      }
      out += "\n";
    }
  }
  return out;
}

std::string plot_csv(const std::vector<PatientReport>& reports) {
  std::string out = "patient_id,visit,tissue,scaled_volume\n";
  const char* tissue_names[3] = {"csf", "gm", "wm"};
  for (const auto& r : reports) {
    std::vector<int> visits;
    std::vector<std::array<double, 3>> values;
    for (const auto& v : r.visits) {
      if (!v.ok) continue;
      visits.push_back(v.visit);
      values.push_back({v.volumes.csf, v.volumes.gm, v.volumes.wm});
    }
    if (visits.empty()) continue;
    for (int t = 0; t < 3; ++t) {
      std::vector<double> series;
      for (const auto& row : values) series.push_back(row[t]);
      std::vector<double> scaled;
      try {
        scaled = max_scale(series);
      } catch (const ScaleError&) {
        continue;  // all-zero series cannot be scaled
      }
      for (std::size_t i = 0; i < visits.size(); ++i)
        out += r.id + "," + std::to_string(visits[i]) + "," + tissue_names[t] + "," +
               fmt("%.6f", scaled[i]) + "\n";
    }
  }
  return out;
}

nlohmann::ordered_json trend_json(const TrendResult& t) {
  nlohmann::ordered_json j;
  j["S"] = t.s;
  j["var_s"] = t.var_s;
  j["z_vol"] = t.z_vol;
  j["confidence_pct"] = t.confidence_pct;
  j["direction"] = to_string(t.direction);
  return j;
}

std::string summary_json(const std::vector<PatientReport>& reports,
                         const CohortStats& stats, const PipelineConfig& config) {
  // Worker count is deliberately not echoed: outputs are byte-identical
  // regardless of parallelism, so nothing parallelism-dependent may appear.
  nlohmann::ordered_json j;
  j["config"] = {{"beta_mrf", config.beta_mrf},
                 {"pve_threshold", config.pve_threshold},
                 {"deadband_ml", config.deadband_ml},
                 {"em_iterations", config.seg.em_iterations},
                 {"seed", config.seed}};

  j["patients"] = nlohmann::ordered_json::array();
  nlohmann::ordered_json failures = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json p;
    p["id"] = r.id;
    p["fully_failed"] = r.fully_failed;
    p["visits"] = nlohmann::ordered_json::array();
    for (const auto& v : r.visits) {
      nlohmann::ordered_json vj;
      vj["visit"] = v.visit;
      vj["source"] = v.source_path;
      vj["ok"] = v.ok;
      if (v.ok) {
        vj["csf_ml"] = v.volumes.csf;
        vj["gm_ml"] = v.volumes.gm;
        vj["wm_ml"] = v.volumes.wm;
        vj["voxel_volume_mm3"] = v.voxel_volume_mm3;
      } else {
        vj["failed_stage"] = v.failed_stage;
        vj["message"] = v.message;
      }
      if (v.transform.has_value()) {
        const RigidTransform& t = *v.transform;
        vj["transform"] = {{"euler_rad", {t.euler_rad.x(), t.euler_rad.y(), t.euler_rad.z()}},
                           {"translation_mm",
                            {t.translation_mm.x(), t.translation_mm.y(), t.translation_mm.z()}},
                           {"center_mm", {t.center_mm.x(), t.center_mm.y(), t.center_mm.z()}},
                           {"final_cost", v.registration_cost}};
      }
      vj["stages"] = v.stages;
      vj["warnings"] = v.warnings;
      p["visits"].push_back(std::move(vj));
    }
    if (r.trend_available) {
      p["trends"] = {{"csf", trend_json(r.trend_csf)},
                     {"gm", trend_json(r.trend_gm)},
                     {"wm", trend_json(r.trend_wm)}};
    } else {
      p["trends"] = nullptr;
    }
    if (r.fully_failed) failures.push_back(r.id);
    j["patients"].push_back(std::move(p));
  }

  nlohmann::ordered_json cohort;
  const char* tissue_names[3] = {"csf", "gm", "wm"};
  for (const auto& [visit, cells] : stats.per_visit) {
    nlohmann::ordered_json row;
    for (int t = 0; t < 3; ++t)
      row[tissue_names[t]] = {{"mean_ml", cells[t].mean_ml},
                              {"std_ml", cells[t].std_ml},
                              {"count", cells[t].count}};
    cohort["visit_" + std::to_string(visit)] = std::move(row);
  }
  j["cohort"] = std::move(cohort);
  j["failures"] = std::move(failures);
  return j.dump(2) + "\n";
}

std::string timing_log(const std::vector<PatientReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    for (const auto& v : r.visits) {
      for (const auto& t : v.timings)
        out += r.id + " visit " + std::to_string(v.visit) + " " + t.stage + " " +
               fmt("%.3f", t.seconds) + "s\n";
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> emit_reports(const std::vector<PatientReport>& reports,
                                      const CohortStats& stats,
                                      const PipelineConfig& config,
                                      const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw IoError("output directory unavailable: " + out_dir);

  const std::vector<VisitRecord> records = collect_records(reports);
  const std::vector<std::pair<std::string, std::string>> files = {
      {"volumes.csv", volumes_csv(records)},
      {"trend.csv", trend_csv(reports)},
      {"cohort_table.csv", cohort_table_csv(stats)},
      {"plot.csv", plot_csv(reports)},
      {"summary.json", summary_json(reports, stats, config)},
  };

  // Stage every temp file first, then rename; an unwritable directory fails
  // before any final file appears.
  std::vector<std::pair<fs::path, fs::path>> staged;
  for (const auto& [name, content] : files) {
    const fs::path tmp = fs::path(out_dir) / (".tmp." + name);
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write to output directory: " + out_dir);
    out << content;
    out.flush();
    if (!out) throw IoError("write failed in output directory: " + out_dir);
    out.close();
    staged.emplace_back(tmp, fs::path(out_dir) / name);
  }
  std::vector<std::string> written;
  for (const auto& [tmp, final_path] : staged) {
    fs::rename(tmp, final_path, ec);
    if (ec) throw IoError("cannot finalize " + final_path.string() + ": " + ec.message());
    written.push_back(final_path.string());
  }

  std::ofstream log(fs::path(out_dir) / "run_log.txt", std::ios::trunc);
  log << timing_log(reports);
  return written;
}

CohortResult run_cohort(const Manifest& manifest, const PipelineConfig& config) {
  if (manifest.patients.empty()) throw InputError("empty manifest");

  CohortResult result;
  result.reports.resize(manifest.patients.size());

  const int workers =
      std::max(1, std::min<int>(config.workers, static_cast<int>(manifest.patients.size())));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= manifest.patients.size()) break;
      try {
        result.reports[i] = run_patient(manifest.patients[i], config);
      } catch (const std::exception& e) {
        PatientReport failed;
        failed.id = manifest.patients[i].id;
        failed.fully_failed = true;
        failed.failure_message = e.what();
        result.reports[i] = std::move(failed);
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  const std::vector<VisitRecord> records = collect_records(result.reports);
  if (!records.empty()) result.stats = cohort_stats(records);

  for (const auto& r : result.reports)
    if (r.fully_failed) result.exit_code = 1;

  if (!config.out_dir.empty())
    result.written_files = emit_reports(result.reports, result.stats, config, config.out_dir);
  return result;
}

std::vector<VisitRecord> parse_volumes_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open volumes CSV " + path);
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty volumes CSV");
  if (line.rfind("patient_id,visit,csf_ml,gm_ml,wm_ml", 0) != 0)
    throw InputError("unexpected volumes CSV header: " + line);

  std::vector<VisitRecord> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5)
      throw InputError("volumes CSV line " + std::to_string(lineno) + ": expected 5 fields");
    VisitRecord r;
    r.patient_id = fields[0];
    try {
      r.visit = std::stoi(fields[1]);
      r.volumes.csf = std::stod(fields[2]);
      r.volumes.gm = std::stod(fields[3]);
      r.volumes.wm = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw InputError("volumes CSV line " + std::to_string(lineno) + ": bad number");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::string trend_csv_from_records(const std::vector<VisitRecord>& records,
                                   double deadband_ml) {
  // Group by patient, preserving first-appearance order; visits sorted.
  std::vector<std::string> order;
  std::map<std::string, std::vector<VisitRecord>> grouped;
  for (const auto& r : records) {
    if (grouped.find(r.patient_id) == grouped.end()) order.push_back(r.patient_id);
    grouped[r.patient_id].push_back(r);
  }

  std::string out = "patient_id,tissue,n_visits,S,var_s,z_vol,confidence_pct,direction\n";
  for (const auto& pid : order) {
    auto& visits = grouped[pid];
    std::sort(visits.begin(), visits.end(),
              [](const VisitRecord& a, const VisitRecord& b) { return a.visit < b.visit; });
    if (visits.size() < 3) continue;  // below the three-visit selection rule
    const char* tissue_names[3] = {"csf", "gm", "wm"};
    for (int t = 0; t < 3; ++t) {
      LongitudinalSeries series{pid, tissue_names[t], {}};
      for (const auto& v : visits)
        series.volumes_ml.push_back(t == 0 ? v.volumes.csf
                                           : (t == 1 ? v.volumes.gm : v.volumes.wm));
      append_trend_row(out, pid, tissue_names[t], visits.size(),
                       analyze_trend(series, deadband_ml));
    }
  }
  return out;
}

}  // namespace neurovol
