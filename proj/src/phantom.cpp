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
#include "neurovol/phantom.hpp"

#include <json.hpp>

#include <Eigen/Geometry>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "neurovol/nifti.hpp"
#include "neurovol/rng.hpp"

namespace neurovol {

namespace {

// Skull shell thickness in voxels, capped at half the CSF-to-skull margin so
// the band between the CSF surface and the shell's inner boundary always
// stays dark (inner-table gap).
constexpr double kSkullShellThicknessVox = 3.0;

// Skull intensity relative to the WM mean.
constexpr double kSkullIntensityFactor = 0.8;

void validate_spec(const PhantomSpec& spec, double gm_scale) {
  if (spec.dims.minCoeff() <= 0) throw SpecError("phantom dims must be positive");
  if (!(spec.spacing_mm.minCoeff() > 0.0))
    throw SpecError("phantom spacing must be positive");
  if (!(spec.mean_csf < spec.mean_gm && spec.mean_gm < spec.mean_wm))
    throw SpecError("tissue means must be strictly increasing CSF < GM < WM");
  if (spec.noise_sigma < 0.0) throw SpecError("noise sigma must be non-negative");
  const Eigen::Vector3d gm = spec.gm_semi_axes * gm_scale;
  for (int a = 0; a < 3; ++a) {
    if (!(spec.wm_semi_axes[a] < gm[a] && gm[a] < spec.csf_semi_axes[a] &&
          spec.csf_semi_axes[a] < spec.skull_semi_axes[a]))
      throw SpecError("semi-axes must be strictly nested WM < GM < CSF < skull per axis");
    if (!(spec.wm_semi_axes[a] > 0.0)) throw SpecError("semi-axes must be positive");
  }
}

inline double ellipsoid_r2(const Eigen::Vector3d& q, const Eigen::Vector3d& center,
                           const Eigen::Vector3d& axes) {
  const double dx = (q.x() - center.x()) / axes.x();
  const double dy = (q.y() - center.y()) / axes.y();
  const double dz = (q.z() - center.z()) / axes.z();
  return dx * dx + dy * dy + dz * dz;
}

Eigen::Matrix3d euler_zyx(const Eigen::Vector3d& e) {
  return (Eigen::AngleAxisd(e.z(), Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(e.y(), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(e.x(), Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

}  // namespace

PhantomResult generate_phantom(const PhantomSpec& spec) {
  return generate_phantom_posed(spec, PhantomPose{}, 1.0);
}

PhantomResult generate_phantom_posed(const PhantomSpec& spec, const PhantomPose& pose,
                                     double gm_scale) {
  validate_spec(spec, gm_scale);

  const Eigen::Vector3i d = spec.dims;
  const auto n = static_cast<Eigen::Index>(d.x()) * d.y() * d.z();
  const Eigen::Vector3d center(0.5 * (d.x() - 1), 0.5 * (d.y() - 1), 0.5 * (d.z() - 1));
  const Eigen::Vector3d gm_axes = spec.gm_semi_axes * gm_scale;
  Eigen::Vector3d skull_inner;
  for (int a = 0; a < 3; ++a) {
    const double margin = spec.skull_semi_axes[a] - spec.csf_semi_axes[a];
    skull_inner[a] = spec.skull_semi_axes[a] - std::min(kSkullShellThicknessVox, 0.5 * margin);
  }

  const Eigen::Matrix3d rot = euler_zyx(pose.euler_rad);
  const Eigen::Matrix3d rot_inv = rot.transpose();
  const Eigen::Vector3d center_mm(center.x() * spec.spacing_mm.x(),
                                  center.y() * spec.spacing_mm.y(),
                                  center.z() * spec.spacing_mm.z());
  const bool posed = pose.euler_rad.squaredNorm() > 0.0 ||
                     pose.translation_mm.squaredNorm() > 0.0;

  LabelGrid::Array labels(n);
  Eigen::Index idx = 0;
  for (int z = 0; z < d.z(); ++z) {
    for (int y = 0; y < d.y(); ++y) {
      for (int x = 0; x < d.x(); ++x, ++idx) {
        Eigen::Vector3d q(x, y, z);
        if (posed) {
          // Pull the voxel center back through the pose so ground truth stays
          // exact for the moved phantom.
          Eigen::Vector3d p(x * spec.spacing_mm.x(), y * spec.spacing_mm.y(),
                            z * spec.spacing_mm.z());
          p = rot_inv * (p - center_mm - pose.translation_mm) + center_mm;
          q = {p.x() / spec.spacing_mm.x(), p.y() / spec.spacing_mm.y(),
               p.z() / spec.spacing_mm.z()};
        }
        std::uint8_t label = kLabelBackground;
        if (ellipsoid_r2(q, center, spec.wm_semi_axes) <= 1.0)
          label = kLabelWm;
        else if (ellipsoid_r2(q, center, gm_axes) <= 1.0)
          label = kLabelGm;
        else if (ellipsoid_r2(q, center, spec.csf_semi_axes) <= 1.0)
          label = kLabelCsf;
        else if (ellipsoid_r2(q, center, spec.skull_semi_axes) <= 1.0 &&
                 ellipsoid_r2(q, center, skull_inner) > 1.0)
          label = kLabelSkull;
        labels[idx] = label;
      }
    }
  }

  const double mean_of[5] = {0.0, spec.mean_csf, spec.mean_gm, spec.mean_wm,
                             kSkullIntensityFactor * spec.mean_wm};
  std::mt19937_64 engine(split_seed(spec.seed, 0x7415f5));
  std::normal_distribution<double> gauss(0.0, 1.0);

  Volume3D::Array voxels(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::uint8_t label = labels[i];
    if (label == kLabelBackground) {
      voxels[i] = 0.0f;
    } else {
      double v = mean_of[label];
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * gauss(engine);
      voxels[i] = static_cast<float>(v);
    }
  }

  PhantomResult result;
  result.volume = Volume3D::create(d, spec.spacing_mm, std::move(voxels),
                                   Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity(),
                                   "arbitrary");
  GroundTruth& truth = result.truth;
  truth.labels = LabelGrid::create(d, spec.spacing_mm, std::move(labels));
  BrainMask::Array brain(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::uint8_t label = truth.labels.values[i];
    ++truth.voxel_counts[label];
    brain[i] = (label >= kLabelCsf && label <= kLabelWm) ? 1 : 0;
  }
  truth.brain_mask = BrainMask::create(d, spec.spacing_mm, std::move(brain));
  const double voxvol = voxel_volume_mm3(result.volume);
  truth.csf_ml = static_cast<double>(truth.voxel_counts[kLabelCsf]) * voxvol / 1000.0;
  truth.gm_ml = static_cast<double>(truth.voxel_counts[kLabelGm]) * voxvol / 1000.0;
  truth.wm_ml = static_cast<double>(truth.voxel_counts[kLabelWm]) * voxvol / 1000.0;
  return result;
}

std::pair<Volume3D, BiasField> apply_bias_field(const Volume3D& vol, double amplitude,
                                                double length_scale_mm,
                                                std::uint64_t seed) {
  vol.validate();
  if (amplitude < 0.0 || amplitude > 0.5)
    throw ParameterError("bias amplitude must lie in [0, 0.5]");
  if (length_scale_mm < 4.0 * vol.spacing.maxCoeff())
    throw ParameterError("bias length scale must be at least 4x the voxel spacing");

  const Eigen::Index n = vol.values.size();
  Volume3D::Array field(n);
  if (amplitude == 0.0) {
    field.setConstant(1.0f);
  } else {
    // Mixture of single-axis cosines; weights concentrated on one axis so the
    // field has enough spatial variance to matter, axis order shuffled by
    // seed. Wavelength is twice the length scale (one bump per half period).
    std::mt19937_64 engine(split_seed(seed, 0xb1a5));
    std::uniform_real_distribution<double> uphase(0.0, 2.0 * M_PI);
    int axes[3] = {0, 1, 2};
    for (int i = 2; i > 0; --i)
      std::swap(axes[i], axes[static_cast<int>(engine() % (i + 1))]);
    const double weights[3] = {0.75, 0.15, 0.10};
    const double wavelength = 2.0 * length_scale_mm;

    std::array<std::vector<double>, 3> table;
    for (int m = 0; m < 3; ++m) {
      const int axis = axes[m];
      const double phase = uphase(engine);
      table[axis].resize(vol.dims[axis]);
      for (int i = 0; i < vol.dims[axis]; ++i)
        table[axis][i] =
            weights[m] * std::cos(2.0 * M_PI * i * vol.spacing[axis] / wavelength + phase);
    }

    Eigen::ArrayXd raw(n);
    Eigen::Index idx = 0;
    for (int z = 0; z < vol.dims.z(); ++z)
      for (int y = 0; y < vol.dims.y(); ++y)
        for (int x = 0; x < vol.dims.x(); ++x, ++idx)
          raw[idx] = table[0][x] + table[1][y] + table[2][z];

    raw -= raw.mean();
    const double peak = raw.abs().maxCoeff();
    const double b = std::log1p(amplitude) / (peak > 0.0 ? peak : 1.0);
    Eigen::ArrayXd f = (b * raw).exp();
    f /= f.mean();  // arithmetic mean exactly 1
    for (Eigen::Index i = 0; i < n; ++i) field[i] = static_cast<float>(f[i]);
  }

  Volume3D::Array corrupted = vol.values * field;
  BiasField bias;
  bias.factors = vol.with_values<float>(std::move(field));
  bias.converged = true;
  bias.iterations = 0;
  return {vol.with_values<float>(std::move(corrupted)), std::move(bias)};
}

Volume3D add_gaussian_noise(const Volume3D& vol, double sigma, std::uint64_t seed) {
  vol.validate();
  if (sigma < 0.0) throw ParameterError("noise sigma must be non-negative");
  if (sigma == 0.0) return vol;

  std::mt19937_64 engine(split_seed(seed, 0x9015e));
  std::normal_distribution<double> gauss(0.0, sigma);
  Volume3D::Array out = vol.values;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(out[i] + gauss(engine));
  return vol.with_values<float>(std::move(out));
}

PhantomSpec parse_phantom_spec_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("invalid phantom spec JSON: ") + e.what());
  }

  PhantomSpec spec;
  try {
    auto vec3i = [&](const char* key, Eigen::Vector3i def) {
      if (!j.contains(key)) return def;
      const auto& a = j.at(key);
      return Eigen::Vector3i(a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>());
    };
    auto vec3d = [&](const char* key, Eigen::Vector3d def) {
      if (!j.contains(key)) return def;
      const auto& a = j.at(key);
      return Eigen::Vector3d(a.at(0).get<double>(), a.at(1).get<double>(),
                             a.at(2).get<double>());
    };
    spec.dims = vec3i("dims", spec.dims);
    spec.spacing_mm = vec3d("spacing_mm", spec.spacing_mm);
    spec.mean_csf = j.value("mean_csf", spec.mean_csf);
    spec.mean_gm = j.value("mean_gm", spec.mean_gm);
    spec.mean_wm = j.value("mean_wm", spec.mean_wm);
    spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
    spec.wm_semi_axes = vec3d("wm_semi_axes", spec.wm_semi_axes);
    spec.gm_semi_axes = vec3d("gm_semi_axes", spec.gm_semi_axes);
    spec.csf_semi_axes = vec3d("csf_semi_axes", spec.csf_semi_axes);
    spec.skull_semi_axes = vec3d("skull_semi_axes", spec.skull_semi_axes);
    spec.seed = j.value("seed", spec.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("invalid phantom spec field: ") + e.what());
  }
  validate_spec(spec, 1.0);
  return spec;
}

CohortFiles generate_cohort(const PhantomSpec& base, const CohortSpec& cohort,
                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (cohort.patients < 1) throw ParameterError("cohort needs at least one patient");
  if (cohort.visits_min < 3 || cohort.visits_max < cohort.visits_min)
    throw ParameterError("cohort visits must satisfy 3 <= visits_min <= visits_max");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw IoError("cannot create cohort directory " + out_dir);

  nlohmann::ordered_json manifest;
  manifest["patients"] = nlohmann::ordered_json::array();
  CohortFiles files;

  for (int p = 1; p <= cohort.patients; ++p) {
    const std::uint64_t pseed = split_seed(cohort.seed, static_cast<std::uint64_t>(p));
    std::mt19937_64 pengine(pseed);
    std::uniform_real_distribution<double> ujit(0.95, 1.05);

    PhantomSpec spec = base;
    const double scale = ujit(pengine);
    spec.wm_semi_axes *= scale;
    spec.gm_semi_axes *= scale;
    spec.csf_semi_axes *= scale;
    spec.skull_semi_axes *= scale;

    const int span = cohort.visits_max - cohort.visits_min + 1;
    const int visits = cohort.visits_min + static_cast<int>(pengine() % span);

    char pid[16];
    std::snprintf(pid, sizeof(pid), "P%02d", p);
    nlohmann::ordered_json entry;
    entry["id"] = pid;
    entry["visits"] = nlohmann::ordered_json::array();

    for (int v = 1; v <= visits; ++v) {
      const std::uint64_t vseed = split_seed(pseed, static_cast<std::uint64_t>(v));
      spec.seed = split_seed(vseed, 1);

      PhantomPose pose;
      if (v > 1) {
        std::mt19937_64 pose_engine(split_seed(vseed, 2));
        std::uniform_real_distribution<double> ut(-cohort.max_translation_mm,
                                                  cohort.max_translation_mm);
        std::uniform_real_distribution<double> ur(
            -cohort.max_rotation_deg * M_PI / 180.0,
            cohort.max_rotation_deg * M_PI / 180.0);
        pose.translation_mm = {ut(pose_engine), ut(pose_engine), ut(pose_engine)};
        pose.euler_rad = {ur(pose_engine), ur(pose_engine), ur(pose_engine)};
      }

      const double gm_scale = std::pow(cohort.gm_shrink_per_visit, v - 1);
      PhantomResult ph = generate_phantom_posed(spec, pose, gm_scale);

      Volume3D vol = std::move(ph.volume);
      if (cohort.bias_amplitude > 0.0)
        vol = apply_bias_field(vol, cohort.bias_amplitude, cohort.bias_length_scale_mm,
                               split_seed(vseed, 3))
                  .first;
      if (cohort.scanner_noise_sigma > 0.0)
        vol = add_gaussian_noise(vol, cohort.scanner_noise_sigma, split_seed(vseed, 4));

      char stem[32];
      std::snprintf(stem, sizeof(stem), "%s_V%d", pid, v);
      const std::string vol_path = (fs::path(out_dir) / (std::string(stem) + ".nii.gz")).string();
      write_nifti(vol, vol_path);
      write_nifti_mask(ph.truth.brain_mask,
                       (fs::path(out_dir) / (std::string(stem) + "_brainmask.nii.gz")).string());

      nlohmann::ordered_json truth;
      truth["patient"] = pid;
      truth["visit"] = v;
      truth["gm_scale"] = gm_scale;
      truth["volumes_ml"] = {{"csf", ph.truth.csf_ml},
                             {"gm", ph.truth.gm_ml},
                             {"wm", ph.truth.wm_ml}};
      truth["voxel_counts"] = {{"background", ph.truth.voxel_counts[0]},
                               {"csf", ph.truth.voxel_counts[1]},
                               {"gm", ph.truth.voxel_counts[2]},
                               {"wm", ph.truth.voxel_counts[3]},
                               {"skull", ph.truth.voxel_counts[4]}};
      truth["pose"] = {{"euler_rad", {pose.euler_rad.x(), pose.euler_rad.y(),
                                      pose.euler_rad.z()}},
                       {"translation_mm", {pose.translation_mm.x(), pose.translation_mm.y(),
                                           pose.translation_mm.z()}}};
      std::ofstream tf((fs::path(out_dir) / (std::string(stem) + "_truth.json")).string());
      tf << truth.dump(2) << "\n";

      entry["visits"].push_back(vol_path);
      files.volume_paths.push_back(vol_path);
    }
    manifest["patients"].push_back(std::move(entry));
  }

  files.manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream mf(files.manifest_path);
  if (!mf) throw IoError("cannot write manifest " + files.manifest_path);
  mf << manifest.dump(2) << "\n";
  return files;
}

}  // namespace neurovol
