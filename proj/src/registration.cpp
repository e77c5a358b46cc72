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
#include "neurovol/registration.hpp"

#include <json.hpp>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace neurovol {

namespace {

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

// ZYX Euler extraction, rx = atan2(R21, R22), ry = -asin(R20),
// rz = atan2(R10, R00); gimbal lock pinned at rx = 0.
Eigen::Vector3d euler_from_rotation(const Eigen::Matrix3d& r) {
  Eigen::Vector3d e;
  const double sy = -r(2, 0);
  e.y() = std::asin(std::clamp(sy, -1.0, 1.0));
  if (std::abs(std::cos(e.y())) > 1e-9) {
    e.x() = std::atan2(r(2, 1), r(2, 2));
    e.z() = std::atan2(r(1, 0), r(0, 0));
  } else {
    e.x() = 0.0;
    e.z() = std::atan2(-r(0, 1), r(1, 1));
  }
  return e;
}

// Affine offset b for p -> R p + b of a center-anchored rigid transform.
Eigen::Vector3d affine_offset(const RigidTransform& t) {
  return t.center_mm + t.translation_mm - t.rotation() * t.center_mm;
}

}  // namespace

RigidTransform RigidTransform::identity(const Eigen::Vector3d& center) {
  RigidTransform t;
  t.center_mm = center;
  return t;
}

Eigen::Matrix3d RigidTransform::rotation() const {
  return (Eigen::AngleAxisd(euler_rad.z(), Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(euler_rad.y(), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(euler_rad.x(), Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

void RigidTransform::normalize_angles() {
  for (int i = 0; i < 3; ++i) euler_rad[i] = wrap_angle(euler_rad[i]);
}

Eigen::Vector3d apply_to_point(const RigidTransform& t, const Eigen::Vector3d& p) {
  return t.rotation() * (p - t.center_mm) + t.center_mm + t.translation_mm;
}

Eigen::Vector3d apply_inverse_to_point(const RigidTransform& t, const Eigen::Vector3d& p) {
  return t.rotation().transpose() * (p - t.center_mm - t.translation_mm) + t.center_mm;
}

RigidTransform inverse(const RigidTransform& t) {
  RigidTransform inv;
  const Eigen::Matrix3d rt = t.rotation().transpose();
  inv.euler_rad = euler_from_rotation(rt);
  inv.translation_mm = -(rt * t.translation_mm);
  inv.center_mm = t.center_mm;
  inv.normalize_angles();
  return inv;
}

RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner) {
  const Eigen::Matrix3d r = outer.rotation() * inner.rotation();
  const Eigen::Vector3d b = outer.rotation() * affine_offset(inner) + affine_offset(outer);
  RigidTransform out;
  out.center_mm = outer.center_mm;
  out.euler_rad = euler_from_rotation(r);
  out.translation_mm = b - out.center_mm + r * out.center_mm;
  out.normalize_angles();
  return out;
}

namespace {

// Reference-index -> moving-index affine of the pull-back map, so the
// resampling inner loop is a single matrix-vector step per voxel.
struct PullbackMap {
  Eigen::Matrix3d a;
  Eigen::Vector3d d;

  PullbackMap(const Volume3D& moving, const RigidTransform& t, const Volume3D& ref) {
    const Eigen::Matrix3d rt = t.rotation().transpose();
    const Eigen::Matrix3d sm_inv =
        moving.spacing.cwiseInverse().asDiagonal().toDenseMatrix();
    const Eigen::Matrix3d sr = ref.spacing.asDiagonal();
    a = sm_inv * moving.orientation.transpose() * rt * ref.orientation * sr;
    d = sm_inv * moving.orientation.transpose() *
        (rt * (ref.origin - t.center_mm - t.translation_mm) + t.center_mm - moving.origin);
  }

  Eigen::Vector3d map(int x, int y, int z) const {
    return a * Eigen::Vector3d(x, y, z) + d;
  }
};

inline float sample_trilinear(const Volume3D& vol, const Eigen::Vector3d& q) {
  const Eigen::Vector3i n = vol.dims;
  for (int axis = 0; axis < 3; ++axis)
    if (q[axis] < 0.0 || q[axis] > static_cast<double>(n[axis] - 1)) return 0.0f;

  int x0, y0, z0;
  double fx, fy, fz;
  auto split = [](double v, int size, int& i0, double& f) {
    if (size == 1) {
      i0 = 0;
      f = 0.0;
      return;
    }
    i0 = std::min(static_cast<int>(v), size - 2);
    f = v - i0;
  };
  split(q.x(), n.x(), x0, fx);
  split(q.y(), n.y(), y0, fy);
  split(q.z(), n.z(), z0, fz);
  const int x1 = std::min(x0 + 1, n.x() - 1);
  const int y1 = std::min(y0 + 1, n.y() - 1);
  const int z1 = std::min(z0 + 1, n.z() - 1);

  const double c000 = vol.at(x0, y0, z0), c100 = vol.at(x1, y0, z0);
  const double c010 = vol.at(x0, y1, z0), c110 = vol.at(x1, y1, z0);
  const double c001 = vol.at(x0, y0, z1), c101 = vol.at(x1, y0, z1);
  const double c011 = vol.at(x0, y1, z1), c111 = vol.at(x1, y1, z1);

  const double c00 = c000 * (1.0 - fx) + c100 * fx;
  const double c10 = c010 * (1.0 - fx) + c110 * fx;
  const double c01 = c001 * (1.0 - fx) + c101 * fx;
  const double c11 = c011 * (1.0 - fx) + c111 * fx;
  const double c0 = c00 * (1.0 - fy) + c10 * fy;
  const double c1 = c01 * (1.0 - fy) + c11 * fy;
  return static_cast<float>(c0 * (1.0 - fz) + c1 * fz);
}

}  // namespace

Volume3D resample_trilinear(const Volume3D& moving, const RigidTransform& t,
                            const Volume3D& reference) {
  moving.validate();
  const PullbackMap pb(moving, t, reference);
  Volume3D::Array out(reference.values.size());
  Eigen::Index idx = 0;
  for (int z = 0; z < reference.dims.z(); ++z)
    for (int y = 0; y < reference.dims.y(); ++y)
      for (int x = 0; x < reference.dims.x(); ++x, ++idx)
        out[idx] = sample_trilinear(moving, pb.map(x, y, z));
  return reference.with_values<float>(std::move(out));
}

BrainMask resample_nearest(const BrainMask& moving, const RigidTransform& t,
                           const Volume3D& reference) {
  // Reuse the pull-back map via a thin float view of the mask geometry.
  Volume3D geom_only;
  geom_only.dims = moving.dims;
  geom_only.spacing = moving.spacing;
  geom_only.origin = moving.origin;
  geom_only.orientation = moving.orientation;
  geom_only.values = Volume3D::Array();
  const PullbackMap pb(geom_only, t, reference);

  BrainMask::Array out(reference.values.size());
  Eigen::Index idx = 0;
  for (int z = 0; z < reference.dims.z(); ++z) {
    for (int y = 0; y < reference.dims.y(); ++y) {
      for (int x = 0; x < reference.dims.x(); ++x, ++idx) {
        const Eigen::Vector3d q = pb.map(x, y, z);
        const int qx = static_cast<int>(std::lround(q.x()));
        const int qy = static_cast<int>(std::lround(q.y()));
        const int qz = static_cast<int>(std::lround(q.z()));
        out[idx] = moving.in_bounds(qx, qy, qz) ? moving.at(qx, qy, qz) : 0;
      }
    }
  }
  BrainMask m;
  m.dims = reference.dims;
  m.spacing = reference.spacing;
  m.origin = reference.origin;
  m.orientation = reference.orientation;
  m.values = std::move(out);
  m.validate();
  return m;
}

namespace {

// Flattened list of the fixed volume's positive voxels; the cost loop walks
// only these.
struct CostContext {
  const Volume3D& fixed;
  const Volume3D& moving;
  std::vector<Eigen::Vector3i> coords;
  std::vector<float> values;

  CostContext(const Volume3D& f, const Volume3D& m) : fixed(f), moving(m) {
    Eigen::Index idx = 0;
    for (int z = 0; z < f.dims.z(); ++z)
      for (int y = 0; y < f.dims.y(); ++y)
        for (int x = 0; x < f.dims.x(); ++x, ++idx)
          if (f.values[idx] > 0.0f) {
            coords.emplace_back(x, y, z);
            values.push_back(f.values[idx]);
          }
  }

  double evaluate(const RigidTransform& t) const {
    const PullbackMap pb(moving, t, fixed);
    double sum = 0.0;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const auto& c = coords[i];
      const double s = sample_trilinear(moving, pb.a * c.cast<double>() + pb.d);
      const double diff = static_cast<double>(values[i]) - s;
      sum += diff * diff;
    }
    return sum / static_cast<double>(coords.size());
  }
};

Eigen::Vector3d intensity_cog(const Volume3D& vol) {
  double wsum = 0.0;
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  Eigen::Index idx = 0;
  for (int z = 0; z < vol.dims.z(); ++z)
    for (int y = 0; y < vol.dims.y(); ++y)
      for (int x = 0; x < vol.dims.x(); ++x, ++idx) {
        const double w = std::max<double>(vol.values[idx], 0.0);
        if (w > 0.0) {
          acc += w * vol.index_to_physical(x, y, z);
          wsum += w;
        }
      }
  return wsum > 0.0 ? Eigen::Vector3d(acc / wsum) : vol.physical_center();
}

using Params6 = Eigen::Matrix<double, 6, 1>;  // [tx, ty, tz, rx, ry, rz]

RigidTransform params_to_transform(const Params6& p, const Eigen::Vector3d& center) {
  RigidTransform t;
  t.translation_mm = p.head<3>();
  t.euler_rad = p.tail<3>();
  t.center_mm = center;
  return t;
}

// Deterministic Nelder-Mead with the textbook reflection/expansion/
// contraction/shrink coefficients (1, 2, 0.5, 0.5).
struct SimplexResult {
  Params6 best;
  double cost;
  int evaluations;
};

SimplexResult nelder_mead(const std::function<double(const Params6&)>& f,
                          const Params6& start, const Params6& step,
                          const RegParams& params, int max_evals) {
  constexpr int kDim = 6;
  std::vector<Params6> verts(kDim + 1, start);
  std::vector<double> costs(kDim + 1);
  int evals = 0;
  auto eval = [&](const Params6& p) {
    ++evals;
    return f(p);
  };

  for (int i = 0; i < kDim; ++i) verts[i + 1][i] += step[i];
  for (int i = 0; i <= kDim; ++i) costs[i] = eval(verts[i]);

  std::vector<int> order(kDim + 1);
  auto reorder = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return costs[a] < costs[b]; });
  };

  while (evals < max_evals) {
    reorder();
    const int best = order[0], second_worst = order[kDim - 1], worst = order[kDim];

    // Convergence: simplex spread under the per-type parameter tolerances.
    double spread_t = 0.0, spread_r = 0.0;
    for (int i = 0; i <= kDim; ++i) {
      spread_t = std::max(spread_t,
                          (verts[i].head<3>() - verts[best].head<3>()).cwiseAbs().maxCoeff());
      spread_r = std::max(spread_r,
                          (verts[i].tail<3>() - verts[best].tail<3>()).cwiseAbs().maxCoeff());
    }
    if (spread_t < params.tol_translation_mm && spread_r < params.tol_rotation_rad) break;

    Params6 centroid = Params6::Zero();
    for (int i = 0; i <= kDim; ++i)
      if (i != worst) centroid += verts[i];
    centroid /= kDim;

    const Params6 reflected = centroid + (centroid - verts[worst]);
    const double fr = eval(reflected);
    if (fr < costs[best]) {
      const Params6 expanded = centroid + 2.0 * (centroid - verts[worst]);
      const double fe = eval(expanded);
      if (fe < fr) {
        verts[worst] = expanded;
        costs[worst] = fe;
      } else {
        verts[worst] = reflected;
        costs[worst] = fr;
      }
    } else if (fr < costs[second_worst]) {
      verts[worst] = reflected;
      costs[worst] = fr;
    } else {
      const bool outside = fr < costs[worst];
      const Params6 contracted = outside ? centroid + 0.5 * (reflected - centroid)
                                         : centroid + 0.5 * (verts[worst] - centroid);
      const double fc = eval(contracted);
      if (fc < (outside ? fr : costs[worst])) {
        verts[worst] = contracted;
        costs[worst] = fc;
      } else {
        for (int i = 0; i <= kDim; ++i) {
          if (i == best) continue;
          verts[i] = verts[best] + 0.5 * (verts[i] - verts[best]);
          costs[i] = eval(verts[i]);
        }
      }
    }
  }

  reorder();
  return {verts[order[0]], costs[order[0]], evals};
}

}  // namespace

double mse_cost(const Volume3D& fixed, const Volume3D& moving, const RigidTransform& t) {
  const CostContext ctx(fixed, moving);
  if (ctx.coords.empty()) throw InputError("mse_cost: fixed volume has no positive voxels");
  return ctx.evaluate(t);
}

Volume3D downsample_by_two(const Volume3D& vol) {
  const Eigen::Vector3i nd((vol.dims.x() + 1) / 2, (vol.dims.y() + 1) / 2,
                           (vol.dims.z() + 1) / 2);
  Volume3D::Array out(static_cast<Eigen::Index>(nd.x()) * nd.y() * nd.z());
  Eigen::Index idx = 0;
  for (int z = 0; z < nd.z(); ++z) {
    for (int y = 0; y < nd.y(); ++y) {
      for (int x = 0; x < nd.x(); ++x, ++idx) {
        double sum = 0.0;
        int count = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int sx = 2 * x + dx, sy = 2 * y + dy, sz = 2 * z + dz;
              if (vol.in_bounds(sx, sy, sz)) {
                sum += vol.at(sx, sy, sz);
                ++count;
              }
            }
        out[idx] = static_cast<float>(sum / count);
      }
    }
  }
  Volume3D v;
  v.dims = nd;
  v.spacing = vol.spacing * 2.0;
  v.origin = vol.origin + vol.orientation * (0.5 * vol.spacing);
  v.orientation = vol.orientation;
  v.intensity_units = vol.intensity_units;
  v.values = std::move(out);
  v.validate();
  return v;
}

RegistrationResult register_rigid(const Volume3D& fixed, const Volume3D& moving,
                                  const RegParams& params) {
  if (params.pyramid_levels < 1) throw ParameterError("pyramid levels must be >= 1");
  if ((fixed.values > 0.0f).count() == 0 || (moving.values > 0.0f).count() == 0)
    throw InputError("register_rigid: degenerate (non-positive) volume");

  const Eigen::Vector3d center = fixed.physical_center();

  // Coarse-to-fine pyramid; levels that would drop below 8 voxels per axis
  // are skipped.
  std::vector<Volume3D> fixed_pyr{fixed}, moving_pyr{moving};
  for (int l = 1; l < params.pyramid_levels; ++l) {
    const Volume3D& prev = fixed_pyr.back();
    if (prev.dims.minCoeff() < 16) break;
    fixed_pyr.push_back(downsample_by_two(fixed_pyr.back()));
    moving_pyr.push_back(downsample_by_two(moving_pyr.back()));
  }

  Params6 current = Params6::Zero();
  current.head<3>() = intensity_cog(fixed) - intensity_cog(moving);

  Params6 step;
  step << params.simplex_translation_mm, params.simplex_translation_mm,
      params.simplex_translation_mm, params.simplex_rotation_rad,
      params.simplex_rotation_rad, params.simplex_rotation_rad;

  int total_evals = 0;
  double best_cost = 0.0;
  for (int l = static_cast<int>(fixed_pyr.size()) - 1; l >= 0; --l) {
    const CostContext ctx(fixed_pyr[l], moving_pyr[l]);
    if (ctx.coords.empty()) throw InputError("register_rigid: empty fixed level");
    auto cost_fn = [&](const Params6& p) { return ctx.evaluate(params_to_transform(p, center)); };
    const SimplexResult r = nelder_mead(cost_fn, current, step, params,
                                        params.max_evaluations);
    current = r.best;
    best_cost = r.cost;
    total_evals += r.evaluations;
  }

  // The optimizer never returns worse than the identity transform.
  const CostContext full(fixed, moving);
  const double identity_cost = full.evaluate(RigidTransform::identity(center));
  RegistrationResult result;
  if (identity_cost < best_cost) {
    result.transform = RigidTransform::identity(center);
    result.final_cost = identity_cost;
  } else {
    result.transform = params_to_transform(current, center);
    result.transform.normalize_angles();
    result.final_cost = best_cost;
  }
  result.evaluations = total_evals;
  return result;
}

std::string transform_to_json(const RigidTransform& t, double final_cost) {
  nlohmann::ordered_json j;
  j["euler_rad"] = {t.euler_rad.x(), t.euler_rad.y(), t.euler_rad.z()};
  j["translation_mm"] = {t.translation_mm.x(), t.translation_mm.y(), t.translation_mm.z()};
  j["center_mm"] = {t.center_mm.x(), t.center_mm.y(), t.center_mm.z()};
  j["final_cost"] = final_cost;
  return j.dump(2);
}

RigidTransform transform_from_json(const std::string& text, double* final_cost) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    RigidTransform t;
    for (int i = 0; i < 3; ++i) {
      t.euler_rad[i] = j.at("euler_rad").at(i).get<double>();
      t.translation_mm[i] = j.at("translation_mm").at(i).get<double>();
      t.center_mm[i] = j.at("center_mm").at(i).get<double>();
    }
    if (final_cost != nullptr) *final_cost = j.value("final_cost", 0.0);
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid transform JSON: ") + e.what());
  }
}

}  // namespace neurovol
