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
#include "neurovol/brain_extract.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace neurovol {

namespace {

std::vector<Eigen::Vector3i> ball_offsets(int radius) {
  std::vector<Eigen::Vector3i> offs;
  const int r2 = radius * radius;
  for (int dz = -radius; dz <= radius; ++dz)
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx)
        if (dx * dx + dy * dy + dz * dz <= r2) offs.emplace_back(dx, dy, dz);
  return offs;
}

BrainMask with_mask_values(const BrainMask& like, BrainMask::Array values) {
  BrainMask m;
  m.dims = like.dims;
  m.spacing = like.spacing;
  m.origin = like.origin;
  m.orientation = like.orientation;
  m.values = std::move(values);
  return m;
}

// 26-connected component labeling over a scratch stack; returns per-voxel
// component id (-1 outside the mask) plus per-component voxel count and
// minimum linear index.
struct Components {
  std::vector<std::int32_t> label;
  std::vector<std::int64_t> count;
  std::vector<Eigen::Index> min_index;
};

Components label_components(const BrainMask& mask) {
  const Eigen::Vector3i d = mask.dims;
  Components comp;
  comp.label.assign(mask.values.size(), -1);

  std::vector<Eigen::Index> stack;
  std::int32_t next = 0;
  for (Eigen::Index seed = 0; seed < mask.values.size(); ++seed) {
    if (mask.values[seed] == 0 || comp.label[seed] >= 0) continue;
    const std::int32_t id = next++;
    comp.count.push_back(0);
    comp.min_index.push_back(seed);
    stack.push_back(seed);
    comp.label[seed] = id;
    while (!stack.empty()) {
      const Eigen::Index i = stack.back();
      stack.pop_back();
      ++comp.count[id];
      const int x = static_cast<int>(i % d.x());
      const int y = static_cast<int>((i / d.x()) % d.y());
      const int z = static_cast<int>(i / (static_cast<Eigen::Index>(d.x()) * d.y()));
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            const int nx = x + dx, ny = y + dy, nz = z + dz;
            if (!mask.in_bounds(nx, ny, nz)) continue;
            const Eigen::Index j = mask.index(nx, ny, nz);
            if (mask.values[j] != 0 && comp.label[j] < 0) {
              comp.label[j] = id;
              stack.push_back(j);
            }
          }
    }
  }
  return comp;
}

}  // namespace

std::pair<double, double> robust_intensity_range(const Volume3D& vol, double pct_low,
                                                 double pct_high) {
  std::vector<float> nonzero;
  nonzero.reserve(vol.values.size() / 2);
  for (Eigen::Index i = 0; i < vol.values.size(); ++i)
    if (vol.values[i] != 0.0f) nonzero.push_back(vol.values[i]);
  if (nonzero.empty()) throw InputError("robust_intensity_range: all-zero volume");

  std::sort(nonzero.begin(), nonzero.end());
  auto pct = [&](double q) {
    const auto n = static_cast<Eigen::Index>(nonzero.size());
    if (n == 1) return static_cast<double>(nonzero[0]);
    const double pos = q / 100.0 * static_cast<double>(n - 1);
    const auto lo = static_cast<Eigen::Index>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    return nonzero[lo] + (pos - lo) * (static_cast<double>(nonzero[hi]) - nonzero[lo]);
  };
  return {pct(pct_low), pct(pct_high)};
}

Eigen::Vector3d center_of_gravity(const Volume3D& vol, const BrainMask& mask) {
  if (mask.dims != vol.dims) throw ShapeError("center_of_gravity: mask/volume mismatch");
  double wsum = 0.0;
  std::int64_t count = 0;
  Eigen::Vector3d weighted = Eigen::Vector3d::Zero();
  Eigen::Vector3d unweighted = Eigen::Vector3d::Zero();
  Eigen::Index idx = 0;
  for (int z = 0; z < vol.dims.z(); ++z)
    for (int y = 0; y < vol.dims.y(); ++y)
      for (int x = 0; x < vol.dims.x(); ++x, ++idx) {
        if (mask.values[idx] == 0) continue;
        ++count;
        unweighted += Eigen::Vector3d(x, y, z);
        const double w = std::max<double>(vol.values[idx], 0.0);
        if (w > 0.0) {
          weighted += w * Eigen::Vector3d(x, y, z);
          wsum += w;
        }
      }
  if (count == 0) throw InputError("center_of_gravity: empty mask");
  return wsum > 0.0 ? Eigen::Vector3d(weighted / wsum)
                    : Eigen::Vector3d(unweighted / static_cast<double>(count));
}

BrainMask dilate(const BrainMask& mask, int radius_vox) {
  if (radius_vox < 0) throw ParameterError("dilate: negative radius");
  if (radius_vox == 0) return mask;
  const auto offs = ball_offsets(radius_vox);
  BrainMask::Array out = BrainMask::Array::Zero(mask.values.size());
  const Eigen::Vector3i d = mask.dims;
  Eigen::Index idx = 0;
  for (int z = 0; z < d.z(); ++z)
    for (int y = 0; y < d.y(); ++y)
      for (int x = 0; x < d.x(); ++x, ++idx) {
        if (mask.values[idx] == 0) continue;
        for (const auto& o : offs) {
          const int nx = x + o.x(), ny = y + o.y(), nz = z + o.z();
          if (mask.in_bounds(nx, ny, nz)) out[mask.index(nx, ny, nz)] = 1;
        }
      }
  return with_mask_values(mask, std::move(out));
}

BrainMask erode(const BrainMask& mask, int radius_vox) {
  if (radius_vox < 0) throw ParameterError("erode: negative radius");
  if (radius_vox == 0) return mask;
  const auto offs = ball_offsets(radius_vox);
  BrainMask::Array out = BrainMask::Array::Zero(mask.values.size());
  const Eigen::Vector3i d = mask.dims;
  Eigen::Index idx = 0;
  for (int z = 0; z < d.z(); ++z)
    for (int y = 0; y < d.y(); ++y)
      for (int x = 0; x < d.x(); ++x, ++idx) {
        if (mask.values[idx] == 0) continue;
        bool keep = true;
        for (const auto& o : offs) {
          const int nx = x + o.x(), ny = y + o.y(), nz = z + o.z();
          if (!mask.in_bounds(nx, ny, nz) || mask.values[mask.index(nx, ny, nz)] == 0) {
            keep = false;
            break;
          }
        }
        if (keep) out[idx] = 1;
      }
  return with_mask_values(mask, std::move(out));
}

BrainMask close_mask(const BrainMask& mask, int radius_vox) {
  return erode(dilate(mask, radius_vox), radius_vox);
}

BrainMask fill_holes(const BrainMask& mask) {
  const Eigen::Vector3i d = mask.dims;
  // 6-connected background flood from every boundary face; zeros the flood
  // never reaches are interior holes.
  std::vector<std::uint8_t> outside(mask.values.size(), 0);
  std::vector<Eigen::Index> stack;
  auto push_if_bg = [&](int x, int y, int z) {
    if (!mask.in_bounds(x, y, z)) return;
    const Eigen::Index i = mask.index(x, y, z);
    if (mask.values[i] == 0 && !outside[i]) {
      outside[i] = 1;
      stack.push_back(i);
    }
  };
  for (int z = 0; z < d.z(); ++z)
    for (int y = 0; y < d.y(); ++y) {
      push_if_bg(0, y, z);
      push_if_bg(d.x() - 1, y, z);
    }
  for (int z = 0; z < d.z(); ++z)
    for (int x = 0; x < d.x(); ++x) {
      push_if_bg(x, 0, z);
      push_if_bg(x, d.y() - 1, z);
    }
  for (int y = 0; y < d.y(); ++y)
    for (int x = 0; x < d.x(); ++x) {
      push_if_bg(x, y, 0);
      push_if_bg(x, y, d.z() - 1);
    }

  static constexpr int kOff[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                     {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
  while (!stack.empty()) {
    const Eigen::Index i = stack.back();
    stack.pop_back();
    const int x = static_cast<int>(i % d.x());
    const int y = static_cast<int>((i / d.x()) % d.y());
    const int z = static_cast<int>(i / (static_cast<Eigen::Index>(d.x()) * d.y()));
    for (const auto& o : kOff) push_if_bg(x + o[0], y + o[1], z + o[2]);
  }

  BrainMask::Array out(mask.values.size());
  for (Eigen::Index i = 0; i < mask.values.size(); ++i)
    out[i] = (mask.values[i] != 0 || !outside[i]) ? 1 : 0;
  return with_mask_values(mask, std::move(out));
}

BrainMask largest_component(const BrainMask& mask) {
  const Components comp = label_components(mask);
  if (comp.count.empty()) return mask;
  int best = 0;
  for (int id = 1; id < static_cast<int>(comp.count.size()); ++id) {
    if (comp.count[id] > comp.count[best] ||
        (comp.count[id] == comp.count[best] && comp.min_index[id] < comp.min_index[best]))
      best = id;
  }
  BrainMask::Array out(mask.values.size());
  for (Eigen::Index i = 0; i < mask.values.size(); ++i)
    out[i] = comp.label[i] == best ? 1 : 0;
  return with_mask_values(mask, std::move(out));
}

int count_components(const BrainMask& mask) {
  return static_cast<int>(label_components(mask).count.size());
}

double dice_coefficient(const BrainMask& a, const BrainMask& b) {
  if (a.dims != b.dims) throw ShapeError("dice: dims mismatch");
  std::int64_t inter = 0, total = 0;
  for (Eigen::Index i = 0; i < a.values.size(); ++i) {
    const bool va = a.values[i] != 0, vb = b.values[i] != 0;
    inter += (va && vb) ? 1 : 0;
    total += (va ? 1 : 0) + (vb ? 1 : 0);
  }
  return total > 0 ? 2.0 * static_cast<double>(inter) / static_cast<double>(total) : 1.0;
}

namespace {

BrainMask refine_pass(const BrainMask& thresholded, const ExtractParams& params) {
  BrainMask m = largest_component(thresholded);
  m = close_mask(m, params.closing_radius_vox);
  return fill_holes(m);
}

}  // namespace

ExtractResult extract_brain(const Volume3D& vol, const ExtractParams& params) {
  if (!(params.frac > 0.0 && params.frac < 1.0))
    throw ParameterError("extract_brain: frac must lie in (0, 1)");
  if (params.closing_radius_vox < 1)
    throw ParameterError("extract_brain: closing radius must be >= 1");

  const auto [t2, t98] = robust_intensity_range(vol, params.pct_low, params.pct_high);
  const double threshold = t2 + params.frac * (t98 - t2);

  BrainMask::Array above(vol.values.size());
  std::int64_t n_above = 0;
  for (Eigen::Index i = 0; i < vol.values.size(); ++i) {
    above[i] = vol.values[i] > threshold ? 1 : 0;
    n_above += above[i];
  }
  if (n_above == 0) throw ExtractionError("extract_brain: empty mask after thresholding");

  BrainMask thresholded;
  thresholded.dims = vol.dims;
  thresholded.spacing = vol.spacing;
  thresholded.origin = vol.origin;
  thresholded.orientation = vol.orientation;
  thresholded.values = std::move(above);

  const BrainMask pass1 = refine_pass(thresholded, params);
  const std::int64_t pass1_count = (pass1.values != 0).count();
  if (pass1_count == 0) throw ExtractionError("extract_brain: pass 1 produced empty mask");

  // Pass 2: re-seed from the pass-1 CoG and drop anything beyond the
  // refinement radius before re-extracting.
  const Eigen::Vector3d cog = center_of_gravity(vol, pass1);
  const double volume_mm3 = static_cast<double>(pass1_count) * voxel_volume_mm3(vol);
  const double r_eq_mm = std::cbrt(3.0 * volume_mm3 / (4.0 * M_PI));
  const double radius_mm = params.cog_radius_factor * r_eq_mm;
  const Eigen::Vector3d cog_mm = vol.index_to_physical(cog.x(), cog.y(), cog.z());

  BrainMask::Array restricted = BrainMask::Array::Zero(vol.values.size());
  Eigen::Index idx = 0;
  for (int z = 0; z < vol.dims.z(); ++z)
    for (int y = 0; y < vol.dims.y(); ++y)
      for (int x = 0; x < vol.dims.x(); ++x, ++idx) {
        if (pass1.values[idx] == 0) continue;
        if ((vol.index_to_physical(x, y, z) - cog_mm).norm() <= radius_mm)
          restricted[idx] = 1;
      }
  BrainMask restricted_mask = with_mask_values(pass1, std::move(restricted));
  if ((restricted_mask.values != 0).count() == 0)
    throw ExtractionError("extract_brain: pass 2 radius restriction emptied the mask");

  ExtractResult result;
  result.mask = refine_pass(restricted_mask, params);
  result.pass1_voxels = pass1_count;
  result.pass2_voxels = (result.mask.values != 0).count();
  if (result.pass2_voxels == 0)
    throw ExtractionError("extract_brain: pass 2 produced empty mask");

  Volume3D::Array stripped(vol.values.size());
  for (Eigen::Index i = 0; i < vol.values.size(); ++i)
    stripped[i] = result.mask.values[i] != 0 ? vol.values[i] : 0.0f;
  result.stripped = vol.with_values<float>(std::move(stripped));
  return result;
}

}  // namespace neurovol
