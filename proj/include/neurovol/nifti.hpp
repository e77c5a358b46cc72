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

#include <array>
#include <cstdint>
#include <string>

#include "neurovol/grid.hpp"

namespace neurovol {

// NIfTI-1 datatype codes accepted by the reader.
inline constexpr std::int16_t kNiftiUint8 = 2;
inline constexpr std::int16_t kNiftiInt16 = 4;
inline constexpr std::int16_t kNiftiFloat32 = 16;
inline constexpr std::int16_t kNiftiFloat64 = 64;

/// Decoded subset of the 348-byte NIfTI-1 header. Single-file ("n+1") layout
/// only; scl_slope == 0 is interpreted as identity scaling.
struct NiftiHeader {
  std::int16_t datatype = kNiftiFloat32;
  std::array<std::int16_t, 8> dim{};           // dim[0] = ndim
  std::array<float, 8> pixdim{};               // pixdim[1..3] = spacing mm
  float vox_offset = 352.0f;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::array<char, 4> magic{{'n', '+', '1', '\0'}};
  std::string descrip;

  bool single_file() const {
    return magic[0] == 'n' && magic[1] == '+' && magic[2] == '1' && magic[3] == '\0';
  }
};

/// Counters surfaced by read_nifti; non-finite voxels are replaced by 0 so the
/// EM and optimizer stages never see NaN/Inf.
struct NiftiReadReport {
  NiftiHeader header;
  std::int64_t nonfinite_replaced = 0;
};

/// Reads a single-file NIfTI-1 volume (.nii, optionally gzip-compressed).
/// Applies scl_slope/scl_inter, takes spacing from pixdim, and coerces the
/// grid to 3-D by dropping singleton trailing dimensions.
///
/// Throws FormatError (bad magic / malformed header), UnsupportedDatatypeError,
/// CorruptionError (truncated payload), IoError (unreadable path).
Volume3D read_nifti(const std::string& path, NiftiReadReport* report = nullptr);

/// Writes the volume as single-file NIfTI-1 with a 32-bit float payload
/// (gzip-compressed when the path ends in ".gz"). Re-reading yields identical
/// dims, spacing to 1e-6 mm, and a bit-exact voxel payload.
void write_nifti(const Volume3D& vol, const std::string& path);

/// Masks stored as {0,1} float payloads for inspection alongside volumes.
void write_nifti_mask(const BrainMask& mask, const std::string& path);

}  // namespace neurovol
