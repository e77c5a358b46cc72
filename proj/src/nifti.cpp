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
#include "neurovol/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace neurovol {

namespace {

constexpr int kHeaderSize = 348;

// Field offsets inside the 348-byte NIfTI-1 header. The header is assembled
// and parsed through an explicit byte buffer so struct padding can never leak
// into the file layout.
constexpr int kOffSizeofHdr = 0;
constexpr int kOffDim = 40;
constexpr int kOffDatatype = 70;
constexpr int kOffBitpix = 72;
constexpr int kOffPixdim = 76;
constexpr int kOffVoxOffset = 108;
constexpr int kOffSclSlope = 112;
constexpr int kOffSclInter = 116;
constexpr int kOffXyztUnits = 123;
constexpr int kOffDescrip = 148;
constexpr int kOffQformCode = 252;
constexpr int kOffSformCode = 254;
constexpr int kOffSrowX = 280;
constexpr int kOffSrowY = 296;
constexpr int kOffSrowZ = 312;
constexpr int kOffMagic = 344;

template <typename T>
T get_le(const unsigned char* buf, int offset) {
  T v;
  std::memcpy(&v, buf + offset, sizeof(T));
  return v;
}

template <typename T>
void put_le(unsigned char* buf, int offset, T v) {
  std::memcpy(buf + offset, &v, sizeof(T));
}

// Thin RAII reader over zlib's gzFile. gzread transparently handles both
// plain and gzip-compressed streams, which is exactly the 0x1F 0x8B
// prefix-detection behavior the format calls for.
class GzReader {
 public:
  explicit GzReader(const std::string& path) : file_(gzopen(path.c_str(), "rb")) {
    if (file_ == nullptr) throw IoError("cannot open file for reading: " + path);
  }
  ~GzReader() {
    if (file_ != nullptr) gzclose(file_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  // Reads exactly n bytes; returns the number actually read.
  std::size_t read(void* dst, std::size_t n) {
    auto* p = static_cast<unsigned char*>(dst);
    std::size_t total = 0;
    while (total < n) {
      const unsigned chunk =
          static_cast<unsigned>(std::min<std::size_t>(n - total, 1u << 28));
      const int got = gzread(file_, p + total, chunk);
      if (got <= 0) break;
      total += static_cast<std::size_t>(got);
    }
    return total;
  }

  void skip(std::size_t n) {
    std::vector<unsigned char> sink(std::min<std::size_t>(n, 1 << 16));
    std::size_t remaining = n;
    while (remaining > 0) {
      const std::size_t chunk = std::min(remaining, sink.size());
      if (read(sink.data(), chunk) != chunk)
        throw CorruptionError("truncated file while seeking to voxel payload");
      remaining -= chunk;
    }
  }

 private:
  gzFile file_;
};

class GzWriter {
 public:
  explicit GzWriter(const std::string& path) : file_(gzopen(path.c_str(), "wb")) {
    if (file_ == nullptr) throw IoError("cannot open file for writing: " + path);
  }
  ~GzWriter() {
    if (file_ != nullptr) gzclose(file_);
  }
  GzWriter(const GzWriter&) = delete;
  GzWriter& operator=(const GzWriter&) = delete;

  void write(const void* src, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(src);
    std::size_t total = 0;
    while (total < n) {
      const unsigned chunk =
          static_cast<unsigned>(std::min<std::size_t>(n - total, 1u << 28));
      const int put = gzwrite(file_, p + total, chunk);
      if (put <= 0) throw IoError("write failed (gzip stream)");
      total += static_cast<std::size_t>(put);
    }
  }

  void close_checked(const std::string& path) {
    const int rc = gzclose(file_);
    file_ = nullptr;
    if (rc != Z_OK) throw IoError("failed to finalize file: " + path);
  }

 private:
  gzFile file_;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kNiftiUint8: return 1;
    case kNiftiInt16: return 2;
    case kNiftiFloat32: return 4;
    case kNiftiFloat64: return 8;
    default: return 0;
  }
}

NiftiHeader parse_header(const unsigned char* buf) {
  NiftiHeader h;
  std::memcpy(h.magic.data(), buf + kOffMagic, 4);
  if (!h.single_file()) {
    if (buf[kOffMagic] == 'n' && buf[kOffMagic + 1] == 'i' && buf[kOffMagic + 2] == '1')
      throw FormatError("two-file NIfTI-1 (hdr/img pairs) is not supported");
    throw FormatError("bad magic tag: not a single-file NIfTI-1 volume");
  }
  const auto sizeof_hdr = get_le<std::int32_t>(buf, kOffSizeofHdr);
  if (sizeof_hdr != kHeaderSize)
    throw FormatError("header sizeof_hdr != 348 (byte-swapped files are not supported)");

  for (int i = 0; i < 8; ++i) {
    h.dim[i] = get_le<std::int16_t>(buf, kOffDim + 2 * i);
    h.pixdim[i] = get_le<float>(buf, kOffPixdim + 4 * i);
  }
  h.datatype = get_le<std::int16_t>(buf, kOffDatatype);
  h.vox_offset = get_le<float>(buf, kOffVoxOffset);
  h.scl_slope = get_le<float>(buf, kOffSclSlope);
  h.scl_inter = get_le<float>(buf, kOffSclInter);

  char descrip[81] = {0};
  std::memcpy(descrip, buf + kOffDescrip, 80);
  h.descrip = descrip;
  return h;
}

Eigen::Matrix3d orientation_from_srow(const unsigned char* buf,
                                      const Eigen::Vector3d& spacing,
                                      Eigen::Vector3d* origin) {
  Eigen::Matrix3d dir = Eigen::Matrix3d::Identity();
  const auto sform_code = get_le<std::int16_t>(buf, kOffSformCode);
  if (sform_code <= 0) return dir;

  Eigen::Matrix<double, 3, 4> srow;
  const int offs[3] = {kOffSrowX, kOffSrowY, kOffSrowZ};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) srow(r, c) = get_le<float>(buf, offs[r] + 4 * c);

  *origin = srow.col(3);
  Eigen::Matrix3d cand;
  for (int c = 0; c < 3; ++c) {
    Eigen::Vector3d col = srow.col(c);
    const double norm = col.norm();
    if (norm <= 0.0) return Eigen::Matrix3d::Identity();
    cand.col(c) = col / norm;
  }
  // Orientation is carried, not used for resampling; a sheared sform that
  // cannot be normalized to unit rows falls back to identity.
  for (int r = 0; r < 3; ++r)
    if (std::abs(cand.row(r).norm() - 1.0) > 1e-6) return Eigen::Matrix3d::Identity();
  (void)spacing;
  return cand;
}

}  // namespace

Volume3D read_nifti(const std::string& path, NiftiReadReport* report) {
  GzReader in(path);

  unsigned char buf[kHeaderSize];
  if (in.read(buf, kHeaderSize) != kHeaderSize)
    throw FormatError("file too short for a NIfTI-1 header");
  const NiftiHeader h = parse_header(buf);

  if (bytes_per_voxel(h.datatype) == 0)
    throw UnsupportedDatatypeError("unsupported NIfTI datatype code " +
                                   std::to_string(h.datatype));

  const int ndim = h.dim[0];
  if (ndim < 1 || ndim > 7) throw FormatError("invalid dim[0]");
  for (int d = 1; d <= ndim; ++d)
    if (h.dim[d] <= 0) throw FormatError("non-positive dimension in header");
  // Coerce to 3-D: trailing singleton dimensions are dropped, anything else
  // (time series, vector-valued voxels) is out of scope.
  for (int d = 4; d <= ndim; ++d)
    if (h.dim[d] != 1) throw FormatError("volumes with more than 3 non-singleton dims are not supported");

  Eigen::Vector3i dims(ndim >= 1 ? h.dim[1] : 1, ndim >= 2 ? h.dim[2] : 1,
                       ndim >= 3 ? h.dim[3] : 1);
  Eigen::Vector3d spacing(1, 1, 1);
  for (int d = 0; d < 3; ++d) {
    if (d < ndim) {
      const float p = h.pixdim[d + 1];
      if (!(p > 0.0f) || !std::isfinite(p))
        throw FormatError("non-positive pixdim in header");
      spacing[d] = p;
    }
  }

  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  const Eigen::Matrix3d orientation = orientation_from_srow(buf, spacing, &origin);

  if (h.vox_offset < kHeaderSize || !std::isfinite(h.vox_offset))
    throw FormatError("invalid vox_offset");
  in.skip(static_cast<std::size_t>(h.vox_offset) - kHeaderSize);

  const auto n = static_cast<std::size_t>(dims.x()) * dims.y() * dims.z();
  const int bpv = bytes_per_voxel(h.datatype);
  std::vector<unsigned char> raw(n * bpv);
  if (in.read(raw.data(), raw.size()) != raw.size())
    throw CorruptionError("truncated voxel payload in " + path);

  const bool scale = h.scl_slope != 0.0f &&
                     !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
  Volume3D::Array values(static_cast<Eigen::Index>(n));
  auto convert = [&](auto fetch) {
    for (std::size_t i = 0; i < n; ++i) {
      double v = fetch(i);
      if (scale) v = static_cast<double>(h.scl_slope) * v + h.scl_inter;
      values[static_cast<Eigen::Index>(i)] = static_cast<float>(v);
    }
  };
  switch (h.datatype) {
    case kNiftiUint8:
      convert([&](std::size_t i) { return static_cast<double>(raw[i]); });
      break;
    case kNiftiInt16:
      convert([&](std::size_t i) {
        std::int16_t v;
        std::memcpy(&v, raw.data() + 2 * i, 2);
        return static_cast<double>(v);
      });
      break;
    case kNiftiFloat32:
      if (!scale) {
        // Bit-exact path: no arithmetic touches the payload.
        std::memcpy(values.data(), raw.data(), raw.size());
      } else {
        convert([&](std::size_t i) {
          float v;
          std::memcpy(&v, raw.data() + 4 * i, 4);
          return static_cast<double>(v);
        });
      }
      break;
    case kNiftiFloat64:
      convert([&](std::size_t i) {
        double v;
        std::memcpy(&v, raw.data() + 8 * i, 8);
        return v;
      });
      break;
    default:
      throw UnsupportedDatatypeError("unsupported datatype");
  }

  std::int64_t nonfinite = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      values[i] = 0.0f;
      ++nonfinite;
    }
  }

  Volume3D vol = Volume3D::create(dims, spacing, std::move(values), origin, orientation,
                                  h.descrip);
  if (report != nullptr) {
    report->header = h;
    report->nonfinite_replaced = nonfinite;
  }
  return vol;
}

void write_nifti(const Volume3D& vol, const std::string& path) {
  vol.validate();

  unsigned char buf[kHeaderSize + 4] = {0};  // header + extension flag
  put_le<std::int32_t>(buf, kOffSizeofHdr, kHeaderSize);
  put_le<std::int16_t>(buf, kOffDim + 0, 3);
  put_le<std::int16_t>(buf, kOffDim + 2, static_cast<std::int16_t>(vol.dims.x()));
  put_le<std::int16_t>(buf, kOffDim + 4, static_cast<std::int16_t>(vol.dims.y()));
  put_le<std::int16_t>(buf, kOffDim + 6, static_cast<std::int16_t>(vol.dims.z()));
  for (int d = 4; d < 8; ++d) put_le<std::int16_t>(buf, kOffDim + 2 * d, 1);
  put_le<std::int16_t>(buf, kOffDatatype, kNiftiFloat32);
  put_le<std::int16_t>(buf, kOffBitpix, 32);
  put_le<float>(buf, kOffPixdim + 0, 1.0f);
  put_le<float>(buf, kOffPixdim + 4, static_cast<float>(vol.spacing.x()));
  put_le<float>(buf, kOffPixdim + 8, static_cast<float>(vol.spacing.y()));
  put_le<float>(buf, kOffPixdim + 12, static_cast<float>(vol.spacing.z()));
  put_le<float>(buf, kOffVoxOffset, 352.0f);
  put_le<float>(buf, kOffSclSlope, 1.0f);
  put_le<float>(buf, kOffSclInter, 0.0f);
  buf[kOffXyztUnits] = 2;  // NIFTI_UNITS_MM
  std::memcpy(buf + kOffDescrip, vol.intensity_units.c_str(),
              std::min<std::size_t>(vol.intensity_units.size(), 79));
  put_le<std::int16_t>(buf, kOffQformCode, 0);
  put_le<std::int16_t>(buf, kOffSformCode, 1);
  const int offs[3] = {kOffSrowX, kOffSrowY, kOffSrowZ};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c)
      put_le<float>(buf, offs[r] + 4 * c,
                    static_cast<float>(vol.orientation(r, c) * vol.spacing[c]));
    put_le<float>(buf, offs[r] + 12, static_cast<float>(vol.origin[r]));
  }
  buf[kOffMagic] = 'n';
  buf[kOffMagic + 1] = '+';
  buf[kOffMagic + 2] = '1';
  buf[kOffMagic + 3] = '\0';

  const auto payload_bytes = static_cast<std::size_t>(vol.values.size()) * 4;
  if (ends_with(path, ".gz")) {
    GzWriter out(path);
    out.write(buf, sizeof(buf));
    out.write(vol.values.data(), payload_bytes);
    out.close_checked(path);
  } else {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf), sizeof(buf));
    out.write(reinterpret_cast<const char*>(vol.values.data()),
              static_cast<std::streamsize>(payload_bytes));
    out.flush();
    if (!out) throw IoError("write failed: " + path);
  }
}

void write_nifti_mask(const BrainMask& mask, const std::string& path) {
  Volume3D::Array vals(mask.values.size());
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    vals[i] = mask.values[i] != 0 ? 1.0f : 0.0f;
  write_nifti(mask.with_values<float>(std::move(vals)), path);
}

}  // namespace neurovol
