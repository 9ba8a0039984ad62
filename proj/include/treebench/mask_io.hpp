/*
 * Mask file I/O.
 *
 * Two on-disk formats are understood:
 *
 *   NIfTI-1 (.nii, .nii.gz, and .hdr/.img pairs). Only the fields needed to
 *   recover a binary mask and its spacing are consumed: sizeof_hdr, dim,
 *   datatype, bitpix, pixdim, vox_offset and magic. Orientation (qform/sform)
 *   is ignored. Supported datatypes: uint8 (2), int16 (4), int32 (8),
 *   float32 (16), float64 (64). Byte order is detected from sizeof_hdr.
 *
 *   TBM ("tree binary mask", .tbm): "TBM1", nx ny nz as u32 LE, dx dy dz as
 *   f32 LE, then nx*ny*nz bytes in {0,1}, x fastest.
 *
 * Either format may be gzip-compressed; compression is detected from the
 * leading bytes, not the file name.
 */
#ifndef TREEBENCH_MASK_IO_HPP
#define TREEBENCH_MASK_IO_HPP

#include <treebench/volume.hpp>

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace treebench {

class FormatError : public DataError {
public:
  using DataError::DataError;
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  if (size < 0) throw DataError("cannot read " + path.string());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
  if (size > 0 && !in.read(reinterpret_cast<char *>(buf.data()), size))
    throw DataError("short read on " + path.string());
  return buf;
}

inline void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

inline bool is_gzip(std::span<const std::uint8_t> b) {
  return b.size() >= 2 && b[0] == 0x1f && b[1] == 0x8b;
}

inline std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> in) {
  z_stream zs{};
  // 15 + 32: zlib or gzip wrapper, auto-detected
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw FormatError("inflateInit2 failed");
  std::vector<std::uint8_t> out;
  out.resize(std::max<std::size_t>(in.size() * 4, 1 << 16));
  zs.next_in = const_cast<Bytef *>(in.data());
  std::size_t consumed = 0;
  std::size_t produced = 0;
  int rc = Z_OK;
  while (true) {
    const std::size_t in_chunk = std::min<std::size_t>(in.size() - consumed, 1u << 30);
    zs.next_in = const_cast<Bytef *>(in.data() + consumed);
    zs.avail_in = static_cast<uInt>(in_chunk);
    if (produced == out.size()) out.resize(out.size() * 2);
    const std::size_t out_chunk = std::min<std::size_t>(out.size() - produced, 1u << 30);
    zs.next_out = out.data() + produced;
    zs.avail_out = static_cast<uInt>(out_chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    consumed += in_chunk - zs.avail_in;
    produced += out_chunk - zs.avail_out;
    if (rc == Z_STREAM_END) {
      // concatenated gzip members
      if (consumed < in.size() && is_gzip(in.subspan(consumed))) {
        inflateReset(&zs);
        continue;
      }
      break;
    }
    if (rc != Z_OK && rc != Z_BUF_ERROR) {
      inflateEnd(&zs);
      throw FormatError("corrupt gzip stream");
    }
    if (rc == Z_BUF_ERROR && consumed == in.size() && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw FormatError("truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  out.resize(produced);
  return out;
}

inline std::vector<std::uint8_t> gzip(std::span<const std::uint8_t> in, int level = 1) {
  z_stream zs{};
  // 15 + 16: gzip wrapper
  if (deflateInit2(&zs, level, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw FormatError("deflateInit2 failed");
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())) + 64);
  zs.next_in = const_cast<Bytef *>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw FormatError("gzip compression failed");
  out.resize(zs.total_out);
  return out;
}

template <typename T>
T load_scalar(const std::uint8_t *p, bool swap) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), p, sizeof(T));
  if (swap) std::reverse(raw.begin(), raw.end());
  T v;
  std::memcpy(&v, raw.data(), sizeof(T));
  return v;
}

template <typename T>
void store_le(std::vector<std::uint8_t> &out, T v) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  out.insert(out.end(), raw.begin(), raw.end());
}

constexpr bool host_is_little = std::endian::native == std::endian::little;

template <typename T>
void binarize_payload(const std::uint8_t *src, std::size_t n, bool swap, double threshold,
                      std::vector<std::uint8_t> &dst) {
  dst.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T v = load_scalar<T>(src + i * sizeof(T), swap);
    dst[i] = static_cast<double>(v) > threshold ? 1 : 0;
  }
}

}  // namespace detail

struct NiftiHeaderInfo {
  Dims dims;
  Spacing spacing;
  int datatype = 0;
  int bitpix = 0;
  std::size_t vox_offset = 0;
  bool swapped = false;
  bool single_file = true;
};

inline int nifti_bytes_per_voxel(int datatype) {
  switch (datatype) {
    case 2: return 1;
    case 4: return 2;
    case 8: return 4;
    case 16: return 4;
    case 64: return 8;
    default: return 0;
  }
}

inline NiftiHeaderInfo parse_nifti_header(std::span<const std::uint8_t> hdr) {
  if (hdr.size() < 348) throw FormatError("NIfTI header truncated (< 348 bytes)");
  const auto *p = hdr.data();
  NiftiHeaderInfo info;
  const auto sz_native = detail::load_scalar<std::int32_t>(p, !detail::host_is_little);
  if (sz_native == 348) {
    info.swapped = !detail::host_is_little;
  } else if (detail::load_scalar<std::int32_t>(p, detail::host_is_little) == 348) {
    info.swapped = detail::host_is_little;
  } else {
    throw FormatError("not a NIfTI-1 header: sizeof_hdr != 348");
  }
  const bool sw = info.swapped;
  const char *magic = reinterpret_cast<const char *>(p + 344);
  if (std::memcmp(magic, "n+1\0", 4) == 0) {
    info.single_file = true;
  } else if (std::memcmp(magic, "ni1\0", 4) == 0) {
    info.single_file = false;
  } else {
    throw FormatError("bad NIfTI magic (expected \"n+1\" or \"ni1\")");
  }

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = detail::load_scalar<std::int16_t>(p + 40 + 2 * i, sw);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError("NIfTI dim[0] out of range");
  for (int i = 1; i <= dim[0]; ++i)
    if (dim[i] < 1) throw FormatError("NIfTI dim[" + std::to_string(i) + "] must be positive");
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] != 1) throw FormatError("only 3-D volumes are supported (dim[" + std::to_string(i) + "] > 1)");
  auto extent = [&](int i) -> std::size_t { return i <= dim[0] ? static_cast<std::size_t>(dim[i]) : 1; };
  info.dims = {extent(1), extent(2), extent(3)};

  info.datatype = detail::load_scalar<std::int16_t>(p + 70, sw);
  info.bitpix = detail::load_scalar<std::int16_t>(p + 72, sw);
  const int bpv = nifti_bytes_per_voxel(info.datatype);
  if (bpv == 0) throw FormatError("unsupported NIfTI datatype code " + std::to_string(info.datatype));
  if (info.bitpix != 8 * bpv) throw FormatError("NIfTI bitpix does not match datatype");

  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = detail::load_scalar<float>(p + 76 + 4 * i, sw);
  auto pd = [&](int i) -> double {
    // Axes beyond dim[0] are singleton; a zero pixdim there is common and harmless.
    if (i > dim[0] && !(pixdim[i] > 0)) return 1.0;
    return pixdim[i];
  };
  info.spacing = {pd(1), pd(2), pd(3)};
  if (!info.spacing.valid()) throw FormatError("non-positive NIfTI pixdim");

  const float off = detail::load_scalar<float>(p + 108, sw);
  if (!(off >= 0) || !std::isfinite(off)) throw FormatError("invalid vox_offset");
  info.vox_offset = static_cast<std::size_t>(off);
  if (info.single_file && info.vox_offset < 348) throw FormatError("vox_offset inside header");
  return info;
}

inline VoxelMask decode_nifti_payload(const NiftiHeaderInfo &info, std::span<const std::uint8_t> payload,
                                      double threshold) {
  const std::size_t n = info.dims.count();
  const std::size_t bpv = static_cast<std::size_t>(nifti_bytes_per_voxel(info.datatype));
  if (payload.size() != n * bpv) {
    throw FormatError("payload size mismatch: header implies " + std::to_string(n * bpv) +
                      " bytes, found " + std::to_string(payload.size()));
  }
  std::vector<std::uint8_t> data;
  const auto *src = payload.data();
  switch (info.datatype) {
    case 2: detail::binarize_payload<std::uint8_t>(src, n, false, threshold, data); break;
    case 4: detail::binarize_payload<std::int16_t>(src, n, info.swapped, threshold, data); break;
    case 8: detail::binarize_payload<std::int32_t>(src, n, info.swapped, threshold, data); break;
    case 16: detail::binarize_payload<float>(src, n, info.swapped, threshold, data); break;
    case 64: detail::binarize_payload<double>(src, n, info.swapped, threshold, data); break;
    default: throw FormatError("unsupported NIfTI datatype");
  }
  return VoxelMask(info.dims, info.spacing, std::move(data));
}

inline VoxelMask decode_tbm(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t header = 4 + 3 * 4 + 3 * 4;
  if (bytes.size() < header || std::memcmp(bytes.data(), "TBM1", 4) != 0)
    throw FormatError("not a TBM1 file");
  const bool sw = !detail::host_is_little;
  Dims d{detail::load_scalar<std::uint32_t>(bytes.data() + 4, sw),
         detail::load_scalar<std::uint32_t>(bytes.data() + 8, sw),
         detail::load_scalar<std::uint32_t>(bytes.data() + 12, sw)};
  Spacing s{detail::load_scalar<float>(bytes.data() + 16, sw), detail::load_scalar<float>(bytes.data() + 20, sw),
            detail::load_scalar<float>(bytes.data() + 24, sw)};
  if (d.nx == 0 || d.ny == 0 || d.nz == 0) throw FormatError("TBM dims must be positive");
  if (!s.valid()) throw FormatError("non-positive TBM spacing");
  if (bytes.size() - header != d.count())
    throw FormatError("TBM payload size mismatch: expected " + std::to_string(d.count()) + " bytes, found " +
                      std::to_string(bytes.size() - header));
  std::vector<std::uint8_t> data(bytes.begin() + header, bytes.end());
  for (auto v : data)
    if (v > 1) throw FormatError("TBM payload must contain only 0 and 1");
  return VoxelMask(d, s, std::move(data));
}

inline std::vector<std::uint8_t> encode_tbm(const VoxelMask &m) {
  std::vector<std::uint8_t> out{'T', 'B', 'M', '1'};
  out.reserve(28 + m.total_voxels());
  detail::store_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dims().nx));
  detail::store_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dims().ny));
  detail::store_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dims().nz));
  detail::store_le<float>(out, static_cast<float>(m.spacing().dx));
  detail::store_le<float>(out, static_cast<float>(m.spacing().dy));
  detail::store_le<float>(out, static_cast<float>(m.spacing().dz));
  out.insert(out.end(), m.data().begin(), m.data().end());
  return out;
}

// Single-file NIfTI-1, uint8 payload at offset 352, no extensions.
inline std::vector<std::uint8_t> encode_nifti(const VoxelMask &m) {
  if (m.dims().nx > 32767 || m.dims().ny > 32767 || m.dims().nz > 32767)
    throw FormatError("dimension exceeds NIfTI-1 int16 range");
  std::vector<std::uint8_t> out(352, 0);
  auto put = [&](std::size_t off, auto v) {
    std::vector<std::uint8_t> tmp;
    detail::store_le(tmp, v);
    std::copy(tmp.begin(), tmp.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
  };
  put(0, std::int32_t{348});
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(m.dims().nx),
                                        static_cast<std::int16_t>(m.dims().ny),
                                        static_cast<std::int16_t>(m.dims().nz), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put(40 + 2 * i, dim[i]);
  put(70, std::int16_t{2});
  put(72, std::int16_t{8});
  const std::array<float, 8> pixdim{1.0f, static_cast<float>(m.spacing().dx), static_cast<float>(m.spacing().dy),
                                    static_cast<float>(m.spacing().dz), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put(76 + 4 * i, pixdim[i]);
  put(108, 352.0f);
  put(112, 1.0f);  // scl_slope
  put(123, std::uint8_t{2 | 8});  // xyzt_units: mm, s
  std::memcpy(out.data() + 344, "n+1\0", 4);
  out.insert(out.end(), m.data().begin(), m.data().end());
  return out;
}

enum class MaskFormat { nifti, nifti_gz, tbm, tbm_gz };

inline MaskFormat format_from_path(const std::filesystem::path &path) {
  const auto name = path.filename().string();
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".nii.gz")) return MaskFormat::nifti_gz;
  if (ends_with(".nii")) return MaskFormat::nifti;
  if (ends_with(".tbm.gz")) return MaskFormat::tbm_gz;
  if (ends_with(".tbm")) return MaskFormat::tbm;
  throw FormatError("cannot infer mask format from file name: " + name);
}

// Strips .nii.gz / .nii / .tbm(.gz) / .hdr to get the case identifier.
inline std::string mask_stem(const std::filesystem::path &path) {
  std::string name = path.filename().string();
  for (std::string_view suffix : {".nii.gz", ".tbm.gz", ".nii", ".tbm", ".hdr"}) {
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      return name.substr(0, name.size() - suffix.size());
  }
  return path.stem().string();
}

// Decodes file contents already read from `path`; the path is only used to
// locate a separate .img payload and for error messages.
inline VoxelMask decode_mask(std::vector<std::uint8_t> bytes, const std::filesystem::path &path,
                             double binarize_threshold = 0.0) {
  try {
    if (detail::is_gzip(bytes)) bytes = detail::gunzip(bytes);
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "TBM1", 4) == 0) {
      auto m = decode_tbm(bytes);
      if (binarize_threshold >= 1.0) return VoxelMask(m.dims(), m.spacing());
      if (binarize_threshold < 0.0) {
        return VoxelMask(m.dims(), m.spacing(), std::vector<std::uint8_t>(m.total_voxels(), 1));
      }
      return m;
    }
    const auto info = parse_nifti_header(bytes);
    if (info.single_file) {
      if (bytes.size() < info.vox_offset) throw FormatError("file shorter than vox_offset");
      return decode_nifti_payload(info, std::span(bytes).subspan(info.vox_offset), binarize_threshold);
    }
    auto img_path = path;
    img_path.replace_extension(".img");
    auto img = detail::read_file(img_path);
    if (detail::is_gzip(img)) img = detail::gunzip(img);
    if (img.size() < info.vox_offset) throw FormatError("image file shorter than vox_offset");
    return decode_nifti_payload(info, std::span(img).subspan(info.vox_offset), binarize_threshold);
  } catch (const DataError &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline VoxelMask load_mask(const std::filesystem::path &path, double binarize_threshold = 0.0) {
  return decode_mask(detail::read_file(path), path, binarize_threshold);
}

inline void save_mask(const VoxelMask &m, const std::filesystem::path &path) {
  switch (format_from_path(path)) {
    case MaskFormat::nifti: detail::write_file(path, encode_nifti(m)); break;
    case MaskFormat::nifti_gz: detail::write_file(path, detail::gzip(encode_nifti(m))); break;
    case MaskFormat::tbm: detail::write_file(path, encode_tbm(m)); break;
    case MaskFormat::tbm_gz: detail::write_file(path, detail::gzip(encode_tbm(m))); break;
  }
}

}  // namespace treebench

#endif
