/*
 * Binary voxel masks with physical spacing, plus the voxel-overlap
 * confusion counts every downstream metric is built from.
 *
 * Storage is dense, one byte per voxel, x-fastest (index = x + nx*(y + ny*z)).
 * A VoxelMask is a value type; once built it is never mutated by the
 * library, so sharing a const reference across workers is safe.
 */
#ifndef TREEBENCH_VOLUME_HPP
#define TREEBENCH_VOLUME_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace treebench {

class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public DataError {
public:
  using DataError::DataError;
};

struct Spacing {
  double dx = 1.0;
  double dy = 1.0;
  double dz = 1.0;

  bool valid() const {
    return std::isfinite(dx) && std::isfinite(dy) && std::isfinite(dz) &&
           dx > 0 && dy > 0 && dz > 0;
  }

  bool operator==(const Spacing &) const = default;
};

// True when every axis differs by less than tol_mm. A difference written as
// exactly tol_mm (0.5 vs 0.5001) counts as a mismatch, hence the small slack
// for decimal-to-binary rounding.
inline bool spacing_close(const Spacing &a, const Spacing &b, double tol_mm = 1e-4) {
  const double limit = tol_mm * (1.0 - 1e-9);
  return std::abs(a.dx - b.dx) < limit && std::abs(a.dy - b.dy) < limit && std::abs(a.dz - b.dz) < limit;
}

struct Dims {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;

  std::size_t count() const { return nx * ny * nz; }
  bool operator==(const Dims &) const = default;
};

struct Voxel {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  bool operator==(const Voxel &) const = default;
};

class VoxelMask {
public:
  VoxelMask() = default;

  VoxelMask(Dims dims, Spacing spacing)
      : dims_(dims), spacing_(spacing), data_(dims.count(), 0) {
    validate();
  }

  // Any nonzero byte is foreground; stored values are normalized to {0,1}.
  VoxelMask(Dims dims, Spacing spacing, std::vector<std::uint8_t> data)
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    if (data_.size() != dims_.count()) {
      throw DataError("voxel payload has " + std::to_string(data_.size()) +
                      " elements, dims require " + std::to_string(dims_.count()));
    }
    for (auto &v : data_) v = v ? 1 : 0;
    validate();
  }

  const Dims &dims() const { return dims_; }
  const Spacing &spacing() const { return spacing_; }
  std::size_t total_voxels() const { return data_.size(); }
  std::span<const std::uint8_t> data() const { return data_; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.nx * (y + dims_.ny * z);
  }

  Voxel coord(std::size_t idx) const {
    const auto x = idx % dims_.nx;
    const auto yz = idx / dims_.nx;
    return {static_cast<std::int64_t>(x), static_cast<std::int64_t>(yz % dims_.ny),
            static_cast<std::int64_t>(yz / dims_.ny)};
  }

  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < static_cast<std::int64_t>(dims_.nx) &&
           y < static_cast<std::int64_t>(dims_.ny) && z < static_cast<std::int64_t>(dims_.nz);
  }

  bool operator[](std::size_t idx) const { return data_[idx] != 0; }

  bool at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return contains(x, y, z) && data_[index(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                                             static_cast<std::size_t>(z))] != 0;
  }

  void set(std::size_t idx, bool on) { data_[idx] = on ? 1 : 0; }
  void set(std::size_t x, std::size_t y, std::size_t z, bool on) { set(index(x, y, z), on); }

  std::size_t foreground_count() const {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
  }

  std::vector<std::size_t> foreground_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (data_[i]) out.push_back(i);
    return out;
  }

  VoxelMask with_spacing(Spacing s) const {
    VoxelMask m = *this;
    m.spacing_ = s;
    m.validate();
    return m;
  }

  bool operator==(const VoxelMask &o) const {
    return dims_ == o.dims_ && spacing_ == o.spacing_ && data_ == o.data_;
  }

private:
  void validate() const {
    if (dims_.nx == 0 || dims_.ny == 0 || dims_.nz == 0)
      throw DataError("mask dimensions must be positive");
    if (!spacing_.valid())
      throw DataError("voxel spacing must be positive and finite");
  }

  Dims dims_;
  Spacing spacing_;
  std::vector<std::uint8_t> data_;
};

// Euclidean length of one voxel step under the given spacing.
inline double step_length(const Voxel &a, const Voxel &b, const Spacing &s) {
  const double ex = static_cast<double>(a.x - b.x) * s.dx;
  const double ey = static_cast<double>(a.y - b.y) * s.dy;
  const double ez = static_cast<double>(a.z - b.z) * s.dz;
  return std::sqrt(ex * ex + ey * ey + ez * ez);
}

struct ShapeReport {
  bool spacing_mismatch = false;
  Spacing spacing;  // taken from the ground truth
  std::string warning;
};

// Dims must match exactly. Spacing disagreement of 1e-4 mm or more is only a
// warning; the ground-truth spacing wins.
inline ShapeReport shape_check(const VoxelMask &pred, const VoxelMask &gt) {
  const auto &a = pred.dims();
  const auto &b = gt.dims();
  if (!(a == b)) {
    throw ShapeMismatch("dimension mismatch: prediction " + std::to_string(a.nx) + "x" +
                        std::to_string(a.ny) + "x" + std::to_string(a.nz) + " vs ground truth " +
                        std::to_string(b.nx) + "x" + std::to_string(b.ny) + "x" +
                        std::to_string(b.nz));
  }
  ShapeReport r;
  r.spacing = gt.spacing();
  if (!spacing_close(pred.spacing(), gt.spacing())) {
    r.spacing_mismatch = true;
    r.warning = "spacing differs by 1e-4 mm or more; using ground-truth spacing";
  }
  return r;
}

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts &) const = default;
};

inline ConfusionCounts confusion(const VoxelMask &pred, const VoxelMask &gt) {
  shape_check(pred, gt);
  const auto p = pred.data();
  const auto g = gt.data();
  // Counted as sums so the loop stays branch-free.
  std::uint64_t n_pred = 0, n_gt = 0, both = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    n_pred += p[i];
    n_gt += g[i];
    both += p[i] & g[i];
  }
  ConfusionCounts c;
  c.tp = both;
  c.fp = n_pred - both;
  c.fn = n_gt - both;
  c.tn = static_cast<std::uint64_t>(p.size()) - (n_pred + n_gt - both);
  return c;
}

}  // namespace treebench

#endif
