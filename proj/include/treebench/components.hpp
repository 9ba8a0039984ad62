/*
 * 26-connected component labeling and largest-component extraction.
 *
 * Labels are assigned in first-encounter order of an x-fastest raster scan,
 * so label 1 always owns the foreground voxel with the smallest linear index.
 * Each component is flood-filled with an explicit queue; no recursion.
 */
#ifndef TREEBENCH_COMPONENTS_HPP
#define TREEBENCH_COMPONENTS_HPP

#include <treebench/volume.hpp>

#include <array>
#include <cstdint>
#include <vector>

namespace treebench {

struct ComponentLabeling {
  Dims dims;
  std::vector<std::uint32_t> labels;          // 0 = background
  std::vector<std::uint64_t> component_sizes;  // component_sizes[k] is the size of label k+1
  std::size_t count() const { return component_sizes.size(); }
};

namespace detail {

// Visits every 26-neighbor of voxel idx that lies inside the grid.
template <typename Fn>
inline void for_each_neighbor26(const Dims &d, std::size_t idx, Fn &&fn) {
  const std::int64_t nx = static_cast<std::int64_t>(d.nx), ny = static_cast<std::int64_t>(d.ny),
                     nz = static_cast<std::int64_t>(d.nz);
  const std::int64_t x = static_cast<std::int64_t>(idx % d.nx);
  const std::int64_t yz = static_cast<std::int64_t>(idx / d.nx);
  const std::int64_t y = yz % ny, z = yz / ny;
  for (std::int64_t dz = -1; dz <= 1; ++dz) {
    const std::int64_t zz = z + dz;
    if (zz < 0 || zz >= nz) continue;
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      const std::int64_t yy = y + dy;
      if (yy < 0 || yy >= ny) continue;
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        const std::int64_t xx = x + dx;
        if (xx < 0 || xx >= nx) continue;
        if (dx == 0 && dy == 0 && dz == 0) continue;
        fn(static_cast<std::size_t>(xx + nx * (yy + ny * zz)));
      }
    }
  }
}

// Flood fill from seed, writing `label` into `labels` for every reached voxel.
// Interior voxels take a fast path with precomputed offsets.
inline std::uint64_t flood_fill26(const VoxelMask &mask, std::size_t seed, std::uint32_t label,
                                  std::vector<std::uint32_t> &labels, std::vector<std::size_t> &queue) {
  const auto &d = mask.dims();
  const auto data = mask.data();
  const std::int64_t sx = 1, sy = static_cast<std::int64_t>(d.nx), sz = static_cast<std::int64_t>(d.nx * d.ny);
  std::array<std::int64_t, 26> offsets{};
  {
    int k = 0;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (dx || dy || dz) offsets[k++] = dx * sx + dy * sy + dz * sz;
  }
  queue.clear();
  queue.push_back(seed);
  labels[seed] = label;
  std::uint64_t size = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::size_t v = queue[head];
    ++size;
    const std::size_t x = v % d.nx, y = (v / d.nx) % d.ny, z = v / (d.nx * d.ny);
    const bool interior = x > 0 && y > 0 && z > 0 && x + 1 < d.nx && y + 1 < d.ny && z + 1 < d.nz;
    if (interior) {
      for (auto off : offsets) {
        const auto u = static_cast<std::size_t>(static_cast<std::int64_t>(v) + off);
        if (data[u] && labels[u] == 0) {
          labels[u] = label;
          queue.push_back(u);
        }
      }
    } else {
      for_each_neighbor26(d, v, [&](std::size_t u) {
        if (data[u] && labels[u] == 0) {
          labels[u] = label;
          queue.push_back(u);
        }
      });
    }
  }
  return size;
}

}  // namespace detail

inline ComponentLabeling label_components(const VoxelMask &mask) {
  ComponentLabeling out;
  out.dims = mask.dims();
  out.labels.assign(mask.total_voxels(), 0);
  const auto data = mask.data();
  std::vector<std::size_t> queue;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i] || out.labels[i] != 0) continue;
    const auto label = static_cast<std::uint32_t>(out.component_sizes.size() + 1);
    out.component_sizes.push_back(detail::flood_fill26(mask, i, label, out.labels, queue));
  }
  return out;
}

inline std::size_t component_count(const VoxelMask &mask) { return label_components(mask).count(); }

// Keeps the component with the most voxels. Ties go to the component holding
// the smallest linear index, which is the lowest label by construction.
inline VoxelMask largest_component(const VoxelMask &mask) {
  const auto lab = label_components(mask);
  if (lab.count() == 0) return VoxelMask(mask.dims(), mask.spacing());
  std::uint32_t best = 1;
  for (std::uint32_t k = 2; k <= lab.count(); ++k)
    if (lab.component_sizes[k - 1] > lab.component_sizes[best - 1]) best = k;
  std::vector<std::uint8_t> keep(mask.total_voxels(), 0);
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = lab.labels[i] == best ? 1 : 0;
  return VoxelMask(mask.dims(), mask.spacing(), std::move(keep));
}

}  // namespace treebench

#endif
