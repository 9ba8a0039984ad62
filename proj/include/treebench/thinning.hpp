/*
 * 3-D medial-axis thinning after Lee, Kashyap & Chu (1994).
 *
 * Foreground is 26-connected, background 6-connected. Each iteration sweeps
 * the six face directions in a fixed order (U, D, N, S, E, W). For the
 * current direction:
 *
 *   1. collect every foreground voxel whose face-neighbor in that direction
 *      is background, that is not an end point (exactly one 26-neighbor),
 *      that is Euler invariant and whose 26-neighborhood stays connected
 *      without it;
 *   2. revisit the collected voxels in scan order and delete each one that
 *      still passes all three tests against the partially thinned image.
 *
 * Thinning stops after a full sweep with no deletion. Step 2 re-tests the
 * Euler condition and the end-point guard as well as connectivity, so every
 * individual deletion removes a simple point of the current image.
 *
 * Step 1 is read-only and may be split across worker threads; the candidate
 * list is concatenated in scan order, so output does not depend on the
 * worker count.
 *
 * Direction convention: U = +z, D = -z, N = -y, S = +y, E = +x, W = -x.
 *
 * Neighborhood bit k of a 27-bit word is the voxel at
 * (dx, dy, dz) = (k % 3 - 1, k / 3 % 3 - 1, k / 9 - 1); bit 13 is the center.
 */
#ifndef TREEBENCH_THINNING_HPP
#define TREEBENCH_THINNING_HPP

#include <treebench/volume.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <thread>
#include <vector>

namespace treebench {

enum class Face : std::uint8_t { up, down, north, south, east, west };

inline constexpr std::array<Face, 6> kDefaultFaceOrder{Face::up, Face::down, Face::north,
                                                      Face::south, Face::east, Face::west};

struct ThinningOptions {
  std::array<Face, 6> order = kDefaultFaceOrder;
  unsigned threads = 1;
};

namespace lee {

inline constexpr int kCenter = 13;
inline constexpr std::uint32_t kCenterBit = 1u << kCenter;

// Change in Euler characteristic contributed by one 2x2x2 octant, indexed
// by the octant's occupancy with the center voxel always set (bit 0).
inline constexpr std::array<std::int8_t, 256> kEulerLut{
    0, 1,  0, -1, 0, -1, 0, 1,  0, -3, 0, -1, 0, -1, 0, 1,  0, -1, 0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, 1,  0, -1,
    0, -3, 0, -1, 0, 3,  0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, -1, 0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, 1,  0, -1,
    0, -3, 0, 3,  0, -1, 0, 1,  0, 1,  0, 3,  0, -1, 0, 1,  0, -1, 0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, 1,  0, -1,
    0, 1,  0, 3,  0, 3,  0, 1,  0, 5,  0, 3,  0, 3,  0, 1,  0, -1, 0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, 1,  0, -1,
    0, -7, 0, -1, 0, -1, 0, 1,  0, -3, 0, -1, 0, -1, 0, 1,  0, -1, 0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, 1,  0, -1,
    0, -3, 0, -1, 0, 3,  0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, -1, 0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, 1,  0, -1,
    0, -3, 0, 3,  0, -1, 0, 1,  0, 1,  0, 3,  0, -1, 0, 1,  0, -1, 0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, 1,  0, -1,
    0, 1,  0, 3,  0, 3,  0, 1,  0, 5,  0, 3,  0, 3,  0, 1,  0, -1, 0, 1,  0, 1,  0, -1, 0, 3,  0, 1,  0, 1,  0, -1};

struct OctantBit {
  std::uint8_t cell;
  std::uint8_t weight;
};

// The seven non-center cells of each octant and their LUT bit weights.
inline constexpr std::array<std::array<OctantBit, 7>, 8> kOctants{{
    {{{24, 128}, {25, 64}, {15, 32}, {16, 16}, {21, 8}, {22, 4}, {12, 2}}},  // SWU
    {{{26, 128}, {23, 64}, {17, 32}, {14, 16}, {25, 8}, {22, 4}, {16, 2}}},  // SEU
    {{{18, 128}, {21, 64}, {9, 32}, {12, 16}, {19, 8}, {22, 4}, {10, 2}}},   // NWU
    {{{20, 128}, {23, 64}, {19, 32}, {22, 16}, {11, 8}, {14, 4}, {10, 2}}},  // NEU
    {{{6, 128}, {15, 64}, {7, 32}, {16, 16}, {3, 8}, {12, 4}, {4, 2}}},      // SWB
    {{{8, 128}, {7, 64}, {17, 32}, {16, 16}, {5, 8}, {4, 4}, {14, 2}}},      // SEB
    {{{0, 128}, {9, 64}, {3, 32}, {12, 16}, {1, 8}, {10, 4}, {4, 2}}},       // NWB
    {{{2, 128}, {1, 64}, {11, 32}, {10, 16}, {5, 8}, {4, 4}, {14, 2}}},      // NEB
}};

// adjacency[k]: cells of the 3x3x3 block (center excluded) 26-adjacent to cell k.
inline constexpr std::array<std::uint32_t, 27> kAdjacency = [] {
  std::array<std::uint32_t, 27> adj{};
  for (int a = 0; a < 27; ++a) {
    for (int b = 0; b < 27; ++b) {
      if (a == b || b == kCenter) continue;
      const int ddx = a % 3 - b % 3, ddy = a / 3 % 3 - b / 3 % 3, ddz = a / 9 - b / 9;
      if (ddx >= -1 && ddx <= 1 && ddy >= -1 && ddy <= 1 && ddz >= -1 && ddz <= 1) adj[a] |= 1u << b;
    }
  }
  return adj;
}();

inline bool is_end_point(std::uint32_t nb) { return std::popcount(nb & ~kCenterBit) == 1; }

inline bool is_euler_invariant(std::uint32_t nb) {
  int euler = 0;
  for (const auto &oct : kOctants) {
    unsigned idx = 1;
    for (const auto &b : oct)
      if (nb & (1u << b.cell)) idx |= b.weight;
    euler += kEulerLut[idx];
  }
  return euler == 0;
}

// True when the foreground of the punctured neighborhood is one
// 26-connected piece (the point's removal does not split anything locally).
inline bool is_locally_connected(std::uint32_t nb) {
  const std::uint32_t fg = nb & ~kCenterBit & ((1u << 27) - 1);
  if (fg == 0) return false;
  std::uint32_t reached = fg & (~fg + 1);
  std::uint32_t frontier = reached;
  while (frontier) {
    std::uint32_t next = 0;
    for (std::uint32_t f = frontier; f; f &= f - 1) next |= kAdjacency[std::countr_zero(f)];
    next &= fg & ~reached;
    reached |= next;
    frontier = next;
  }
  return reached == fg;
}

inline bool is_deletable(std::uint32_t nb) {
  return !is_end_point(nb) && is_euler_invariant(nb) && is_locally_connected(nb);
}

}  // namespace lee

namespace detail {

// Zero-padded copy of a mask so neighborhood reads never leave the buffer.
struct PaddedGrid {
  std::size_t px = 0, py = 0, pz = 0;
  std::vector<std::uint8_t> cells;
  std::array<std::int64_t, 27> offsets{};

  explicit PaddedGrid(const VoxelMask &m)
      : px(m.dims().nx + 2), py(m.dims().ny + 2), pz(m.dims().nz + 2), cells(px * py * pz, 0) {
    const auto &d = m.dims();
    const auto data = m.data();
    for (std::size_t z = 0; z < d.nz; ++z)
      for (std::size_t y = 0; y < d.ny; ++y) {
        const auto *src = data.data() + d.nx * (y + d.ny * z);
        std::copy(src, src + d.nx, cells.begin() + static_cast<std::ptrdiff_t>(padded(0, y, z)));
      }
    int k = 0;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          offsets[k++] = dx + static_cast<std::int64_t>(px) * (dy + static_cast<std::int64_t>(py) * dz);
  }

  std::size_t padded(std::size_t x, std::size_t y, std::size_t z) const {
    return (x + 1) + px * ((y + 1) + py * (z + 1));
  }

  std::uint32_t neighborhood(std::size_t p) const {
    std::uint32_t nb = 0;
    for (int k = 0; k < 27; ++k)
      nb |= static_cast<std::uint32_t>(cells[static_cast<std::size_t>(static_cast<std::int64_t>(p) + offsets[k])])
            << k;
    return nb;
  }

  std::int64_t face_offset(Face f) const {
    const auto sx = std::int64_t{1}, sy = static_cast<std::int64_t>(px), sz = static_cast<std::int64_t>(px * py);
    switch (f) {
      case Face::up: return sz;
      case Face::down: return -sz;
      case Face::north: return -sy;
      case Face::south: return sy;
      case Face::east: return sx;
      case Face::west: return -sx;
    }
    return 0;
  }

  VoxelMask unpad(const Dims &d, const Spacing &s) const {
    std::vector<std::uint8_t> out(d.count());
    for (std::size_t z = 0; z < d.nz; ++z)
      for (std::size_t y = 0; y < d.ny; ++y) {
        const auto begin = cells.begin() + static_cast<std::ptrdiff_t>(padded(0, y, z));
        std::copy(begin, begin + static_cast<std::ptrdiff_t>(d.nx),
                  out.begin() + static_cast<std::ptrdiff_t>(d.nx * (y + d.ny * z)));
      }
    return VoxelMask(d, s, std::move(out));
  }
};

inline void collect_candidates(const PaddedGrid &g, std::span<const std::size_t> fg, std::int64_t face,
                               std::vector<std::size_t> &out) {
  for (const auto p : fg) {
    if (g.cells[static_cast<std::size_t>(static_cast<std::int64_t>(p) + face)]) continue;
    if (lee::is_deletable(g.neighborhood(p))) out.push_back(p);
  }
}

}  // namespace detail

inline VoxelMask thin(const VoxelMask &mask, const ThinningOptions &opt = {}) {
  detail::PaddedGrid g(mask);
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < g.cells.size(); ++i)
    if (g.cells[i]) fg.push_back(i);

  const unsigned workers = std::max(1u, opt.threads);
  std::vector<std::vector<std::size_t>> partial(workers);
  std::vector<std::size_t> candidates;

  int unchanged = 0;
  while (unchanged < 6) {
    unchanged = 0;
    for (const Face face : opt.order) {
      const auto off = g.face_offset(face);
      candidates.clear();
      if (workers == 1 || fg.size() < 4096) {
        detail::collect_candidates(g, fg, off, candidates);
      } else {
        const std::size_t chunk = (fg.size() + workers - 1) / workers;
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
          partial[w].clear();
          const std::size_t lo = std::min(fg.size(), w * chunk), hi = std::min(fg.size(), lo + chunk);
          pool.emplace_back([&, w, lo, hi] {
            detail::collect_candidates(g, std::span(fg).subspan(lo, hi - lo), off, partial[w]);
          });
        }
        pool.clear();
        for (const auto &part : partial) candidates.insert(candidates.end(), part.begin(), part.end());
      }

      bool changed = false;
      for (const auto p : candidates) {
        if (lee::is_deletable(g.neighborhood(p))) {
          g.cells[p] = 0;
          changed = true;
        }
      }
      if (changed) {
        std::erase_if(fg, [&](std::size_t p) { return g.cells[p] == 0; });
      } else {
        ++unchanged;
      }
    }
  }
  return g.unpad(mask.dims(), mask.spacing());
}

}  // namespace treebench

#endif
