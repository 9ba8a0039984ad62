/*
 * Synthetic bifurcating tube trees with exact centerline ground truth.
 *
 * Geometry lives in voxel-index space. The root starts near the bottom of
 * the grid and grows along +z; every branch splits into two children whose
 * directions open by branching_angle_deg, in a plane rotated 90 degrees
 * about the parent axis at each generation. Each branch is rasterized as a
 * capsule: every voxel whose center lies within the branch radius of the
 * straight centerline segment.
 */
#ifndef TREEBENCH_PHANTOM_HPP
#define TREEBENCH_PHANTOM_HPP

#include <treebench/components.hpp>
#include <treebench/volume.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace treebench {

class PhantomError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using Vec3 = std::array<double, 3>;

struct PhantomSpec {
  int depth = 2;
  double root_radius_vox = 2.0;
  double radius_decay = 0.8;
  std::vector<double> segment_length_vox{40.0, 32.0, 26.0, 20.0, 16.0};  // last value repeats for deeper generations
  double branching_angle_deg = 70.0;
  Dims dims{160, 160, 160};
  Spacing spacing{1.0, 1.0, 1.0};
  std::uint64_t rng_seed = 0;
  double jitter = 0.0;  // relative length/angle perturbation in [0, 0.5]

  std::size_t branch_count() const { return (std::size_t{1} << (depth + 1)) - 1; }
};

struct PhantomBranch {
  std::size_t id = 0;
  int parent = -1;
  int generation = 0;
  Vec3 start{};
  Vec3 end{};
  double radius_vox = 1.0;
  double length_mm = 0.0;
  std::vector<Voxel> centerline;  // ordered start to end; the junction voxel belongs to the parent
  std::vector<std::size_t> children;
};

struct PhantomTruth {
  PhantomSpec spec;
  VoxelMask mask;
  std::vector<PhantomBranch> branches;  // breadth-first; parents precede children
  std::vector<std::uint16_t> owner;     // 0 background, k+1 for branch k
  double total_length_mm = 0.0;

  // Ids of `id` and every descendant.
  std::vector<std::size_t> subtree(std::size_t id) const {
    if (id >= branches.size()) throw PhantomError("invalid branch id " + std::to_string(id));
    std::vector<std::size_t> out{id};
    for (std::size_t k = 0; k < out.size(); ++k)
      for (auto c : branches[out[k]].children) out.push_back(c);
    return out;
  }

  double length_of(const std::vector<std::size_t> &ids) const {
    double s = 0.0;
    for (auto i : ids) s += branches.at(i).length_mm;
    return s;
  }
};

namespace detail {

inline Vec3 add(Vec3 a, Vec3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 sub(Vec3 a, Vec3 b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 scale(Vec3 a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(Vec3 a, Vec3 b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline Vec3 normalized(Vec3 a) { return scale(a, 1.0 / std::sqrt(dot(a, a))); }

// Uniform double in [0, 1) from the top 53 bits; identical on every platform,
// unlike std::uniform_real_distribution.
inline double unit_double(std::mt19937_64 &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double segment_distance2(const Vec3 &p, const Vec3 &a, const Vec3 &b) {
  const Vec3 ab = sub(b, a);
  const double len2 = dot(ab, ab);
  double t = len2 > 0 ? dot(sub(p, a), ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec3 d = sub(p, add(a, scale(ab, t)));
  return dot(d, d);
}

inline std::int64_t round_half_up(double v) { return static_cast<std::int64_t>(std::floor(v + 0.5)); }

// 26-connected digital line between the voxels nearest to a and b.
inline std::vector<Voxel> digital_line(const Vec3 &a, const Vec3 &b) {
  const Voxel va{round_half_up(a[0]), round_half_up(a[1]), round_half_up(a[2])};
  const Voxel vb{round_half_up(b[0]), round_half_up(b[1]), round_half_up(b[2])};
  const std::array<std::int64_t, 3> delta{vb.x - va.x, vb.y - va.y, vb.z - va.z};
  const std::int64_t steps = std::max({std::abs(delta[0]), std::abs(delta[1]), std::abs(delta[2])});
  std::vector<Voxel> out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  for (std::int64_t s = 0; s <= steps; ++s) {
    const double t = steps == 0 ? 0.0 : static_cast<double>(s) / static_cast<double>(steps);
    out.push_back({round_half_up(a[0] + (b[0] - a[0]) * t), round_half_up(a[1] + (b[1] - a[1]) * t),
                   round_half_up(a[2] + (b[2] - a[2]) * t)});
  }
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Calls fn(linear index) for every voxel inside the capsule of branch b.
template <typename Fn>
inline void for_each_capsule_voxel(const Dims &d, const PhantomBranch &b, Fn &&fn) {
  const double r = b.radius_vox;
  const double r2 = r * r;
  std::array<std::int64_t, 3> lo{}, hi{};
  const std::array<std::int64_t, 3> n{static_cast<std::int64_t>(d.nx), static_cast<std::int64_t>(d.ny),
                                      static_cast<std::int64_t>(d.nz)};
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(b.start[k], b.end[k]) - r)));
    hi[k] = std::min<std::int64_t>(n[k] - 1, static_cast<std::int64_t>(std::ceil(std::max(b.start[k], b.end[k]) + r)));
  }
  for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
    for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
      for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
        const Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        if (segment_distance2(p, b.start, b.end) <= r2)
          fn(static_cast<std::size_t>(x + n[0] * (y + n[1] * z)));
      }
}

inline VoxelMask rasterize(const PhantomTruth &t, const std::vector<bool> &keep) {
  VoxelMask m(t.spec.dims, t.spec.spacing);
  for (std::size_t i = 0; i < t.branches.size(); ++i)
    if (keep[i]) for_each_capsule_voxel(m.dims(), t.branches[i], [&](std::size_t idx) { m.set(idx, true); });
  return m;
}

}  // namespace detail

inline PhantomTruth generate(const PhantomSpec &spec) {
  if (spec.depth < 0 || spec.depth > 10) throw PhantomError("phantom depth must be in [0, 10]");
  if (!spec.spacing.valid()) throw PhantomError("phantom spacing must be positive");
  if (spec.segment_length_vox.empty()) throw PhantomError("segment_length_vox is empty");
  for (double l : spec.segment_length_vox)
    if (!(l > 0)) throw PhantomError("segment lengths must be positive");
  if (!(spec.root_radius_vox >= 1.0)) throw PhantomError("root radius must be at least 1 voxel");
  if (!(spec.jitter >= 0.0 && spec.jitter <= 0.5)) throw PhantomError("jitter must be in [0, 0.5]");
  const double decay = std::clamp(spec.radius_decay, 0.0, 1.0);
  if (!(decay > 0)) throw PhantomError("radius_decay must be in (0, 1]");

  PhantomTruth t;
  t.spec = spec;
  std::mt19937_64 rng(spec.rng_seed);
  auto jitter = [&] { return spec.jitter == 0.0 ? 1.0 : 1.0 + spec.jitter * (2.0 * detail::unit_double(rng) - 1.0); };
  auto seg_len = [&](int g) {
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(g), spec.segment_length_vox.size() - 1);
    return spec.segment_length_vox[i] * jitter();
  };

  struct Frame {
    Vec3 dir, side;
  };
  std::vector<Frame> frames;

  PhantomBranch root;
  root.radius_vox = spec.root_radius_vox;
  root.start = {std::floor((static_cast<double>(spec.dims.nx) - 1) / 2), std::floor((static_cast<double>(spec.dims.ny) - 1) / 2),
                std::ceil(1.0 + root.radius_vox)};
  root.end = detail::add(root.start, {0.0, 0.0, seg_len(0)});
  t.branches.push_back(root);
  frames.push_back({{0, 0, 1}, {1, 0, 0}});

  const double half = spec.branching_angle_deg * M_PI / 360.0;
  for (std::size_t i = 0; i < t.branches.size(); ++i) {
    if (t.branches[i].generation == spec.depth) continue;
    const Frame f = frames[i];
    const Vec3 plane = detail::cross(f.dir, f.side);  // rotated 90 degrees from the parent's plane
    for (double sign : {-1.0, 1.0}) {
      const double h = half * jitter();
      PhantomBranch c;
      c.parent = static_cast<int>(i);
      c.generation = t.branches[i].generation + 1;
      c.radius_vox = std::max(1.0, t.branches[i].radius_vox * decay);
      const Vec3 dir = detail::normalized(detail::add(detail::scale(f.dir, std::cos(h)), detail::scale(plane, sign * std::sin(h))));
      c.start = t.branches[i].end;
      c.end = detail::add(c.start, detail::scale(dir, seg_len(c.generation)));
      c.id = t.branches.size();
      t.branches[i].children.push_back(c.id);
      t.branches.push_back(c);
      const Vec3 side = detail::normalized(detail::sub(plane, detail::scale(dir, detail::dot(plane, dir))));
      frames.push_back({dir, side});
    }
  }

  const std::array<double, 3> n{static_cast<double>(spec.dims.nx), static_cast<double>(spec.dims.ny),
                                static_cast<double>(spec.dims.nz)};
  for (auto &b : t.branches) {
    for (int k = 0; k < 3; ++k) {
      const double lo = std::min(b.start[k], b.end[k]) - b.radius_vox;
      const double hi = std::max(b.start[k], b.end[k]) + b.radius_vox;
      if (lo < 1.0 || hi > n[k] - 2.0)
        throw PhantomError("branch " + std::to_string(b.id) + " (generation " + std::to_string(b.generation) +
                           ") does not fit in the grid with a 1-voxel margin");
    }
    const Vec3 d = detail::sub(b.end, b.start);
    b.length_mm = std::sqrt(std::pow(d[0] * spec.spacing.dx, 2) + std::pow(d[1] * spec.spacing.dy, 2) +
                            std::pow(d[2] * spec.spacing.dz, 2));
    t.total_length_mm += b.length_mm;
    b.centerline = detail::digital_line(b.start, b.end);
    if (b.parent >= 0 && !b.centerline.empty() && b.centerline.front() == t.branches[b.parent].centerline.back())
      b.centerline.erase(b.centerline.begin());
  }

  t.mask = VoxelMask(spec.dims, spec.spacing);
  t.owner.assign(spec.dims.count(), 0);
  for (const auto &b : t.branches) {
    detail::for_each_capsule_voxel(spec.dims, b, [&](std::size_t idx) {
      if (t.owner[idx] == 0) t.owner[idx] = static_cast<std::uint16_t>(b.id + 1);
      t.mask.set(idx, true);
    });
  }
  return t;
}

enum class DegradeMode { erase_subtree, break_branch, dilate, noise_blob };

struct DegradeParams {
  std::size_t branch = 0;      // erase_subtree, break_branch
  std::size_t gap_vox = 3;     // break_branch
  std::size_t blob_voxels = 27;  // noise_blob
};

namespace detail {

inline VoxelMask dilate26(const VoxelMask &m) {
  VoxelMask out = m;
  for (auto idx : m.foreground_indices())
    for_each_neighbor26(m.dims(), idx, [&](std::size_t u) { out.set(u, true); });
  return out;
}

}  // namespace detail

inline VoxelMask degrade(const PhantomTruth &t, DegradeMode mode, const DegradeParams &p = {}) {
  switch (mode) {
    case DegradeMode::erase_subtree: {
      std::vector<bool> keep(t.branches.size(), true);
      for (auto i : t.subtree(p.branch)) keep[i] = false;
      return detail::rasterize(t, keep);
    }
    case DegradeMode::break_branch: {
      if (p.branch >= t.branches.size()) throw PhantomError("invalid branch id " + std::to_string(p.branch));
      const auto &b = t.branches[p.branch];
      const Vec3 axis = detail::sub(b.end, b.start);
      const double len = std::sqrt(detail::dot(axis, axis));
      const Vec3 u = detail::scale(axis, 1.0 / len);
      const double lo = len / 2 - static_cast<double>(p.gap_vox) / 2, hi = len / 2 + static_cast<double>(p.gap_vox) / 2;
      PhantomBranch slab = b;
      slab.radius_vox = b.radius_vox + 1.5;
      VoxelMask out = t.mask;
      detail::for_each_capsule_voxel(out.dims(), slab, [&](std::size_t idx) {
        const auto c = out.coord(idx);
        const Vec3 q{static_cast<double>(c.x), static_cast<double>(c.y), static_cast<double>(c.z)};
        const double s = detail::dot(detail::sub(q, b.start), u);
        if (s >= lo && s <= hi) out.set(idx, false);
      });
      return out;
    }
    case DegradeMode::dilate:
      return detail::dilate26(t.mask);
    case DegradeMode::noise_blob: {
      if (p.blob_voxels == 0) throw PhantomError("noise blob must have at least one voxel");
      if (p.blob_voxels >= t.mask.foreground_count())
        throw PhantomError("noise blob must be smaller than the tree");
      const auto side = static_cast<std::int64_t>(std::ceil(std::cbrt(static_cast<double>(p.blob_voxels)) - 1e-9));
      const auto &d = t.mask.dims();
      const auto nx = static_cast<std::int64_t>(d.nx), ny = static_cast<std::int64_t>(d.ny),
                 nz = static_cast<std::int64_t>(d.nz);
      // First box (scanning from the far corner) whose 1-voxel shell is clear.
      for (std::int64_t z0 = nz - side; z0 >= 0; --z0)
        for (std::int64_t y0 = ny - side; y0 >= 0; --y0)
          for (std::int64_t x0 = nx - side; x0 >= 0; --x0) {
            bool clear = true;
            for (std::int64_t z = std::max<std::int64_t>(0, z0 - 1); clear && z <= std::min(nz - 1, z0 + side); ++z)
              for (std::int64_t y = std::max<std::int64_t>(0, y0 - 1); clear && y <= std::min(ny - 1, y0 + side); ++y)
                for (std::int64_t x = std::max<std::int64_t>(0, x0 - 1); clear && x <= std::min(nx - 1, x0 + side); ++x)
                  if (t.mask.at(x, y, z)) clear = false;
            if (!clear) continue;
            VoxelMask out = t.mask;
            std::size_t placed = 0;
            for (std::int64_t z = z0; z < z0 + side && placed < p.blob_voxels; ++z)
              for (std::int64_t y = y0; y < y0 + side && placed < p.blob_voxels; ++y)
                for (std::int64_t x = x0; x < x0 + side && placed < p.blob_voxels; ++x, ++placed) out.set(x, y, z, true);
            return out;
          }
      throw PhantomError("no free region for a noise blob of " + std::to_string(p.blob_voxels) + " voxels");
    }
  }
  throw PhantomError("unknown degrade mode");
}

// Mask holding only the listed branches.
inline VoxelMask branches_only(const PhantomTruth &t, const std::vector<std::size_t> &ids) {
  std::vector<bool> keep(t.branches.size(), false);
  for (auto i : ids) keep.at(i) = true;
  return detail::rasterize(t, keep);
}

inline nlohmann::ordered_json truth_to_json(const PhantomTruth &t) {
  const auto &s = t.spec;
  nlohmann::ordered_json j;
  j["spec"] = {{"depth", s.depth},
               {"root_radius_vox", s.root_radius_vox},
               {"radius_decay", s.radius_decay},
               {"segment_length_vox", s.segment_length_vox},
               {"branching_angle_deg", s.branching_angle_deg},
               {"dims", {s.dims.nx, s.dims.ny, s.dims.nz}},
               {"spacing_mm", {s.spacing.dx, s.spacing.dy, s.spacing.dz}},
               {"rng_seed", s.rng_seed},
               {"jitter", s.jitter}};
  j["total_length_mm"] = t.total_length_mm;
  auto branches = nlohmann::ordered_json::array();
  for (const auto &b : t.branches) {
    nlohmann::ordered_json e;
    e["id"] = b.id;
    e["parent"] = b.parent;
    e["generation"] = b.generation;
    e["start"] = b.start;
    e["end"] = b.end;
    e["radius_vox"] = b.radius_vox;
    e["length_mm"] = b.length_mm;
    e["children"] = b.children;
    auto cl = nlohmann::ordered_json::array();
    for (const auto &v : b.centerline) cl.push_back({v.x, v.y, v.z});
    e["centerline"] = std::move(cl);
    branches.push_back(std::move(e));
  }
  j["branches"] = std::move(branches);
  return j;
}

}  // namespace treebench

#endif
