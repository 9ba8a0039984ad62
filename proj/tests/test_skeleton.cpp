#include <treebench/skeleton.hpp>

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

using namespace treebench;

namespace {

SkeletonGraph parse(const VoxelMask &skel, double min_branch_mm = 0.0) {
  return parse_branches(skeleton_from_mask(skel), skel.spacing(), min_branch_mm);
}

VoxelMask y_shape() {
  VoxelMask m({15, 3, 15}, {1, 1, 1});
  const std::int64_t cx = 7, cz = 7;
  m.set(cx, 1, cz, true);
  for (std::int64_t k = 1; k <= 6; ++k) {
    m.set(cx, 1, cz + k, true);
    m.set(cx + k, 1, cz - k, true);
    m.set(cx - k, 1, cz - k, true);
  }
  return m;
}

VoxelMask permute(const VoxelMask &m, std::array<int, 3> p) {
  const auto &d = m.dims();
  const std::array<std::size_t, 3> n{d.nx, d.ny, d.nz};
  const std::array<double, 3> s{m.spacing().dx, m.spacing().dy, m.spacing().dz};
  VoxelMask out({n[p[0]], n[p[1]], n[p[2]]}, {s[p[0]], s[p[1]], s[p[2]]});
  for (auto i : m.foreground_indices()) {
    const auto c = m.coord(i);
    const std::array<std::int64_t, 3> v{c.x, c.y, c.z};
    out.set(v[p[0]], v[p[1]], v[p[2]], true);
  }
  return out;
}

// Structural invariants of a parsed skeleton.
void check_invariants(const SkeletonGraph &g) {
  std::map<std::size_t, int> owner_count;
  for (const auto &j : g.junctions)
    for (auto v : j.voxels) ++owner_count[v];
  std::size_t junction_ends = 0, incidence = 0;
  for (const auto &b : g.branches) {
    std::set<std::size_t> seen;
    for (auto v : b.path) {
      ASSERT_TRUE(seen.insert(v).second) << "repeated voxel in branch";
      ++owner_count[v];
    }
    const auto line = b.polyline();
    for (std::size_t k = 1; k < line.size(); ++k) {
      const auto a = g.coord(line[k - 1]), c = g.coord(line[k]);
      ASSERT_TRUE(oracle::adjacent26(a.x, a.y, a.z, c.x, c.y, c.z)) << "gap in branch polyline";
    }
    ASSERT_GE(b.length_mm, 0.0);
    if (b.path.size() > 1 || b.front.kind == Terminal::Kind::junction) ASSERT_GT(b.length_mm, 0.0);
    junction_ends += (b.front.kind == Terminal::Kind::junction) + (b.back.kind == Terminal::Kind::junction);
  }
  for (const auto &j : g.junctions) incidence += j.incidence;
  ASSERT_EQ(junction_ends, incidence);
  ASSERT_EQ(owner_count.size(), g.voxels.size());
  for (auto [v, n] : owner_count) {
    ASSERT_EQ(n, 1) << "voxel " << v << " owned " << n << " times";
    ASSERT_TRUE(g.contains(v));
  }
}

}  // namespace

TEST(Skeleton, StraightLine) {
  VoxelMask m({3, 3, 12}, {1, 1, 1});
  for (std::int64_t z = 1; z <= 10; ++z) m.set(1, 1, z, true);
  const auto g = parse(m);
  ASSERT_EQ(g.branches.size(), 1u);
  EXPECT_EQ(g.end_points.size(), 2u);
  EXPECT_EQ(g.branch_points().size(), 0u);
  EXPECT_EQ(g.branches[0].path.size(), 10u);
  EXPECT_DOUBLE_EQ(tree_length(g), 9.0);
}

TEST(Skeleton, YShape) {
  const auto g = parse(y_shape());
  EXPECT_EQ(g.branches.size(), 3u);
  EXPECT_EQ(g.end_points.size(), 3u);
  EXPECT_EQ(g.branch_points().size(), 1u);
  EXPECT_NEAR(tree_length(g), 6.0 + 12.0 * std::sqrt(2.0), 1e-12);
  check_invariants(g);
}

TEST(Skeleton, TreeLengthUsesSpacing) {
  VoxelMask m({1, 1, 10}, {0.5, 0.5, 0.7}, std::vector<std::uint8_t>(10, 1));
  EXPECT_NEAR(tree_length(parse(m)), 6.3, 1e-12);

  VoxelMask d({2, 2, 1}, {0.6, 0.8, 1.0});
  d.set(0, 0, 0, true);
  d.set(1, 1, 0, true);
  EXPECT_NEAR(tree_length(parse(d)), 1.0, 1e-12);
}

TEST(Skeleton, LoopWithoutJunction) {
  VoxelMask m({6, 5, 1}, {1, 1, 1});
  for (auto [x, y] : {std::pair{2, 0}, {3, 0}, {4, 1}, {4, 2}, {3, 3}, {2, 3}, {1, 2}, {1, 1}}) m.set(x, y, 0, true);
  const auto g = parse(m);
  ASSERT_EQ(g.branches.size(), 1u);
  EXPECT_EQ(g.branches[0].front.kind, Terminal::Kind::loop);
  EXPECT_EQ(g.end_points.size(), 0u);
  EXPECT_NEAR(tree_length(g), 4.0 + 4.0 * std::sqrt(2.0), 1e-12);
  check_invariants(g);
}

TEST(Skeleton, IsolatedVoxelIsZeroLengthBranch) {
  VoxelMask m({3, 3, 3}, {1, 1, 1});
  m.set(1, 1, 1, true);
  const auto g = parse(m);
  ASSERT_EQ(g.branches.size(), 1u);
  EXPECT_EQ(tree_length(g), 0.0);
}

TEST(Skeleton, PruningFoldsShortSpur) {
  VoxelMask m({5, 5, 22}, {1, 1, 1});
  for (std::int64_t z = 1; z <= 20; ++z) m.set(2, 2, z, true);
  m.set(3, 2, 10, true);
  m.set(4, 2, 10, true);
  const auto raw = parse(m);
  EXPECT_EQ(raw.branches.size(), 3u);
  EXPECT_EQ(raw.branch_points().size(), 1u);

  const auto pruned = parse(m, 3.0);
  ASSERT_EQ(pruned.branches.size(), 1u);
  EXPECT_EQ(pruned.branch_points().size(), 0u);
  EXPECT_EQ(pruned.end_points.size(), 2u);
  EXPECT_DOUBLE_EQ(tree_length(pruned), 19.0);
}

TEST(Skeleton, InvariantsOnThinnedShapes) {
  oracle::Rng rng(41);
  for (int trial = 0; trial < 60; ++trial) {
    const auto d = oracle::random_dims(rng, 24);
    const auto m = trial % 2 ? oracle::random_mask(rng, d, 0.3) : oracle::random_blobs(rng, d, 2 + trial % 6);
    const auto skel = skeletonize(m);
    for (auto v : skel.voxels) ASSERT_TRUE(m[v]);
    SCOPED_TRACE(trial);
    check_invariants(parse_branches(skel, {0.7, 0.7, 0.5}));
    check_invariants(parse_branches(skel, {1, 1, 1}, 2.5));
  }
}

TEST(Skeleton, TreeLengthInvariantUnderAxisPermutation) {
  oracle::Rng rng(43);
  const std::array<std::array<int, 3>, 5> perms{{{0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  for (int trial = 0; trial < 30; ++trial) {
    const auto d = oracle::random_dims(rng, 20);
    const auto skel = thin(oracle::random_blobs(rng, d, 3)).with_spacing({0.5, 0.7, 0.9});
    const double base = tree_length(parse(skel));
    for (const auto &p : perms) ASSERT_NEAR(tree_length(parse(permute(skel, p))), base, 1e-9) << trial;
  }
}

TEST(Skeleton, JsonSummary) {
  const auto j = skeleton_to_json(parse(y_shape()));
  EXPECT_EQ(j["summary"]["branches"], 3);
  EXPECT_EQ(j["summary"]["end_points"], 3);
  EXPECT_EQ(j["summary"]["branch_points"], 1);
  EXPECT_EQ(j["branches"].size(), 3u);
  EXPECT_EQ(j["branches"][0]["voxels"][0].size(), 3u);
}
