/*
 * Skeleton graph: centerline voxels, node degrees, junction clusters and the
 * branch decomposition used for tree-length and branch-count metrics.
 *
 * Parsing rules
 *   - degree = number of 26-neighbors on the skeleton;
 *   - voxels of degree >= 3 are junction voxels; 26-adjacent junction voxels
 *     are merged into one junction cluster;
 *   - a branch is a maximal run of non-junction voxels between two terminals
 *     (an end point or a junction cluster). Its polyline is the run plus the
 *     junction voxel it attaches to at each junction end, so tree length
 *     includes the step into every junction;
 *   - a cluster touched by exactly two branch ends is not a real bifurcation
 *     (thinning leaves such knots on staircase segments); the two branches are
 *     spliced through the cluster along a shortest route;
 *   - closed loops without any junction form one branch whose polyline
 *     returns to its first voxel; an isolated voxel forms a zero-length branch.
 *
 * Optional pruning removes branches shorter than min_branch_mm and folds
 * their voxels into the adjacent junction.
 */
#ifndef TREEBENCH_SKELETON_HPP
#define TREEBENCH_SKELETON_HPP

#include <treebench/components.hpp>
#include <treebench/thinning.hpp>
#include <treebench/volume.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <deque>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <vector>

namespace treebench {

struct Terminal {
  enum class Kind : std::uint8_t { end_point, junction, loop };
  Kind kind = Kind::end_point;
  std::size_t junction = 0;  // cluster id, valid for Kind::junction
  std::size_t attach = 0;    // junction voxel the branch connects to (linear index)
};

struct Branch {
  std::vector<std::size_t> path;  // owned voxels in order (linear indices)
  Terminal front;
  Terminal back;
  double length_mm = 0.0;

  // Voxel sequence whose consecutive steps make up the branch length.
  std::vector<std::size_t> polyline() const {
    std::vector<std::size_t> out;
    out.reserve(path.size() + 2);
    if (front.kind == Terminal::Kind::junction) out.push_back(front.attach);
    out.insert(out.end(), path.begin(), path.end());
    if (back.kind == Terminal::Kind::junction) out.push_back(back.attach);
    if (back.kind == Terminal::Kind::loop && !path.empty()) out.push_back(path.front());
    return out;
  }
};

struct JunctionCluster {
  std::vector<std::size_t> voxels;  // sorted linear indices
  std::size_t incidence = 0;        // number of branch ends attached
};

struct SkeletonGraph {
  Dims dims;
  Spacing spacing;
  std::vector<std::size_t> voxels;    // sorted linear indices
  std::vector<std::uint8_t> degree;   // parallel to voxels
  std::vector<std::size_t> end_points;
  std::vector<JunctionCluster> junctions;
  std::vector<Branch> branches;
  bool parsed = false;

  std::optional<std::size_t> find(std::size_t idx) const {
    const auto it = std::lower_bound(voxels.begin(), voxels.end(), idx);
    if (it == voxels.end() || *it != idx) return std::nullopt;
    return static_cast<std::size_t>(it - voxels.begin());
  }

  bool contains(std::size_t idx) const { return find(idx).has_value(); }

  // Representative voxel (smallest index) of every cluster with >= 3 branch ends.
  std::vector<std::size_t> branch_points() const {
    std::vector<std::size_t> out;
    for (const auto &j : junctions)
      if (j.incidence >= 3 && !j.voxels.empty()) out.push_back(j.voxels.front());
    return out;
  }

  Voxel coord(std::size_t idx) const {
    const auto x = idx % dims.nx;
    const auto yz = idx / dims.nx;
    return {static_cast<std::int64_t>(x), static_cast<std::int64_t>(yz % dims.ny),
            static_cast<std::int64_t>(yz / dims.ny)};
  }

  VoxelMask to_mask() const {
    VoxelMask m(dims, spacing);
    for (auto v : voxels) m.set(v, true);
    return m;
  }
};

inline double polyline_length(const std::vector<std::size_t> &line, const Dims &dims, const Spacing &s) {
  double len = 0.0;
  auto coord = [&](std::size_t i) {
    return Voxel{static_cast<std::int64_t>(i % dims.nx), static_cast<std::int64_t>((i / dims.nx) % dims.ny),
                 static_cast<std::int64_t>(i / (dims.nx * dims.ny))};
  };
  for (std::size_t k = 1; k < line.size(); ++k) len += step_length(coord(line[k - 1]), coord(line[k]), s);
  return len;
}

// Skeleton voxels and degrees from a skeleton mask; branches are not parsed.
inline SkeletonGraph skeleton_from_mask(const VoxelMask &skel) {
  SkeletonGraph g;
  g.dims = skel.dims();
  g.spacing = skel.spacing();
  g.voxels = skel.foreground_indices();
  g.degree.resize(g.voxels.size());
  for (std::size_t i = 0; i < g.voxels.size(); ++i) {
    int deg = 0;
    detail::for_each_neighbor26(g.dims, g.voxels[i], [&](std::size_t u) { deg += skel[u]; });
    g.degree[i] = static_cast<std::uint8_t>(deg);
    if (deg == 1) g.end_points.push_back(g.voxels[i]);
  }
  return g;
}

inline SkeletonGraph skeletonize(const VoxelMask &mask, const ThinningOptions &opt = {}) {
  return skeleton_from_mask(thin(mask, opt));
}

namespace detail {

class BranchParser {
public:
  explicit BranchParser(const SkeletonGraph &g) : g_(g), cluster_of_(g.voxels.size(), kNone), owned_(g.voxels.size(), false) {}

  SkeletonGraph run(double min_branch_mm) {
    SkeletonGraph out = g_;
    build_clusters();
    trace();
    if (min_branch_mm > 0) prune(min_branch_mm);
    splice_pass_through();
    finalize(out);
    return out;
  }

private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  std::vector<std::size_t> neighbors(std::size_t slot) const {
    std::vector<std::size_t> out;
    for_each_neighbor26(g_.dims, g_.voxels[slot], [&](std::size_t u) {
      if (auto s = g_.find(u)) out.push_back(*s);
    });
    return out;
  }

  bool is_junction_slot(std::size_t slot) const { return cluster_of_[slot] != kNone; }

  void build_clusters() {
    for (std::size_t s = 0; s < g_.voxels.size(); ++s) {
      if (g_.degree[s] < 3 || cluster_of_[s] != kNone) continue;
      const std::size_t id = clusters_.size();
      clusters_.push_back({});
      std::deque<std::size_t> q{s};
      cluster_of_[s] = id;
      while (!q.empty()) {
        const auto a = q.front();
        q.pop_front();
        clusters_[id].push_back(a);
        for (auto b : neighbors(a))
          if (g_.degree[b] >= 3 && cluster_of_[b] == kNone) {
            cluster_of_[b] = id;
            q.push_back(b);
          }
      }
      std::sort(clusters_[id].begin(), clusters_[id].end());
    }
  }

  struct Work {
    std::vector<std::size_t> path;  // slots
    Terminal front, back;           // attach fields hold slots during parsing
    bool alive = true;
  };

  // Walks from `start` away from `prev` until a terminal is reached.
  Work walk(std::size_t start, std::optional<std::size_t> prev, Terminal front) {
    Work w;
    w.front = front;
    w.path.push_back(start);
    owned_[start] = true;
    std::size_t cur = start;
    std::optional<std::size_t> last = prev;
    while (true) {
      std::optional<std::size_t> next_junction, next_free;
      // Non-junction voxels have degree <= 2, so besides `last` there is at
      // most one way on.
      for (auto n : neighbors(cur)) {
        if (last && n == *last) continue;
        if (is_junction_slot(n)) {
          if (!next_junction) next_junction = n;
        } else if (!owned_[n]) {
          if (!next_free) next_free = n;
        }
      }
      if (next_junction) {
        w.back = {Terminal::Kind::junction, cluster_of_[*next_junction], *next_junction};
        return w;
      }
      if (next_free) {
        last = cur;
        cur = *next_free;
        owned_[cur] = true;
        w.path.push_back(cur);
        continue;
      }
      w.back = {Terminal::Kind::end_point, 0, 0};
      return w;
    }
  }

  void trace() {
    // Branches leaving junction clusters, in cluster then voxel order.
    for (std::size_t c = 0; c < clusters_.size(); ++c) {
      for (auto j : clusters_[c]) {
        for (auto n : neighbors(j)) {
          if (is_junction_slot(n) || owned_[n]) continue;
          work_.push_back(walk(n, j, {Terminal::Kind::junction, c, j}));
        }
      }
    }
    // Free-standing paths starting at end points.
    for (std::size_t s = 0; s < g_.voxels.size(); ++s) {
      if (owned_[s] || is_junction_slot(s) || g_.degree[s] != 1) continue;
      work_.push_back(walk(s, std::nullopt, {Terminal::Kind::end_point, 0, 0}));
    }
    // Isolated voxels and junction-free loops.
    for (std::size_t s = 0; s < g_.voxels.size(); ++s) {
      if (owned_[s] || is_junction_slot(s)) continue;
      Work w = walk(s, std::nullopt, {Terminal::Kind::end_point, 0, 0});
      if (g_.degree[s] == 2) {
        w.front = {Terminal::Kind::loop, 0, 0};
        w.back = {Terminal::Kind::loop, 0, 0};
      }
      work_.push_back(std::move(w));
    }
  }

  std::size_t root(std::size_t c) {
    while (merged_into_[c] != c) c = merged_into_[c] = merged_into_[merged_into_[c]];
    return c;
  }

  double work_length(const Work &w) const {
    std::vector<std::size_t> line;
    if (w.front.kind == Terminal::Kind::junction) line.push_back(g_.voxels[w.front.attach]);
    for (auto s : w.path) line.push_back(g_.voxels[s]);
    if (w.back.kind == Terminal::Kind::junction) line.push_back(g_.voxels[w.back.attach]);
    if (w.back.kind == Terminal::Kind::loop && !w.path.empty()) line.push_back(g_.voxels[w.path.front()]);
    return polyline_length(line, g_.dims, g_.spacing);
  }

  void prune(double min_mm) {
    merged_into_.resize(clusters_.size());
    std::iota(merged_into_.begin(), merged_into_.end(), 0);
    for (auto &w : work_) {
      const bool fj = w.front.kind == Terminal::Kind::junction, bj = w.back.kind == Terminal::Kind::junction;
      if (!(fj || bj) || work_length(w) >= min_mm) continue;
      const std::size_t target = root(fj ? w.front.junction : w.back.junction);
      if (fj && bj) merged_into_[root(w.back.junction)] = target;
      for (auto s : w.path) clusters_[target].push_back(s);
      w.alive = false;
    }
    // Fold merged clusters and relabel terminals.
    for (std::size_t c = 0; c < clusters_.size(); ++c) {
      const auto r = root(c);
      if (r == c) continue;
      clusters_[r].insert(clusters_[r].end(), clusters_[c].begin(), clusters_[c].end());
      clusters_[c].clear();
    }
    for (std::size_t c = 0; c < clusters_.size(); ++c) {
      std::sort(clusters_[c].begin(), clusters_[c].end());
      for (auto s : clusters_[c]) cluster_of_[s] = c;
    }
    for (auto &w : work_) {
      if (w.front.kind == Terminal::Kind::junction) w.front.junction = root(w.front.junction);
      if (w.back.kind == Terminal::Kind::junction) w.back.junction = root(w.back.junction);
    }
  }

  // Shortest 26-path between two voxels of the same cluster, both inclusive.
  std::vector<std::size_t> route(std::size_t from, std::size_t to) const {
    if (from == to) return {from};
    const auto cid = cluster_of_[from];
    std::unordered_map<std::size_t, std::size_t> parent{{from, from}};
    std::deque<std::size_t> q{from};
    while (!q.empty()) {
      const auto a = q.front();
      q.pop_front();
      if (a == to) break;
      for (auto b : neighbors(a))
        if (cluster_of_[b] == cid && !parent.contains(b)) {
          parent[b] = a;
          q.push_back(b);
        }
    }
    std::vector<std::size_t> out;
    for (std::size_t v = to;; v = parent.at(v)) {
      out.push_back(v);
      if (v == from) break;
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  static void reverse_work(Work &w) {
    std::reverse(w.path.begin(), w.path.end());
    std::swap(w.front, w.back);
  }

  void splice_pass_through() {
    bool changed = true;
    while (changed) {
      changed = false;
      std::vector<std::vector<std::pair<std::size_t, bool>>> ends(clusters_.size());  // (work id, is_back)
      for (std::size_t i = 0; i < work_.size(); ++i) {
        const auto &w = work_[i];
        if (!w.alive) continue;
        if (w.front.kind == Terminal::Kind::junction) ends[w.front.junction].push_back({i, false});
        if (w.back.kind == Terminal::Kind::junction) ends[w.back.junction].push_back({i, true});
      }
      for (std::size_t c = 0; c < clusters_.size(); ++c) {
        if (ends[c].size() != 2 || ends[c][0].first == ends[c][1].first || clusters_[c].empty()) continue;
        auto [ia, a_back] = ends[c][0];
        auto [ib, b_back] = ends[c][1];
        Work &a = work_[ia];
        Work &b = work_[ib];
        if (!a_back) reverse_work(a);  // a now ends at c
        if (b_back) reverse_work(b);   // b now starts at c
        const auto through = route(a.back.attach, b.front.attach);
        for (auto s : through) {
          a.path.push_back(s);
          cluster_of_[s] = kNone;
        }
        a.path.insert(a.path.end(), b.path.begin(), b.path.end());
        a.back = b.back;
        b.alive = false;
        // Off-route voxels stay as an orphan cluster with no branch ends.
        std::vector<std::size_t> rest;
        for (auto s : clusters_[c])
          if (cluster_of_[s] == c) rest.push_back(s);
        clusters_[c] = std::move(rest);
        changed = true;
        break;
      }
    }
  }

  void finalize(SkeletonGraph &out) {
    // Renumber non-empty clusters.
    std::vector<std::size_t> remap(clusters_.size(), kNone);
    out.junctions.clear();
    for (std::size_t c = 0; c < clusters_.size(); ++c) {
      if (clusters_[c].empty()) continue;
      remap[c] = out.junctions.size();
      JunctionCluster jc;
      for (auto s : clusters_[c]) jc.voxels.push_back(g_.voxels[s]);
      std::sort(jc.voxels.begin(), jc.voxels.end());
      out.junctions.push_back(std::move(jc));
    }
    out.branches.clear();
    auto convert = [&](const Terminal &t) {
      Terminal r = t;
      if (t.kind == Terminal::Kind::junction) {
        r.junction = remap[t.junction];
        r.attach = g_.voxels[t.attach];
        out.junctions[r.junction].incidence++;
      }
      return r;
    };
    for (const auto &w : work_) {
      if (!w.alive) continue;
      Branch b;
      for (auto s : w.path) b.path.push_back(g_.voxels[s]);
      b.front = convert(w.front);
      b.back = convert(w.back);
      b.length_mm = polyline_length(b.polyline(), out.dims, out.spacing);
      out.branches.push_back(std::move(b));
    }
    out.end_points.clear();
    // Degree-1 voxels can only sit at the ends of a branch path; pruned ones
    // were folded into junctions and drop out here.
    for (const auto &b : out.branches)
      for (auto v : b.path)
        if (out.degree[*g_.find(v)] == 1) out.end_points.push_back(v);
    std::sort(out.end_points.begin(), out.end_points.end());
    out.parsed = true;
  }

  const SkeletonGraph &g_;
  std::vector<std::size_t> cluster_of_;
  std::vector<bool> owned_;
  std::vector<std::vector<std::size_t>> clusters_;  // slots
  std::vector<std::size_t> merged_into_;
  std::vector<Work> work_;
};

}  // namespace detail

inline SkeletonGraph parse_branches(const SkeletonGraph &skel, const Spacing &spacing, double min_branch_mm = 0.0) {
  SkeletonGraph g = skel;
  g.spacing = spacing;
  g.junctions.clear();
  g.branches.clear();
  return detail::BranchParser(g).run(min_branch_mm);
}

inline double tree_length(const SkeletonGraph &skel) {
  double total = 0.0;
  for (const auto &b : skel.branches) total += b.length_mm;
  return total;
}

inline nlohmann::ordered_json skeleton_to_json(const SkeletonGraph &g) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["dims"] = {g.dims.nx, g.dims.ny, g.dims.nz};
  j["spacing_mm"] = {g.spacing.dx, g.spacing.dy, g.spacing.dz};
  ordered_json summary;
  summary["skeleton_voxels"] = g.voxels.size();
  summary["end_points"] = g.end_points.size();
  summary["branch_points"] = g.branch_points().size();
  summary["branches"] = g.branches.size();
  summary["tree_length_mm"] = tree_length(g);
  j["summary"] = summary;
  ordered_json branches = ordered_json::array();
  for (const auto &b : g.branches) {
    ordered_json jb;
    ordered_json pts = ordered_json::array();
    for (auto v : b.path) {
      const auto c = g.coord(v);
      pts.push_back({c.x, c.y, c.z});
    }
    jb["voxels"] = std::move(pts);
    jb["length_mm"] = b.length_mm;
    branches.push_back(std::move(jb));
  }
  j["branches"] = std::move(branches);
  return j;
}

}  // namespace treebench

#endif
