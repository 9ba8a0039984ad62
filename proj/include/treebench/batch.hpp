/*
 * Batch evaluation: case pairing, a ground-truth skeleton cache, a bounded
 * worker pool and the results/manifest writers.
 *
 * Rows in results.csv are ordered by case_id, so the file is byte-identical
 * for any worker count. Timing only goes to the manifest.
 */
#ifndef TREEBENCH_BATCH_HPP
#define TREEBENCH_BATCH_HPP

#include <treebench/mask_io.hpp>
#include <treebench/metrics.hpp>
#include <treebench/ranking.hpp>

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace treebench {

inline constexpr const char *kVersion = "0.1.0";

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t *>(s.data()), s.size()), h);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct CasePair {
  std::string case_id;
  std::filesystem::path pred;
  std::filesystem::path gt;
  std::string error;  // set when the pair is incomplete
};

inline bool is_mask_file(const std::filesystem::path &p) {
  try {
    format_from_path(p);
    return true;
  } catch (const FormatError &) {
    return p.extension() == ".hdr";
  }
}

namespace detail {

inline std::map<std::string, std::vector<std::filesystem::path>> masks_by_stem(const std::filesystem::path &dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, std::vector<std::filesystem::path>> out;
  for (const auto &e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || !is_mask_file(e.path())) continue;
    out[mask_stem(e.path())].push_back(e.path());
  }
  for (auto &[stem, paths] : out) std::sort(paths.begin(), paths.end());
  return out;
}

}  // namespace detail

// Pairs prediction and ground-truth files by stem (ATM_001.nii.gz <-> ATM_001.nii.gz).
// Unmatched or ambiguous stems come back as pairs with `error` set.
inline std::vector<CasePair> pair_by_stem(const std::filesystem::path &pred_dir, const std::filesystem::path &gt_dir) {
  const auto preds = detail::masks_by_stem(pred_dir);
  const auto gts = detail::masks_by_stem(gt_dir);
  std::map<std::string, CasePair> pairs;
  for (const auto &[stem, paths] : preds) {
    auto &p = pairs[stem];
    p.case_id = stem;
    p.pred = paths.front();
    if (paths.size() > 1) p.error = "ambiguous prediction: several files share stem " + stem;
  }
  for (const auto &[stem, paths] : gts) {
    auto &p = pairs[stem];
    p.case_id = stem;
    p.gt = paths.front();
    if (paths.size() > 1 && p.error.empty()) p.error = "ambiguous ground truth: several files share stem " + stem;
  }
  std::vector<CasePair> out;
  for (auto &[stem, p] : pairs) {
    if (p.error.empty() && p.pred.empty()) p.error = "no prediction for case " + stem;
    if (p.error.empty() && p.gt.empty()) p.error = "no ground truth for case " + stem;
    out.push_back(std::move(p));
  }
  return out;
}

// Explicit pairing: csv with columns case_id,pred,gt. Relative paths are
// resolved against the csv's directory.
inline std::vector<CasePair> pairs_from_csv(const std::filesystem::path &csv) {
  const auto text = detail::read_file(csv);
  const auto t = detail::parse_csv(std::string(text.begin(), text.end()));
  const auto c_id = t.column("case_id"), c_pred = t.column("pred"), c_gt = t.column("gt");
  if (!c_id || !c_pred || !c_gt) throw DataError(csv.string() + ": pairs csv needs case_id, pred and gt columns");
  const auto base = csv.parent_path();
  std::map<std::string, CasePair> pairs;
  for (const auto &row : t.rows) {
    auto resolve = [&](const std::string &s) {
      std::filesystem::path p(s);
      return p.is_absolute() ? p : base / p;
    };
    CasePair p{row[*c_id], resolve(row[*c_pred]), resolve(row[*c_gt]), {}};
    if (pairs.count(p.case_id)) throw DataError(csv.string() + ": duplicate case_id " + p.case_id);
    pairs[p.case_id] = std::move(p);
  }
  std::vector<CasePair> out;
  for (auto &[id, p] : pairs) out.push_back(std::move(p));
  return out;
}

// Ground-truth skeletons keyed by content hash and parameters. Concurrent
// requests for one key compute it once; other callers wait on the same
// future. With a directory, thinned skeletons persist as .tbm.gz files.
class SkeletonCache {
public:
  using Ptr = std::shared_ptr<const SkeletonGraph>;

  explicit SkeletonCache(std::filesystem::path dir = {}) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  // `thin_fn` produces the thinned (unparsed) skeleton mask on a miss;
  // `parse_fn` turns it into the parsed graph.
  Ptr get(const std::string &key, const std::function<VoxelMask()> &thin_fn,
          const std::function<SkeletonGraph(const VoxelMask &)> &parse_fn) {
    std::promise<Ptr> promise;
    std::shared_future<Ptr> fut;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      if (auto it = entries_.find(key); it != entries_.end()) {
        ++memory_hits_;
        fut = it->second;
      } else {
        fut = promise.get_future().share();
        entries_.emplace(key, fut);
        owner = true;
      }
    }
    if (owner) {
      try {
        promise.set_value(std::make_shared<const SkeletonGraph>(parse_fn(load_or_thin(key, thin_fn))));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return fut.get();
  }

  std::size_t memory_hits() const { return memory_hits_; }
  std::size_t disk_hits() const { return disk_hits_; }
  std::size_t misses() const { return misses_; }
  const std::filesystem::path &directory() const { return dir_; }

private:
  VoxelMask load_or_thin(const std::string &key, const std::function<VoxelMask()> &thin_fn) {
    const auto path = dir_.empty() ? std::filesystem::path{} : dir_ / (key + ".tbm.gz");
    if (!path.empty() && std::filesystem::exists(path)) {
      try {
        auto m = load_mask(path);
        ++disk_hits_;
        return m;
      } catch (const DataError &) {
        // Unreadable cache entry; recompute and overwrite it below.
      }
    }
    ++misses_;
    auto skel = thin_fn();
    if (!path.empty()) {
      // Write then rename so concurrent readers never see a partial file.
      const auto tmp = dir_ / (key + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) +
                               ".tbm.gz");
      save_mask(skel, tmp);
      std::filesystem::rename(tmp, path);
    }
    return skel;
  }

  std::filesystem::path dir_;
  std::mutex mu_;
  std::map<std::string, std::shared_future<Ptr>> entries_;
  std::atomic<std::size_t> memory_hits_{0}, disk_hits_{0}, misses_{0};
};

enum class WeightPreset { mean, weighted, custom };

struct RunConfig {
  std::filesystem::path pred_dir;
  std::filesystem::path gt_dir;
  std::filesystem::path pairs_csv;
  std::size_t jobs = 1;
  WeightPreset preset = WeightPreset::mean;
  ScoreWeights weights = ScoreWeights::mean_score();
  bool normalize = true;
  EvalOptions eval;
  double binarize_threshold = 0.0;
  std::filesystem::path out_dir = ".";
  std::filesystem::path cache_dir;
  bool use_cache = true;

  void validate() const {
    if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
    if (!weights.valid()) throw std::invalid_argument("weights must be non-negative with a positive sum");
    if (!(eval.min_branch_mm >= 0)) throw std::invalid_argument("min_branch_mm must be >= 0");
  }
};

// "mean", "weighted" or four comma-separated weights (TD,BD,DSC,Precision).
inline std::pair<WeightPreset, ScoreWeights> parse_weights(const std::string &s) {
  if (s == "mean") return {WeightPreset::mean, ScoreWeights::mean_score()};
  if (s == "weighted") return {WeightPreset::weighted, ScoreWeights::weighted_score()};
  const auto parts = detail::split_csv_line(s);
  if (parts.size() != 4) throw std::invalid_argument("weights must be mean, weighted or four numbers: " + s);
  ScoreWeights w{detail::parse_number(parts[0]), detail::parse_number(parts[1]), detail::parse_number(parts[2]),
                 detail::parse_number(parts[3])};
  if (!w.valid()) throw std::invalid_argument("weights must be non-negative with a positive sum: " + s);
  return {WeightPreset::custom, w};
}

inline std::string weights_name(WeightPreset p, const ScoreWeights &w) {
  switch (p) {
    case WeightPreset::mean: return "mean";
    case WeightPreset::weighted: return "weighted";
    case WeightPreset::custom: break;
  }
  return fmt3(w.td) + "," + fmt3(w.bd) + "," + fmt3(w.dsc) + "," + fmt3(w.precision);
}

inline bool parse_bool(const std::string &s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw std::invalid_argument("not a boolean: " + s);
}

// key = value lines; '#' starts a comment; [section] headers are accepted
// and ignored, so keys must be unique across the file.
inline std::map<std::string, std::string> parse_config_text(const std::string &text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = detail::trim(line);
    if (t.empty() || (t.front() == '[' && t.back() == ']')) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    auto key = detail::trim(std::string_view(t).substr(0, eq));
    auto value = detail::trim(std::string_view(t).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

// Applies one setting by name. Used for config-file entries; the CLI maps
// its flags onto the same names so precedence stays in one place.
inline void apply_setting(RunConfig &cfg, const std::string &key, const std::string &value) {
  if (key == "pred") {
    cfg.pred_dir = value;
  } else if (key == "gt") {
    cfg.gt_dir = value;
  } else if (key == "pairs") {
    cfg.pairs_csv = value;
  } else if (key == "jobs") {
    const double j = detail::parse_number(value);
    if (j < 1 || j != std::floor(j)) throw std::invalid_argument("jobs must be a positive integer: " + value);
    cfg.jobs = static_cast<std::size_t>(j);
  } else if (key == "weights") {
    std::tie(cfg.preset, cfg.weights) = parse_weights(value);
  } else if (key == "normalize") {
    cfg.normalize = parse_bool(value);
  } else if (key == "direction") {
    if (value == "reference") cfg.eval.direction = CoverageDirection::reference;
    else if (value == "prediction") cfg.eval.direction = CoverageDirection::prediction;
    else throw std::invalid_argument("direction must be reference or prediction: " + value);
  } else if (key == "threshold") {
    cfg.binarize_threshold = detail::parse_number(value);
  } else if (key == "min_branch_mm") {
    cfg.eval.min_branch_mm = detail::parse_number(value);
  } else if (key == "out") {
    cfg.out_dir = value;
  } else if (key == "cache_dir") {
    cfg.cache_dir = value;
  } else if (key == "cache") {
    cfg.use_cache = parse_bool(value);
  } else {
    throw std::invalid_argument("unknown config key: " + key);
  }
}

inline nlohmann::ordered_json config_to_json(const RunConfig &c) {
  nlohmann::ordered_json j;
  j["pred"] = c.pred_dir.string();
  j["gt"] = c.gt_dir.string();
  j["pairs"] = c.pairs_csv.string();
  j["jobs"] = c.jobs;
  j["weights"] = weights_name(c.preset, c.weights);
  j["normalize"] = c.normalize;
  j["direction"] = c.eval.direction == CoverageDirection::reference ? "reference" : "prediction";
  j["threshold"] = c.binarize_threshold;
  j["min_branch_mm"] = c.eval.min_branch_mm;
  j["out"] = c.out_dir.string();
  j["cache_dir"] = c.cache_dir.string();
  j["cache"] = c.use_cache;
  return j;
}

struct CaseRecord {
  CasePair pair;
  std::optional<CaseMetrics> metrics;
  std::string error;
  double seconds = 0.0;
  std::string pred_hash;
  std::string gt_hash;

  bool ok() const { return metrics.has_value(); }
};

// Cache key for a ground-truth skeleton: file contents plus every parameter
// that changes the thinned mask or its parse.
inline std::string skeleton_cache_key(std::uint64_t gt_hash, const RunConfig &cfg) {
  std::string params = "thin-lee-v1|threshold=" + std::to_string(cfg.binarize_threshold) +
                       "|min_branch_mm=" + std::to_string(cfg.eval.min_branch_mm) + "|order=";
  for (auto f : cfg.eval.thinning.order) params += std::to_string(static_cast<int>(f));
  return hex64(gt_hash) + "-" + hex64(fnv1a64(params));
}

inline CaseRecord evaluate_pair(const CasePair &pair, const RunConfig &cfg, SkeletonCache *cache) {
  CaseRecord r;
  r.pair = pair;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (!pair.error.empty()) throw DataError(pair.error);
    auto pred_bytes = detail::read_file(pair.pred);
    auto gt_bytes = detail::read_file(pair.gt);
    const auto gt_h = fnv1a64(gt_bytes);
    r.pred_hash = hex64(fnv1a64(pred_bytes));
    r.gt_hash = hex64(gt_h);
    const auto pred = decode_mask(std::move(pred_bytes), pair.pred, cfg.binarize_threshold);
    const auto gt = decode_mask(std::move(gt_bytes), pair.gt, cfg.binarize_threshold);
    shape_check(pred, gt);
    SkeletonCache::Ptr skel;
    auto thin_fn = [&] { return thin(gt, cfg.eval.thinning); };
    auto parse_fn = [&](const VoxelMask &s) {
      return parse_branches(skeleton_from_mask(s.with_spacing(gt.spacing())), gt.spacing(), cfg.eval.min_branch_mm);
    };
    if (cache) {
      skel = cache->get(skeleton_cache_key(gt_h, cfg), thin_fn, parse_fn);
    } else {
      skel = std::make_shared<const SkeletonGraph>(parse_fn(thin_fn()));
    }
    r.metrics = evaluate_case(pred, gt, cfg.eval, skel.get(), pair.case_id);
  } catch (const std::exception &e) {
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Runs every pair with at most cfg.jobs workers. Records come back in input
// order whatever the scheduling.
inline std::vector<CaseRecord> run_batch(const std::vector<CasePair> &pairs, const RunConfig &cfg,
                                         SkeletonCache *cache) {
  cfg.validate();
  std::vector<CaseRecord> out(pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) out[i] = evaluate_pair(pairs[i], cfg, cache);
  };
  const auto n = std::min(cfg.jobs, std::max<std::size_t>(1, pairs.size()));
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto &t : pool) t.join();
  return out;
}

inline std::vector<CasePair> discover_pairs(const RunConfig &cfg) {
  if (!cfg.pairs_csv.empty()) return pairs_from_csv(cfg.pairs_csv);
  if (cfg.pred_dir.empty() || cfg.gt_dir.empty()) throw std::invalid_argument("batch needs --pred and --gt directories or --pairs");
  return pair_by_stem(cfg.pred_dir, cfg.gt_dir);
}

inline std::string results_csv(const std::vector<CaseRecord> &records) {
  auto sorted = records;
  std::sort(sorted.begin(), sorted.end(), [](const auto &a, const auto &b) { return a.pair.case_id < b.pair.case_id; });
  std::string out = std::string(kCaseCsvHeader) + "\n";
  for (const auto &r : sorted) out += (r.ok() ? case_csv_row(*r.metrics) : case_csv_error_row(r.pair.case_id)) + "\n";
  return out;
}

inline nlohmann::ordered_json manifest_json(const RunConfig &cfg, const std::vector<CaseRecord> &records,
                                            const SkeletonCache *cache = nullptr) {
  auto sorted = records;
  std::sort(sorted.begin(), sorted.end(), [](const auto &a, const auto &b) { return a.pair.case_id < b.pair.case_id; });
  nlohmann::ordered_json j;
  j["tool"] = "treebench";
  j["version"] = kVersion;
  j["config"] = config_to_json(cfg);
  std::size_t ok = 0;
  auto cases = nlohmann::ordered_json::array();
  for (const auto &r : sorted) {
    nlohmann::ordered_json c;
    c["case_id"] = r.pair.case_id;
    c["status"] = r.ok() ? "ok" : "error";
    if (!r.ok()) c["message"] = r.error;
    c["pred"] = r.pair.pred.string();
    c["gt"] = r.pair.gt.string();
    c["pred_hash"] = r.pred_hash;
    c["gt_hash"] = r.gt_hash;
    c["seconds"] = std::stod(fmt3(r.seconds));
    if (r.ok()) c["flags"] = r.metrics->flags;
    ok += r.ok() ? 1 : 0;
    cases.push_back(std::move(c));
  }
  j["summary"] = {{"cases", sorted.size()}, {"ok", ok}, {"error", sorted.size() - ok}};
  if (cache)
    j["cache"] = {{"memory_hits", cache->memory_hits()}, {"disk_hits", cache->disk_hits()}, {"misses", cache->misses()}};
  j["cases"] = std::move(cases);
  return j;
}

}  // namespace treebench

#endif
