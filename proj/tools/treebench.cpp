// treebench: evaluation, batch runs, leaderboards and phantoms from the shell.
//
// Exit codes: 0 success, 1 usage error, 2 evaluation or data error.

#include <treebench/batch.hpp>
#include <treebench/mask_io.hpp>
#include <treebench/metrics.hpp>
#include <treebench/phantom.hpp>
#include <treebench/ranking.hpp>
#include <treebench/skeleton.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace treebench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path &path, const std::string &text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

std::string read_text(const fs::path &path) {
  const auto bytes = detail::read_file(path);
  return {bytes.begin(), bytes.end()};
}

std::vector<double> split_numbers(const std::string &s, std::size_t want, const char *what) {
  std::vector<double> out;
  for (const auto &f : detail::split_csv_line(s)) out.push_back(detail::parse_number(f));
  if (want && out.size() != want)
    throw UsageError(std::string(what) + " needs " + std::to_string(want) + " comma-separated values");
  return out;
}

CoverageDirection parse_direction(const std::string &s) {
  if (s == "reference") return CoverageDirection::reference;
  if (s == "prediction") return CoverageDirection::prediction;
  throw UsageError("direction must be reference or prediction");
}

void print_metrics_table(const std::vector<CaseMetrics> &rows) {
  std::size_t w = 7;
  for (const auto &m : rows) w = std::max(w, m.case_id.size());
  std::printf("%-*s %9s %9s %9s %9s %9s %9s\n", static_cast<int>(w), "case", "TD", "BD", "DSC", "Precision", "Sen", "Spe");
  for (const auto &m : rows)
    std::printf("%-*s %9.3f %9.3f %9.3f %9.3f %9.3f %9.3f\n", static_cast<int>(w), m.case_id.c_str(), m.td, m.bd, m.dsc,
                m.precision, m.sen, m.spe);
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, json, direction = "reference";
  double threshold = 0.0, min_branch_mm = 0.0;
  unsigned threads = 1;
};

int cmd_eval(const EvalArgs &a) {
  EvalOptions opt;
  opt.direction = parse_direction(a.direction);
  opt.min_branch_mm = a.min_branch_mm;
  opt.thinning.threads = a.threads;
  const auto pred = load_mask(a.pred, a.threshold);
  const auto gt = load_mask(a.gt, a.threshold);
  ShapeReport shape;
  try {
    shape = shape_check(pred, gt);
  } catch (const ShapeMismatch &e) {
    throw ShapeMismatch(a.pred + " vs " + a.gt + ": " + e.what());
  }
  if (shape.spacing_mismatch) std::fprintf(stderr, "warning: %s\n", shape.warning.c_str());
  const auto m = evaluate_case(pred, gt, opt, nullptr, mask_stem(a.pred));
  print_metrics_table({m});
  for (const auto &f : m.flags) std::fprintf(stderr, "note: %s\n", f.c_str());
  if (!a.json.empty()) write_text(a.json, case_to_json(m).dump(2) + "\n");
  return kExitOk;
}

// --- batch ----------------------------------------------------------------

struct BatchArgs {
  std::string config;
  std::map<std::string, std::string> flags;  // setting name -> value, only for flags given
  bool no_cache = false;
};

RunConfig resolve_config(const BatchArgs &a) {
  RunConfig cfg;
  if (const char *env = std::getenv("TREEBENCH_JOBS"); env && *env) {
    try {
      apply_setting(cfg, "jobs", env);
    } catch (const std::exception &e) {
      throw UsageError(std::string("TREEBENCH_JOBS: ") + e.what());
    }
  }
  if (!a.config.empty()) {
    for (const auto &[k, v] : parse_config_text(read_text(a.config))) apply_setting(cfg, k, v);
  }
  for (const auto &[k, v] : a.flags) apply_setting(cfg, k, v);
  if (a.no_cache) cfg.use_cache = false;
  cfg.validate();
  return cfg;
}

int cmd_batch(const BatchArgs &a) {
  RunConfig cfg;
  try {
    cfg = resolve_config(a);
  } catch (const std::invalid_argument &e) {
    throw UsageError(e.what());
  }
  const auto pairs = discover_pairs(cfg);
  if (pairs.empty()) {
    std::fprintf(stderr, "error: no cases found\n");
    return kExitData;
  }
  std::optional<SkeletonCache> cache;
  if (cfg.use_cache) cache.emplace(cfg.cache_dir);
  const auto records = run_batch(pairs, cfg, cache ? &*cache : nullptr);

  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "results.csv", results_csv(records));
  write_text(cfg.out_dir / "manifest.json", manifest_json(cfg, records, cache ? &*cache : nullptr).dump(2) + "\n");

  std::size_t failed = 0;
  for (const auto &r : records) {
    if (r.ok()) continue;
    ++failed;
    std::fprintf(stderr, "error: %s: %s\n", r.pair.case_id.c_str(), r.error.c_str());
  }
  std::printf("%zu cases, %zu ok, %zu errors; wrote %s\n", records.size(), records.size() - failed, failed,
              (cfg.out_dir / "results.csv").string().c_str());
  return failed ? kExitData : kExitOk;
}

// --- leaderboard ----------------------------------------------------------

struct LeaderboardArgs {
  std::vector<std::string> team_files;  // NAME=path
  std::string results_dir, combined, out, json, plot_data, weights = "mean";
  bool no_normalize = false;
};

int cmd_leaderboard(const LeaderboardArgs &a) {
  std::map<std::string, std::vector<CaseOutcome>> teams;
  auto merge = [&](std::map<std::string, std::vector<CaseOutcome>> parsed) {
    for (auto &[team, cases] : parsed) {
      if (teams.count(team)) throw DataError("team listed twice: " + team);
      teams[team] = std::move(cases);
    }
  };
  for (const auto &spec : a.team_files) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--team expects NAME=results.csv, got " + spec);
    const fs::path path = spec.substr(eq + 1);
    try {
      merge(parse_results_csv(read_text(path), spec.substr(0, eq)));
    } catch (const DataError &e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  if (!a.results_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(a.results_dir))
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto &f : files) {
      try {
        merge(parse_results_csv(read_text(f), f.stem().string()));
      } catch (const DataError &e) {
        throw DataError(f.string() + ": " + e.what());
      }
    }
  }
  if (!a.combined.empty()) {
    try {
      merge(parse_results_csv(read_text(a.combined)));
    } catch (const DataError &e) {
      throw DataError(a.combined + ": " + e.what());
    }
  }
  if (teams.empty()) throw UsageError("no team results given (use --team, --results-dir or --combined)");

  ScoreWeights w;
  try {
    w = parse_weights(a.weights).second;
  } catch (const std::invalid_argument &e) {
    throw UsageError(e.what());
  }
  Leaderboard board;
  try {
    std::vector<TeamAggregate> aggs;
    for (const auto &[team, cases] : teams) aggs.push_back(aggregate(team, cases));
    board = rank(aggs, w, !a.no_normalize);
  } catch (const std::invalid_argument &e) {
    throw DataError(e.what());
  }

  const auto csv = board_to_csv(board);
  if (!a.out.empty()) write_text(a.out, csv);
  if (a.out != "-") std::cout << csv;
  if (!a.json.empty()) write_text(a.json, board_to_json(board).dump(2) + "\n");
  if (!a.plot_data.empty()) write_text(a.plot_data, plot_data_json(board).dump(2) + "\n");
  for (const auto &t : board.unranked) std::fprintf(stderr, "warning: team %s has no successful case; not ranked\n", t.c_str());
  for (const auto &e : board.entries)
    if (!e.aggregate.error_cases.empty())
      std::fprintf(stderr, "note: team %s: %zu error case(s) excluded\n", e.team_id.c_str(), e.aggregate.error_cases.size());
  return kExitOk;
}

// --- rank-stability -------------------------------------------------------

int cmd_rank_stability(const std::string &board_a, const std::string &board_b) {
  const auto a = parse_board_csv(read_text(board_a));
  const auto b = parse_board_csv(read_text(board_b));
  KendallResult r;
  try {
    r = kendall_tau(a, b);
  } catch (const std::invalid_argument &e) {
    throw DataError(e.what());
  }
  std::printf("tau %#.3g\np %#.3g\nconcordant %zu\ndiscordant %zu\nteams %zu\n", r.tau, r.p_value, r.concordant,
              r.discordant, r.n);
  return kExitOk;
}

// --- phantom --------------------------------------------------------------

struct PhantomArgs {
  std::string out = "phantom.nii.gz", truth, degrade, degraded_out;
  int depth = PhantomSpec{}.depth;
  double root_radius = PhantomSpec{}.root_radius_vox, decay = PhantomSpec{}.radius_decay,
         angle = PhantomSpec{}.branching_angle_deg, jitter = 0.0;
  std::string lengths = "40,32,26,20,16", dims = "160,160,160", spacing = "1,1,1";
  std::uint64_t seed = 0;
  std::size_t branch = 1, gap = 3, blob = 27;
};

fs::path default_truth_path(const fs::path &mask) {
  return mask.parent_path() / (mask_stem(mask) + ".truth.json");
}

int cmd_phantom(const PhantomArgs &a) {
  PhantomSpec s;
  s.depth = a.depth;
  s.root_radius_vox = a.root_radius;
  s.radius_decay = a.decay;
  s.branching_angle_deg = a.angle;
  s.segment_length_vox = split_numbers(a.lengths, 0, "--lengths");
  const auto d = split_numbers(a.dims, 3, "--dims");
  for (double v : d)
    if (v < 1 || v != std::floor(v)) throw UsageError("--dims must be positive integers");
  s.dims = {static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1]), static_cast<std::size_t>(d[2])};
  const auto sp = split_numbers(a.spacing, 3, "--spacing");
  s.spacing = {sp[0], sp[1], sp[2]};
  s.rng_seed = a.seed;
  s.jitter = a.jitter;

  const auto truth = generate(s);
  const fs::path out = a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_mask(truth.mask, out);
  write_text(a.truth.empty() ? default_truth_path(out) : fs::path(a.truth), truth_to_json(truth).dump(2) + "\n");
  std::printf("%zu branches, total length %.3f mm, %llu voxels -> %s\n", truth.branches.size(), truth.total_length_mm,
              static_cast<unsigned long long>(truth.mask.foreground_count()), out.string().c_str());

  if (!a.degrade.empty()) {
    static const std::map<std::string, DegradeMode> modes{{"erase_subtree", DegradeMode::erase_subtree},
                                                          {"break_branch", DegradeMode::break_branch},
                                                          {"dilate", DegradeMode::dilate},
                                                          {"noise_blob", DegradeMode::noise_blob}};
    const auto it = modes.find(a.degrade);
    if (it == modes.end()) throw UsageError("unknown degrade mode " + a.degrade);
    if (a.degraded_out.empty()) throw UsageError("--degrade needs --degraded-out");
    const auto pred = degrade(truth, it->second, {a.branch, a.gap, a.blob});
    const fs::path pout = a.degraded_out;
    if (pout.has_parent_path()) fs::create_directories(pout.parent_path());
    save_mask(pred, pout);
    std::printf("%s -> %s\n", a.degrade.c_str(), pout.string().c_str());
  }
  return kExitOk;
}

// --- skeletonize ----------------------------------------------------------

struct SkeletonizeArgs {
  std::string mask, out, json;
  double threshold = 0.0, min_branch_mm = 0.0;
  unsigned threads = 1;
};

int cmd_skeletonize(const SkeletonizeArgs &a) {
  const auto mask = load_mask(a.mask, a.threshold);
  ThinningOptions opt;
  opt.threads = a.threads;
  const auto g = parse_branches(skeletonize(mask, opt), mask.spacing(), a.min_branch_mm);
  if (!a.out.empty()) save_mask(g.to_mask(), a.out);
  const auto j = skeleton_to_json(g);
  if (!a.json.empty()) write_text(a.json, j.dump(2) + "\n");
  const auto &s = j["summary"];
  std::printf("skeleton voxels %llu\nend points %llu\nbranch points %llu\nbranches %llu\ntree length %.3f mm\n",
              s["skeleton_voxels"].get<unsigned long long>(), s["end_points"].get<unsigned long long>(),
              s["branch_points"].get<unsigned long long>(), s["branches"].get<unsigned long long>(),
              s["tree_length_mm"].get<double>());
  return kExitOk;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Tree-structure segmentation evaluation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  EvalArgs ev;
  auto *eval = app.add_subcommand("eval", "Evaluate one prediction against its ground truth");
  eval->add_option("pred", ev.pred, "Prediction mask")->required();
  eval->add_option("gt", ev.gt, "Ground-truth mask")->required();
  eval->add_option("--json", ev.json, "Write metrics as JSON ('-' for stdout)");
  eval->add_option("--threshold", ev.threshold, "Binarize voxels with value > threshold");
  eval->add_option("--direction", ev.direction, "Coverage direction: reference or prediction");
  eval->add_option("--min-branch-mm", ev.min_branch_mm, "Prune skeleton branches shorter than this")->check(CLI::NonNegativeNumber);
  eval->add_option("--threads", ev.threads, "Threads for thinning")->check(CLI::PositiveNumber);

  BatchArgs ba;
  std::string b_pred, b_gt, b_pairs, b_jobs, b_weights, b_normalize, b_direction, b_threshold, b_min_branch, b_out,
      b_cache;
  auto *batch = app.add_subcommand("batch", "Evaluate every case pair in two directories");
  batch->add_option("--config", ba.config, "key = value config file");
  auto *o_pred = batch->add_option("--pred", b_pred, "Prediction directory");
  auto *o_gt = batch->add_option("--gt", b_gt, "Ground-truth directory");
  auto *o_pairs = batch->add_option("--pairs", b_pairs, "CSV with case_id,pred,gt overriding stem pairing");
  auto *o_jobs = batch->add_option("-j,--jobs", b_jobs, "Concurrent cases (env TREEBENCH_JOBS)")->check(CLI::PositiveNumber);
  auto *o_weights = batch->add_option("--weights", b_weights, "mean, weighted or TD,BD,DSC,Precision");
  auto *o_normalize = batch->add_option("--normalize", b_normalize, "Divide scores by the weight sum (true/false)");
  auto *o_direction = batch->add_option("--direction", b_direction, "Coverage direction: reference or prediction");
  auto *o_threshold = batch->add_option("--threshold", b_threshold, "Binarize voxels with value > threshold");
  auto *o_min_branch = batch->add_option("--min-branch-mm", b_min_branch, "Prune skeleton branches shorter than this");
  auto *o_out = batch->add_option("-o,--out", b_out, "Output directory for results.csv and manifest.json");
  auto *o_cache = batch->add_option("--cache-dir", b_cache, "On-disk ground-truth skeleton cache");
  batch->add_flag("--no-cache", ba.no_cache, "Recompute every ground-truth skeleton");

  LeaderboardArgs la;
  auto *lb = app.add_subcommand("leaderboard", "Rank teams from per-case result files");
  lb->add_option("--team", la.team_files, "NAME=results.csv (repeatable)");
  lb->add_option("--results-dir", la.results_dir, "Directory of <team>.csv files");
  lb->add_option("--combined", la.combined, "One CSV with a team column");
  lb->add_option("--weights", la.weights, "mean, weighted or TD,BD,DSC,Precision");
  lb->add_flag("--no-normalize", la.no_normalize, "Do not divide scores by the weight sum");
  lb->add_option("-o,--out", la.out, "Write board CSV");
  lb->add_option("--json", la.json, "Write board JSON");
  lb->add_option("--plot-data", la.plot_data, "Write per-team metric arrays as JSON");

  std::string board_a, board_b;
  auto *rs = app.add_subcommand("rank-stability", "Kendall tau between two leaderboards");
  rs->add_option("board_a", board_a, "Leaderboard CSV")->required();
  rs->add_option("board_b", board_b, "Leaderboard CSV")->required();

  PhantomArgs pa;
  auto *ph = app.add_subcommand("phantom", "Generate a synthetic bifurcating tree");
  ph->add_option("-o,--out", pa.out, "Mask path (.nii, .nii.gz, .tbm, .tbm.gz)");
  ph->add_option("--truth", pa.truth, "Truth JSON path (default <stem>.truth.json)");
  ph->add_option("--depth", pa.depth, "Bifurcation generations")->check(CLI::Range(0, 10));
  ph->add_option("--root-radius", pa.root_radius, "Root radius in voxels");
  ph->add_option("--decay", pa.decay, "Radius factor per generation");
  ph->add_option("--lengths", pa.lengths, "Segment length per generation, voxels");
  ph->add_option("--angle", pa.angle, "Angle between children, degrees");
  ph->add_option("--dims", pa.dims, "Grid size nx,ny,nz");
  ph->add_option("--spacing", pa.spacing, "Voxel spacing dx,dy,dz in mm");
  ph->add_option("--seed", pa.seed, "RNG seed for jitter");
  ph->add_option("--jitter", pa.jitter, "Relative length/angle jitter");
  ph->add_option("--degrade", pa.degrade, "erase_subtree, break_branch, dilate or noise_blob");
  ph->add_option("--degraded-out", pa.degraded_out, "Path for the degraded mask");
  ph->add_option("--branch", pa.branch, "Branch id for erase_subtree/break_branch");
  ph->add_option("--gap", pa.gap, "Gap length in voxels for break_branch");
  ph->add_option("--blob", pa.blob, "Voxel count for noise_blob");

  SkeletonizeArgs sa;
  auto *sk = app.add_subcommand("skeletonize", "Thin a mask and parse its branches");
  sk->add_option("mask", sa.mask, "Input mask")->required();
  sk->add_option("-o,--out", sa.out, "Write the skeleton mask");
  sk->add_option("--json", sa.json, "Write the parsed graph as JSON ('-' for stdout)");
  sk->add_option("--threshold", sa.threshold, "Binarize voxels with value > threshold");
  sk->add_option("--min-branch-mm", sa.min_branch_mm, "Prune branches shorter than this")->check(CLI::NonNegativeNumber);
  sk->add_option("--threads", sa.threads, "Threads for thinning")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*eval) return cmd_eval(ev);
    if (*batch) {
      auto flag = [&](CLI::Option *o, const std::string &key, const std::string &value) {
        if (o->count()) ba.flags[key] = value;
      };
      flag(o_pred, "pred", b_pred);
      flag(o_gt, "gt", b_gt);
      flag(o_pairs, "pairs", b_pairs);
      flag(o_jobs, "jobs", b_jobs);
      flag(o_weights, "weights", b_weights);
      flag(o_normalize, "normalize", b_normalize);
      flag(o_direction, "direction", b_direction);
      flag(o_threshold, "threshold", b_threshold);
      flag(o_min_branch, "min_branch_mm", b_min_branch);
      flag(o_out, "out", b_out);
      flag(o_cache, "cache_dir", b_cache);
      return cmd_batch(ba);
    }
    if (*lb) return cmd_leaderboard(la);
    if (*rs) return cmd_rank_stability(board_a, board_b);
    if (*ph) return cmd_phantom(pa);
    if (*sk) return cmd_skeletonize(sa);
  } catch (const UsageError &e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument &e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
