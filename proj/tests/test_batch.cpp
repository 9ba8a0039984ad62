#include <treebench/batch.hpp>
#include <treebench/phantom.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

using namespace treebench;
namespace fs = std::filesystem;

namespace {

PhantomSpec small_spec(std::uint64_t seed) {
  PhantomSpec s;
  s.depth = 1;
  s.segment_length_vox = {12, 10};
  s.dims = {40, 40, 40};
  s.jitter = 0.2;
  s.rng_seed = seed;
  return s;
}

class Batch : public ::testing::Test {
protected:
  void SetUp() override {
    root = fs::temp_directory_path() /
           ("treebench_batch_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root);
    fs::create_directories(root / "pred");
    fs::create_directories(root / "gt");
  }
  void TearDown() override { fs::remove_all(root); }

  // Writes n phantom pairs with a mix of degradations.
  void write_cases(int n) {
    for (int i = 0; i < n; ++i) {
      const auto t = generate(small_spec(static_cast<std::uint64_t>(i)));
      const auto id = "case_" + std::string(i < 10 ? "0" : "") + std::to_string(i);
      save_mask(t.mask, root / "gt" / (id + ".nii.gz"));
      const auto mode = static_cast<DegradeMode>(i % 4);
      save_mask(degrade(t, mode, {.branch = static_cast<std::size_t>(1 + i % 2)}), root / "pred" / (id + ".tbm.gz"));
    }
  }

  RunConfig config(std::size_t jobs) const {
    RunConfig c;
    c.pred_dir = root / "pred";
    c.gt_dir = root / "gt";
    c.jobs = jobs;
    return c;
  }

  fs::path root;
};

}  // namespace

TEST_F(Batch, ResultsIndependentOfJobCount) {
  write_cases(12);
  const auto pairs = pair_by_stem(root / "pred", root / "gt");
  ASSERT_EQ(pairs.size(), 12u);
  const auto one = results_csv(run_batch(pairs, config(1), nullptr));
  for (std::size_t jobs : {4u, 8u}) {
    SkeletonCache cache;
    EXPECT_EQ(results_csv(run_batch(pairs, config(jobs), &cache)), one);
  }
  EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 13);
}

TEST_F(Batch, PartialFailuresAreRecorded) {
  write_cases(4);
  std::ofstream(root / "gt" / "case_02.nii.gz", std::ios::trunc) << "garbage";
  save_mask(VoxelMask({4, 4, 4}, {1, 1, 1}), root / "pred" / "orphan.nii");
  const auto cfg = config(2);
  const auto records = run_batch(discover_pairs(cfg), cfg, nullptr);
  ASSERT_EQ(records.size(), 5u);
  std::size_t ok = 0;
  for (const auto &r : records) {
    ok += r.ok();
    if (r.pair.case_id == "case_02") EXPECT_NE(r.error.find("case_02.nii.gz"), std::string::npos) << r.error;
    if (r.pair.case_id == "orphan") EXPECT_EQ(r.error, "no ground truth for case orphan");
  }
  EXPECT_EQ(ok, 3u);
  const auto m = manifest_json(cfg, records);
  EXPECT_EQ(m["summary"]["cases"], 5);
  EXPECT_EQ(m["summary"]["ok"], 3);
  EXPECT_EQ(m["summary"]["error"], 2);
  EXPECT_EQ(m["cases"].size(), 5u);
  EXPECT_EQ(m["cases"][2]["case_id"], "case_02");
  EXPECT_EQ(m["cases"][2]["status"], "error");
  const auto csv = results_csv(records);
  EXPECT_NE(csv.find("\ncase_02,NA,"), std::string::npos);
}

TEST_F(Batch, PairsCsvResolvesRelativePaths) {
  write_cases(2);
  std::ofstream(root / "pairs.csv") << "case_id,pred,gt\n"
                                    << "b,pred/case_00.tbm.gz,gt/case_01.nii.gz\n"
                                    << "a,pred/case_00.tbm.gz,gt/case_00.nii.gz\n";
  const auto pairs = pairs_from_csv(root / "pairs.csv");
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].case_id, "a");
  EXPECT_EQ(pairs[0].gt, root / "gt" / "case_00.nii.gz");
  std::ofstream(root / "dup.csv") << "case_id,pred,gt\na,x,y\na,x,z\n";
  EXPECT_THROW(pairs_from_csv(root / "dup.csv"), DataError);
}

TEST_F(Batch, EmptyDirectoryHasNoCases) { EXPECT_TRUE(pair_by_stem(root / "pred", root / "gt").empty()); }

TEST_F(Batch, ConcurrentCacheRequestsComputeOnce) {
  SkeletonCache cache(root / "cache");
  std::atomic<int> thins{0}, parses{0};
  const VoxelMask line = [] {
    VoxelMask m({3, 3, 8}, {1, 1, 1});
    for (int z = 1; z < 7; ++z) m.set(1, 1, z, true);
    return m;
  }();
  auto thin_fn = [&] {
    ++thins;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    return line;
  };
  auto parse_fn = [&](const VoxelMask &s) {
    ++parses;
    return parse_branches(skeleton_from_mask(s), s.spacing());
  };
  std::vector<std::thread> pool;
  std::vector<SkeletonCache::Ptr> got(8);
  for (int i = 0; i < 8; ++i) pool.emplace_back([&, i] { got[i] = cache.get("k", thin_fn, parse_fn); });
  for (auto &t : pool) t.join();
  EXPECT_EQ(thins, 1);
  EXPECT_EQ(parses, 1);
  for (const auto &p : got) EXPECT_EQ(p, got[0]);
  EXPECT_EQ(cache.misses(), 1u);
  EXPECT_EQ(cache.memory_hits(), 7u);
  EXPECT_TRUE(fs::exists(root / "cache" / "k.tbm.gz"));

  SkeletonCache again(root / "cache");
  const auto p = again.get("k", thin_fn, parse_fn);
  EXPECT_EQ(thins, 1);
  EXPECT_EQ(again.disk_hits(), 1u);
  EXPECT_EQ(p->branches.size(), 1u);
}

TEST_F(Batch, DiskCacheGivesSameResults) {
  write_cases(4);
  const auto pairs = pair_by_stem(root / "pred", root / "gt");
  SkeletonCache cold(root / "cache");
  const auto first = results_csv(run_batch(pairs, config(1), &cold));
  EXPECT_EQ(cold.misses(), 4u);
  SkeletonCache warm(root / "cache");
  EXPECT_EQ(results_csv(run_batch(pairs, config(2), &warm)), first);
  EXPECT_EQ(warm.disk_hits(), 4u);
  EXPECT_EQ(warm.misses(), 0u);
}

TEST(Config, ParsesKeyValueText) {
  const auto kv = parse_config_text("# comment\n[batch]\njobs = 3\nweights = \"weighted\"  # trailing\nnormalize=false\n");
  EXPECT_EQ(kv.at("jobs"), "3");
  EXPECT_EQ(kv.at("weights"), "weighted");
  RunConfig c;
  for (const auto &[k, v] : kv) apply_setting(c, k, v);
  EXPECT_EQ(c.jobs, 3u);
  EXPECT_EQ(c.preset, WeightPreset::weighted);
  EXPECT_FALSE(c.normalize);
  EXPECT_THROW(parse_config_text("novalue\n"), std::invalid_argument);
  EXPECT_THROW(apply_setting(c, "colour", "red"), std::invalid_argument);
  EXPECT_THROW(apply_setting(c, "jobs", "0"), std::invalid_argument);
  EXPECT_THROW(apply_setting(c, "jobs", "2.5"), std::invalid_argument);
  EXPECT_THROW(apply_setting(c, "direction", "sideways"), std::invalid_argument);
}

TEST(Config, WeightsAndKeys) {
  EXPECT_EQ(parse_weights("mean").second, ScoreWeights::mean_score());
  const auto [preset, w] = parse_weights("1,1,0,0");
  EXPECT_EQ(preset, WeightPreset::custom);
  EXPECT_EQ(w, (ScoreWeights{1, 1, 0, 0}));
  EXPECT_THROW(parse_weights("1,2,3"), std::invalid_argument);
  EXPECT_THROW(parse_weights("0,0,0,0"), std::invalid_argument);

  RunConfig a, b;
  b.eval.min_branch_mm = 2;
  EXPECT_NE(skeleton_cache_key(1, a), skeleton_cache_key(1, b));
  EXPECT_NE(skeleton_cache_key(1, a), skeleton_cache_key(2, a));
  EXPECT_EQ(skeleton_cache_key(1, a), skeleton_cache_key(1, RunConfig{}));
}

TEST(Hash, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a64(std::string_view("")), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64(std::string_view("a")), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
