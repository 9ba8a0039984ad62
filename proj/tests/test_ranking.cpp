#include <treebench/ranking.hpp>

#include "support/oracles.hpp"
#include "support/published.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace treebench;

namespace {

CaseOutcome ok_case(const std::string &id, double td, double bd, double dsc, double prec) {
  CaseMetrics m;
  m.case_id = id;
  m.td = td;
  m.bd = bd;
  m.dsc = dsc;
  m.precision = prec;
  m.sen = 50;
  m.spe = 99;
  return {id, m, {}};
}

// Pair-count tau-b written from the definition.
double tau_b_oracle(const std::vector<double> &a, const std::vector<double> &b) {
  long nc = 0, nd = 0, ta = 0, tb = 0;
  const auto n = a.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const int sa = (a[i] > a[j]) - (a[i] < a[j]), sb = (b[i] > b[j]) - (b[i] < b[j]);
      if (sa * sb > 0) ++nc;
      if (sa * sb < 0) ++nd;
      if (sa == 0) ++ta;
      if (sb == 0) ++tb;
    }
  const double pairs = static_cast<double>(n * (n - 1));  // ordered pairs
  return static_cast<double>(nc - nd) / std::sqrt((pairs - static_cast<double>(ta)) * (pairs - static_cast<double>(tb)));
}

std::vector<TeamAggregate> teams_of(const std::vector<published::PublishedTeam> &phase) {
  std::vector<TeamAggregate> out;
  for (const auto &t : phase) out.push_back(aggregate_from_means(t.name, t.means));
  return out;
}

}  // namespace

TEST(Aggregate, SingleCaseAndPopulationStd) {
  const auto one = aggregate("a", {ok_case("c1", 80, 70, 60, 50)});
  EXPECT_EQ(one[Metric::td].mean, 80);
  EXPECT_EQ(one[Metric::td].std, 0);
  const auto two = aggregate("a", {ok_case("c1", 80, 0, 0, 0), ok_case("c2", 100, 0, 0, 0)});
  EXPECT_DOUBLE_EQ(two[Metric::td].mean, 90);
  EXPECT_DOUBLE_EQ(two[Metric::td].std, 10);
}

TEST(Aggregate, ErrorCasesExcludedAndListed) {
  const auto agg = aggregate("a", {ok_case("c1", 80, 0, 0, 0), {"c2", std::nullopt, "boom"}, ok_case("c3", 90, 0, 0, 0)});
  EXPECT_EQ(agg.n_cases, 2u);
  EXPECT_EQ(agg.error_cases, std::vector<std::string>{"c2"});
  EXPECT_DOUBLE_EQ(agg[Metric::td].mean, 85);
  const auto dead = aggregate("b", {{"c1", std::nullopt, "x"}});
  EXPECT_FALSE(dead.rankable());
  EXPECT_THROW(aggregate("c", {}), std::invalid_argument);
}

TEST(Aggregate, MatchesTwoPassOracle) {
  oracle::Rng rng(50);
  std::vector<CaseOutcome> cases;
  std::vector<double> td;
  for (int i = 0; i < 50; ++i) {
    td.push_back(100 * rng.uniform());
    cases.push_back(ok_case("c" + std::to_string(i), td.back(), 1, 2, 3));
  }
  double mean = 0;
  for (double v : td) mean += v;
  mean /= 50;
  double var = 0;
  for (double v : td) var += (v - mean) * (v - mean);
  const auto agg = aggregate("t", cases);
  EXPECT_NEAR(agg[Metric::td].mean, mean, 1e-12);
  EXPECT_NEAR(agg[Metric::td].std, std::sqrt(var / 50), 1e-12);
  const auto [lo, hi] = std::minmax_element(td.begin(), td.end());
  EXPECT_GE(agg[Metric::td].mean, *lo);
  EXPECT_LE(agg[Metric::td].mean, *hi);
}

TEST(Score, PublishedMeanScores) {
  EXPECT_NEAR(score(aggregate_from_means("timi", {95.919, 94.729, 93.910, 93.553}), ScoreWeights::mean_score()),
              94.5278, 1e-3);
  EXPECT_NEAR(score(aggregate_from_means("YangLab", {94.512, 91.920, 94.800, 94.707}), ScoreWeights::mean_score()),
              93.9848, 1e-3);
  EXPECT_EQ(score(aggregate_from_means("z", {0, 0, 0, 0}), ScoreWeights::weighted_score(), false), 0.0);
}

TEST(Score, WeightedPresetNormalization) {
  const auto deeptree = aggregate_from_means("deeptree_damo", {97.853, 97.129, 92.819, 87.928});
  EXPECT_NEAR(score(deeptree, ScoreWeights::weighted_score(), false), 85.607, 1e-3);
  EXPECT_NEAR(score(deeptree, ScoreWeights::weighted_score(), true), 85.607 / 0.9, 1e-3);
  EXPECT_THROW(score(deeptree, {0, 0, 0, 0}), std::invalid_argument);
  EXPECT_THROW(score(deeptree, {-1, 1, 1, 1}), std::invalid_argument);
}

TEST(Score, LinearInCases) {
  oracle::Rng rng(51);
  std::vector<CaseOutcome> cases;
  double per_case = 0;
  for (int i = 0; i < 30; ++i) {
    const double a = 100 * rng.uniform(), b = 100 * rng.uniform(), c = 100 * rng.uniform(), d = 100 * rng.uniform();
    cases.push_back(ok_case(std::to_string(i), a, b, c, d));
    per_case += (a + b + c + d) / 4;
  }
  EXPECT_NEAR(score(aggregate("t", cases), ScoreWeights::mean_score()), per_case / 30, 1e-9);
}

TEST(Rank, TiesShareRankAlphabetically) {
  const auto board = rank({aggregate_from_means("zeta", {90, 90, 90, 90}), aggregate_from_means("alpha", {90, 90, 90, 90}),
                           aggregate_from_means("mid", {80, 80, 80, 80}), aggregate_from_means("top", {95, 95, 95, 95})},
                          ScoreWeights::mean_score());
  ASSERT_EQ(board.entries.size(), 4u);
  EXPECT_EQ(board.entries[0].team_id, "top");
  EXPECT_EQ(board.entries[1].team_id, "alpha");
  EXPECT_EQ(board.entries[2].team_id, "zeta");
  EXPECT_EQ(board.entries[1].rank, 2u);
  EXPECT_EQ(board.entries[2].rank, 2u);
  EXPECT_EQ(board.entries[3].rank, 4u);

  const auto pair = rank({aggregate_from_means("b", {1, 1, 1, 1}), aggregate_from_means("a", {1, 1, 1, 1}),
                          aggregate_from_means("c", {0, 0, 0, 0})},
                         ScoreWeights::mean_score());
  EXPECT_EQ(pair.entries[0].rank, 1u);
  EXPECT_EQ(pair.entries[1].rank, 1u);
  EXPECT_EQ(pair.entries[2].rank, 3u);
}

TEST(Rank, SingleTeamAndUnrankable) {
  const auto board = rank({aggregate_from_means("solo", {1, 2, 3, 4}), aggregate("dead", {{"c", std::nullopt, "x"}})},
                          ScoreWeights::mean_score());
  ASSERT_EQ(board.entries.size(), 1u);
  EXPECT_EQ(board.entries[0].rank, 1u);
  EXPECT_EQ(board.unranked, std::vector<std::string>{"dead"});
  EXPECT_THROW(rank({aggregate("dead", {{"c", std::nullopt, "x"}})}, ScoreWeights::mean_score()),
               std::invalid_argument);
}

TEST(Rank, PublishedTestPhaseOrder) {
  const auto board = rank(teams_of(published::kTestPhase), ScoreWeights::mean_score());
  std::vector<std::string> got;
  for (const auto &e : board.entries) got.push_back(e.team_id);
  EXPECT_EQ(got, published::order_of(published::kTestPhase));
  EXPECT_NEAR(board.entries[0].score, 94.5278, 1e-3);
}

TEST(Rank, OrderInvariantUnderWeightScaling) {
  oracle::Rng rng(52);
  std::vector<TeamAggregate> teams;
  for (int i = 0; i < 25; ++i)
    teams.push_back(aggregate_from_means("t" + std::to_string(i),
                                         {100 * rng.uniform(), 100 * rng.uniform(), 100 * rng.uniform(), 100 * rng.uniform()}));
  const ScoreWeights w{0.3, 0.3, 0.15, 0.15};
  const auto base = rank(teams, w, true);
  for (double k : {0.5, 3.0, 10.0}) {
    for (bool norm : {true, false}) {
      const auto b = rank(teams, {w.td * k, w.bd * k, w.dsc * k, w.precision * k}, norm);
      for (std::size_t i = 0; i < b.entries.size(); ++i) ASSERT_EQ(b.entries[i].team_id, base.entries[i].team_id);
    }
  }
}

TEST(Kendall, IdenticalAndReversed) {
  std::vector<std::string> order;
  for (int i = 0; i < 20; ++i) order.push_back("team" + std::to_string(i));
  const auto a = board_from_order(order);
  EXPECT_DOUBLE_EQ(kendall_tau(a, a).tau, 1.0);
  std::reverse(order.begin(), order.end());
  const auto r = kendall_tau(a, board_from_order(order));
  EXPECT_DOUBLE_EQ(r.tau, -1.0);
  EXPECT_EQ(r.discordant, 190u);
}

TEST(Kendall, AllTiedRankingIsUndefined) {
  EXPECT_THROW(kendall_tau({1, 1, 1}, {1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(kendall_tau({1, 2, 3}, {2, 2, 2}), std::invalid_argument);
  EXPECT_NO_THROW(kendall_tau({1, 1, 3}, {1, 2, 3}));
}

// Reference values from scipy.stats.kendalltau(method="asymptotic").
TEST(Kendall, FrozenAsymptoticValues) {
  const auto vt = kendall_tau(board_from_order(published::order_of(published::kValidationPhase)),
                              board_from_order(published::order_of(published::kTestPhase)));
  EXPECT_EQ(vt.discordant, 38u);
  EXPECT_EQ(vt.concordant, 152u);
  EXPECT_NEAR(vt.tau, 0.6000000000000001, 1e-15);
  EXPECT_NEAR(vt.p_value, 0.00021675060709568453, 1e-15);

  const auto mw = kendall_tau(board_from_order(published::order_of(published::kTestPhase)),
                              board_from_order(published::kTestWeightedOrder));
  EXPECT_EQ(mw.discordant, 3u);
  EXPECT_NEAR(mw.tau, 0.968421052631579, 1e-15);
  EXPECT_NEAR(mw.p_value, 2.376198819433605e-09, 1e-20);

  const auto ties = kendall_tau(std::vector<double>{1, 1, 3, 4, 5, 5, 7}, std::vector<double>{2, 1, 3, 3, 5, 6, 7});
  EXPECT_NEAR(ties.tau, 0.9233805168766385, 1e-15);
  EXPECT_NEAR(ties.p_value, 0.0051651482400090695, 1e-15);

  const auto small = kendall_tau(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2});
  EXPECT_NEAR(small.tau, 0.33333333333333337, 1e-15);
  EXPECT_NEAR(small.p_value, 0.6015081344405899, 1e-14);
}

TEST(Kendall, MatchesPairCountOracleAndIsSymmetric) {
  oracle::Rng rng(53);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = rng.between(2, 50);
    std::vector<double> a(n), b(n);
    const auto levels = rng.chance(0.5) ? n : rng.between(2, 6);  // sometimes heavy ties
    for (auto &v : a) v = static_cast<double>(rng.below(levels));
    for (auto &v : b) v = static_cast<double>(rng.below(levels));
    const bool constant = std::all_of(a.begin(), a.end(), [&](double v) { return v == a[0]; }) ||
                          std::all_of(b.begin(), b.end(), [&](double v) { return v == b[0]; });
    if (constant) {
      ASSERT_THROW(kendall_tau(a, b), std::invalid_argument);
      continue;
    }
    const auto ab = kendall_tau(a, b), ba = kendall_tau(b, a);
    ASSERT_NEAR(ab.tau, tau_b_oracle(a, b), 1e-12);
    ASSERT_DOUBLE_EQ(ab.tau, ba.tau);
    ASSERT_DOUBLE_EQ(ab.p_value, ba.p_value);
    ASSERT_GE(ab.tau, -1.0);
    ASSERT_LE(ab.tau, 1.0);
  }
}

TEST(Kendall, TeamSetMismatch) {
  EXPECT_THROW(kendall_tau(board_from_order({"a", "b", "c"}), board_from_order({"a", "b", "d"})),
               std::invalid_argument);
  EXPECT_THROW(kendall_tau(board_from_order({"a", "b"}), board_from_order({"a", "b", "c"})), std::invalid_argument);
  EXPECT_THROW(kendall_tau(board_from_order({"a", "a"}), board_from_order({"a", "b"})), std::invalid_argument);
}

TEST(Csv, ResultsWithTeamColumnAndErrors) {
  const std::string text =
      "\xEF\xBB\xBFteam,case_id,TD,BD,DSC,Precision,Sen,Spe\n"
      "a,c1,90,80,70,60,50,99\n"
      "a,c2,NA,NA,NA,NA,NA,NA\n"
      "\"b\",c1,100,100,100,100,100,100\n";
  const auto parsed = parse_results_csv(text);
  ASSERT_EQ(parsed.size(), 2u);
  ASSERT_EQ(parsed.at("a").size(), 2u);
  EXPECT_FALSE(parsed.at("a")[1].metrics.has_value());
  EXPECT_EQ(parsed.at("a")[0].metrics->bd, 80);
  EXPECT_THROW(parse_results_csv("case_id,TD\nc1,1\n", "x"), DataError);
  EXPECT_THROW(parse_results_csv("case_id,TD,BD,DSC,Precision,Sen,Spe\nc1,1,2,3,4,5,6\n"), DataError);
  EXPECT_EQ(parse_results_csv("case_id,TD,BD,DSC,Precision,Sen,Spe\nc1,1,2,3,4,5,6\n", "solo").count("solo"), 1u);
}

TEST(Csv, BoardRoundTrip) {
  const auto board = rank(teams_of(published::kValidationPhase), ScoreWeights::mean_score());
  const auto csv = board_to_csv(board);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kBoardCsvHeader);
  EXPECT_NE(csv.find("\n1,timi,94.704,95.866,0.000,"), std::string::npos);
  const auto back = parse_board_csv(csv);
  ASSERT_EQ(back.entries.size(), board.entries.size());
  for (std::size_t i = 0; i < back.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].team_id, board.entries[i].team_id);
    EXPECT_EQ(back.entries[i].rank, board.entries[i].rank);
  }
  EXPECT_DOUBLE_EQ(kendall_tau(back, board).tau, 1.0);
  const auto j = board_to_json(board);
  EXPECT_EQ(j["entries"][0]["team"], "timi");
  EXPECT_DOUBLE_EQ(j["entries"][0]["score"].get<double>(), 94.704);
}
