/*
 * Team-level aggregation, leaderboard scores and rank-stability analysis.
 */
#ifndef TREEBENCH_RANKING_HPP
#define TREEBENCH_RANKING_HPP

#include <treebench/metrics.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace treebench {

enum class Metric : std::size_t { td, bd, dsc, precision, sen, spe };
inline constexpr std::size_t kMetricCount = 6;
inline constexpr std::array<const char *, kMetricCount> kMetricNames{"TD", "BD", "DSC", "Precision", "Sen", "Spe"};

inline double metric_value(const CaseMetrics &m, Metric k) {
  switch (k) {
    case Metric::td: return m.td;
    case Metric::bd: return m.bd;
    case Metric::dsc: return m.dsc;
    case Metric::precision: return m.precision;
    case Metric::sen: return m.sen;
    case Metric::spe: return m.spe;
  }
  return 0.0;
}

// One evaluated (or failed) case as seen by the ranking layer.
struct CaseOutcome {
  std::string case_id;
  std::optional<CaseMetrics> metrics;  // empty when the case errored
  std::string error;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct TeamAggregate {
  std::string team_id;
  std::array<MeanStd, kMetricCount> stats{};
  std::size_t n_cases = 0;
  std::vector<std::string> error_cases;
  std::array<std::vector<double>, kMetricCount> values;  // per-case values, in input order

  bool rankable() const { return n_cases > 0; }
  const MeanStd &operator[](Metric k) const { return stats[static_cast<std::size_t>(k)]; }
};

// Mean and population standard deviation (divisor N) of each metric over
// the successful cases.
inline TeamAggregate aggregate(const std::string &team_id, const std::vector<CaseOutcome> &cases) {
  if (cases.empty()) throw std::invalid_argument("aggregate: team '" + team_id + "' has no cases");
  TeamAggregate agg;
  agg.team_id = team_id;
  for (const auto &c : cases) {
    if (!c.metrics) {
      agg.error_cases.push_back(c.case_id);
      continue;
    }
    ++agg.n_cases;
    for (std::size_t k = 0; k < kMetricCount; ++k)
      agg.values[k].push_back(metric_value(*c.metrics, static_cast<Metric>(k)));
  }
  if (agg.n_cases == 0) return agg;
  const double n = static_cast<double>(agg.n_cases);
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    double sum = 0.0;
    for (double v : agg.values[k]) sum += v;
    const double mean = sum / n;
    double ss = 0.0;
    for (double v : agg.values[k]) ss += (v - mean) * (v - mean);
    agg.stats[k] = {mean, std::sqrt(ss / n)};
  }
  return agg;
}

// Aggregate built directly from published means (no per-case data).
inline TeamAggregate aggregate_from_means(const std::string &team_id, const std::array<double, 4> &td_bd_dsc_prec) {
  CaseMetrics m;
  m.case_id = team_id;
  m.td = td_bd_dsc_prec[0];
  m.bd = td_bd_dsc_prec[1];
  m.dsc = td_bd_dsc_prec[2];
  m.precision = td_bd_dsc_prec[3];
  return aggregate(team_id, {{team_id, m, {}}});
}

struct ScoreWeights {
  double td = 0.25;
  double bd = 0.25;
  double dsc = 0.25;
  double precision = 0.25;

  double sum() const { return td + bd + dsc + precision; }
  bool valid() const {
    return td >= 0 && bd >= 0 && dsc >= 0 && precision >= 0 && sum() > 0 && std::isfinite(sum());
  }
  bool operator==(const ScoreWeights &) const = default;

  static ScoreWeights mean_score() { return {0.25, 0.25, 0.25, 0.25}; }
  static ScoreWeights weighted_score() { return {0.30, 0.30, 0.15, 0.15}; }
};

inline double score(const TeamAggregate &agg, const ScoreWeights &w, bool normalize = true) {
  if (!w.valid()) throw std::invalid_argument("score weights must be non-negative with a positive sum");
  const double s = w.td * agg[Metric::td].mean + w.bd * agg[Metric::bd].mean + w.dsc * agg[Metric::dsc].mean +
                   w.precision * agg[Metric::precision].mean;
  return normalize ? s / w.sum() : s;
}

struct LeaderboardEntry {
  std::size_t rank = 0;
  std::string team_id;
  double score = 0.0;
  TeamAggregate aggregate;
};

struct Leaderboard {
  std::vector<LeaderboardEntry> entries;
  ScoreWeights weights;
  bool normalize = true;
  std::vector<std::string> unranked;  // teams with no successful case
};

// Descending score; exact ties share a rank (1, 1, 3) and are listed
// alphabetically by team id.
inline Leaderboard rank(const std::vector<TeamAggregate> &teams, const ScoreWeights &w, bool normalize = true) {
  Leaderboard board;
  board.weights = w;
  board.normalize = normalize;
  for (const auto &t : teams) {
    if (!t.rankable()) {
      board.unranked.push_back(t.team_id);
      continue;
    }
    board.entries.push_back({0, t.team_id, score(t, w, normalize), t});
  }
  if (board.entries.empty()) throw std::invalid_argument("rank: no rankable team");
  std::sort(board.entries.begin(), board.entries.end(), [](const auto &a, const auto &b) {
    if (a.score != b.score) return a.score > b.score;
    return a.team_id < b.team_id;
  });
  for (std::size_t i = 0; i < board.entries.size(); ++i) {
    board.entries[i].rank =
        (i > 0 && board.entries[i].score == board.entries[i - 1].score) ? board.entries[i - 1].rank : i + 1;
  }
  return board;
}

struct KendallResult {
  double tau = 0.0;
  double p_value = 1.0;
  std::size_t concordant = 0;
  std::size_t discordant = 0;
  std::size_t n = 0;
};

// Kendall's tau-b between two rank vectors over the same items, with the
// two-sided p-value from the normal approximation (tie-corrected variance).
inline KendallResult kendall_tau(const std::vector<double> &a, const std::vector<double> &b) {
  if (a.size() != b.size()) throw std::invalid_argument("kendall_tau: length mismatch");
  const std::size_t n = a.size();
  KendallResult r;
  r.n = n;
  if (n < 2) throw std::invalid_argument("kendall_tau: need at least two items");
  std::size_t ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0 && db == 0) {
        ++ties_a;
        ++ties_b;
      } else if (da == 0) {
        ++ties_a;
      } else if (db == 0) {
        ++ties_b;
      } else if ((da > 0) == (db > 0)) {
        ++r.concordant;
      } else {
        ++r.discordant;
      }
    }
  }
  const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double s = static_cast<double>(r.concordant) - static_cast<double>(r.discordant);
  const double denom = std::sqrt((n0 - static_cast<double>(ties_a)) * (n0 - static_cast<double>(ties_b)));
  if (denom == 0) throw std::invalid_argument("kendall_tau: undefined when every item in a ranking is tied");
  r.tau = s / denom;

  // Tie-group sums for the variance of S.
  auto tie_sums = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::array<double, 3> sums{};  // t(t-1)/2, t(t-1)(t-2), t(t-1)(2t+5)
    for (std::size_t i = 0; i < v.size();) {
      std::size_t j = i;
      while (j < v.size() && v[j] == v[i]) ++j;
      const double t = static_cast<double>(j - i);
      sums[0] += t * (t - 1) / 2;
      sums[1] += t * (t - 1) * (t - 2);
      sums[2] += t * (t - 1) * (2 * t + 5);
      i = j;
    }
    return sums;
  };
  const auto ta = tie_sums(a), tb = tie_sums(b);
  const double nn = static_cast<double>(n);
  const double m = nn * (nn - 1);
  double var = (m * (2 * nn + 5) - ta[2] - tb[2]) / 18.0 + (2 * ta[0] * tb[0]) / m;
  if (n > 2) var += ta[1] * tb[1] / (9 * m * (nn - 2));
  r.p_value = var > 0 ? std::erfc(std::abs(s) / std::sqrt(var) / std::sqrt(2.0)) : 1.0;
  return r;
}

inline KendallResult kendall_tau(const Leaderboard &a, const Leaderboard &b) {
  std::map<std::string, double> ra, rb;
  for (const auto &e : a.entries) ra[e.team_id] = static_cast<double>(e.rank);
  for (const auto &e : b.entries) rb[e.team_id] = static_cast<double>(e.rank);
  if (ra.size() != a.entries.size() || rb.size() != b.entries.size())
    throw std::invalid_argument("kendall_tau: duplicate team in leaderboard");
  if (ra.size() != rb.size() || !std::equal(ra.begin(), ra.end(), rb.begin(), [](auto &x, auto &y) {
        return x.first == y.first;
      }))
    throw std::invalid_argument("kendall_tau: leaderboards rank different team sets");
  std::vector<double> va, vb;
  for (const auto &[team, r] : ra) {
    va.push_back(r);
    vb.push_back(rb.at(team));
  }
  return kendall_tau(va, vb);
}

// Board built from an explicit ordering (rank i+1 for the i-th team).
inline Leaderboard board_from_order(const std::vector<std::string> &order) {
  Leaderboard b;
  for (std::size_t i = 0; i < order.size(); ++i) b.entries.push_back({i + 1, order[i], 0.0, {}});
  return b;
}

inline const char *kBoardCsvHeader =
    "rank,team,score,TD_mean,TD_std,BD_mean,BD_std,DSC_mean,DSC_std,Precision_mean,Precision_std";

inline std::string board_to_csv(const Leaderboard &b) {
  std::string out = std::string(kBoardCsvHeader) + "\n";
  for (const auto &e : b.entries) {
    out += std::to_string(e.rank) + "," + e.team_id + "," + fmt3(e.score);
    for (auto k : {Metric::td, Metric::bd, Metric::dsc, Metric::precision})
      out += "," + fmt3(e.aggregate[k].mean) + "," + fmt3(e.aggregate[k].std);
    out += "\n";
  }
  return out;
}

inline nlohmann::ordered_json board_to_json(const Leaderboard &b) {
  auto r3 = [](double v) { return std::stod(fmt3(v)); };
  nlohmann::ordered_json j;
  j["weights"] = {{"TD", b.weights.td}, {"BD", b.weights.bd}, {"DSC", b.weights.dsc}, {"Precision", b.weights.precision}};
  j["normalize"] = b.normalize;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto &e : b.entries) {
    nlohmann::ordered_json r;
    r["rank"] = e.rank;
    r["team"] = e.team_id;
    r["score"] = r3(e.score);
    r["n_cases"] = e.aggregate.n_cases;
    for (auto k : {Metric::td, Metric::bd, Metric::dsc, Metric::precision}) {
      const auto name = kMetricNames[static_cast<std::size_t>(k)];
      r[name] = {{"mean", r3(e.aggregate[k].mean)}, {"std", r3(e.aggregate[k].std)}};
    }
    r["error_cases"] = e.aggregate.error_cases;
    rows.push_back(std::move(r));
  }
  j["entries"] = std::move(rows);
  j["unranked"] = b.unranked;
  return j;
}

// Per-team metric arrays for external box plots.
inline nlohmann::ordered_json plot_data_json(const Leaderboard &b) {
  nlohmann::ordered_json j;
  for (const auto &e : b.entries) {
    nlohmann::ordered_json t;
    for (auto k : {Metric::td, Metric::bd, Metric::dsc, Metric::precision}) {
      const auto i = static_cast<std::size_t>(k);
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (double v : e.aggregate.values[i]) arr.push_back(std::stod(fmt3(v)));
      t[kMetricNames[i]] = std::move(arr);
    }
    j[e.team_id] = std::move(t);
  }
  return j;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Comma-separated fields; double quotes may wrap a field containing commas.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
};

inline CsvTable parse_csv(const std::string &text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) fields[0].erase(0, 3);
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw DataError("csv row has " + std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw DataError("csv is empty");
  return t;
}

inline double parse_number(const std::string &s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception &) {
    throw DataError("not a number: '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) throw DataError("not a number: '" + s + "'");
  return v;
}

}  // namespace detail

// Per-case results keyed by team. Without a `team` column every row belongs
// to `default_team`. Rows whose metric fields are NA (or empty) are error
// cases. Only case_id and the six metric columns are read.
inline std::map<std::string, std::vector<CaseOutcome>> parse_results_csv(const std::string &text,
                                                                         const std::string &default_team = {}) {
  const auto t = detail::parse_csv(text);
  const auto team_col = t.column("team");
  const auto case_col = t.column("case_id");
  if (!team_col && default_team.empty()) throw DataError("results csv has no team column");
  std::array<std::size_t, kMetricCount> cols{};
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    const auto c = t.column(kMetricNames[k]);
    if (!c) throw DataError(std::string("results csv is missing column ") + kMetricNames[k]);
    cols[k] = *c;
  }
  std::map<std::string, std::vector<CaseOutcome>> out;
  std::size_t row_no = 0;
  for (const auto &row : t.rows) {
    ++row_no;
    CaseOutcome c;
    c.case_id = case_col ? row[*case_col] : "row" + std::to_string(row_no);
    const std::string team = team_col ? row[*team_col] : default_team;
    if (team.empty()) throw DataError("empty team name in results csv row " + std::to_string(row_no));
    bool failed = false;
    std::array<double, kMetricCount> v{};
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      const auto &f = row[cols[k]];
      if (f.empty() || f == "NA" || f == "na" || f == "NaN") {
        failed = true;
        break;
      }
      v[k] = detail::parse_number(f);
    }
    if (failed) {
      c.error = "NA";
    } else {
      CaseMetrics m;
      m.case_id = c.case_id;
      m.td = v[0];
      m.bd = v[1];
      m.dsc = v[2];
      m.precision = v[3];
      m.sen = v[4];
      m.spe = v[5];
      c.metrics = std::move(m);
    }
    out[team].push_back(std::move(c));
  }
  return out;
}

// Leaderboard csv as written by board_to_csv; only rank, team and score are read.
inline Leaderboard parse_board_csv(const std::string &text) {
  const auto t = detail::parse_csv(text);
  const auto rank_col = t.column("rank"), team_col = t.column("team"), score_col = t.column("score");
  if (!rank_col || !team_col) throw DataError("leaderboard csv needs rank and team columns");
  Leaderboard b;
  for (const auto &row : t.rows) {
    LeaderboardEntry e;
    const double r = detail::parse_number(row[*rank_col]);
    if (r < 1 || r != std::floor(r)) throw DataError("invalid rank '" + row[*rank_col] + "'");
    e.rank = static_cast<std::size_t>(r);
    e.team_id = row[*team_col];
    if (score_col) e.score = detail::parse_number(row[*score_col]);
    b.entries.push_back(std::move(e));
  }
  if (b.entries.empty()) throw DataError("leaderboard csv has no rows");
  return b;
}

}  // namespace treebench

#endif
