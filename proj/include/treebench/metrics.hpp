/*
 * Per-case evaluation: voxel-overlap metrics and tree coverage (TD/BD).
 *
 * The prediction is reduced to its largest 26-connected component before
 * any metric is computed. Tree coverage is measured on the ground-truth
 * skeleton against the prediction:
 *
 *   t_det  length of ground-truth centerline steps whose two voxels both lie
 *          in the prediction
 *   t_ref  total ground-truth centerline length
 *   b_det  ground-truth branches with strictly more than 80% of their
 *          centerline voxels inside the prediction
 *   b_ref  ground-truth branch count
 *
 * All reported metrics are percentages.
 */
#ifndef TREEBENCH_METRICS_HPP
#define TREEBENCH_METRICS_HPP

#include <treebench/components.hpp>
#include <treebench/skeleton.hpp>
#include <treebench/volume.hpp>

#include <nlohmann/json.hpp>

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace treebench {

class EvaluationError : public DataError {
public:
  using DataError::DataError;
};

inline constexpr double kBranchDetectedFraction = 0.80;

inline std::optional<double> dsc(const ConfusionCounts &c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return std::nullopt;
  return 100.0 * static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

inline std::optional<double> precision(const ConfusionCounts &c) {
  if (c.tp + c.fp == 0) return std::nullopt;
  return 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

inline std::optional<double> sensitivity(const ConfusionCounts &c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

// |I| - |pred ∪ gt| over |I| - |gt|; equals tn / (tn + fp) when the counts
// cover the whole image.
inline std::optional<double> specificity(const ConfusionCounts &c, std::uint64_t total_voxels) {
  const auto gt = c.tp + c.fn;
  if (total_voxels <= gt) return std::nullopt;
  const auto uni = c.tp + c.fp + c.fn;
  return 100.0 * static_cast<double>(total_voxels - uni) / static_cast<double>(total_voxels - gt);
}

inline std::optional<double> specificity(const ConfusionCounts &c) { return specificity(c, c.total()); }

struct TreeCoverage {
  double t_det_mm = 0.0;
  double t_ref_mm = 0.0;
  std::size_t b_det = 0;
  std::size_t b_ref = 0;
  std::vector<double> per_branch_coverage;

  double td() const { return t_ref_mm > 0 ? 100.0 * (t_det_mm / t_ref_mm) : 0.0; }
  double bd() const { return b_ref > 0 ? 100.0 * (static_cast<double>(b_det) / static_cast<double>(b_ref)) : 0.0; }
};

// Coverage of a parsed skeleton by a mask. With the ground-truth skeleton
// and the prediction mask this is the standard TD/BD definition.
inline TreeCoverage tree_coverage(const VoxelMask &covering, const SkeletonGraph &skel) {
  if (!skel.parsed) throw EvaluationError("skeleton branches have not been parsed");
  if (skel.branches.empty() || skel.voxels.empty()) throw EvaluationError("reference skeleton is empty");
  if (!(covering.dims() == skel.dims)) throw ShapeMismatch("coverage mask and skeleton dims differ");
  TreeCoverage cov;
  cov.b_ref = skel.branches.size();
  cov.per_branch_coverage.reserve(skel.branches.size());
  for (const auto &b : skel.branches) {
    std::size_t inside = 0;
    for (auto v : b.path) inside += covering[v] ? 1 : 0;
    const double frac = b.path.empty() ? 0.0 : static_cast<double>(inside) / static_cast<double>(b.path.size());
    cov.per_branch_coverage.push_back(frac);
    // Integer form of inside / size > 0.8, immune to rounding at exactly 80%.
    if (5 * inside > 4 * b.path.size()) ++cov.b_det;

    const auto line = b.polyline();
    for (std::size_t k = 1; k < line.size(); ++k) {
      const double step = step_length(skel.coord(line[k - 1]), skel.coord(line[k]), skel.spacing);
      cov.t_ref_mm += step;
      if (covering[line[k - 1]] && covering[line[k]]) cov.t_det_mm += step;
    }
  }
  return cov;
}

enum class CoverageDirection { reference, prediction };

struct EvalOptions {
  CoverageDirection direction = CoverageDirection::reference;
  double min_branch_mm = 0.0;
  ThinningOptions thinning;
};

struct CaseMetrics {
  std::string case_id;
  double td = 0, bd = 0, dsc = 0, precision = 0, sen = 0, spe = 0;
  ConfusionCounts confusion;
  TreeCoverage coverage;
  std::vector<std::string> flags;
};

inline SkeletonGraph reference_skeleton(const VoxelMask &gt, const EvalOptions &opt = {}) {
  return parse_branches(skeletonize(gt, opt.thinning), gt.spacing(), opt.min_branch_mm);
}

// Full per-case pipeline. `ref_skel` may carry a precomputed (cached)
// ground-truth skeleton; otherwise it is computed here.
inline CaseMetrics evaluate_case(const VoxelMask &pred, const VoxelMask &gt, const EvalOptions &opt = {},
                                 const SkeletonGraph *ref_skel = nullptr, std::string case_id = {}) {
  const auto shape = shape_check(pred, gt);
  CaseMetrics m;
  m.case_id = std::move(case_id);
  if (shape.spacing_mismatch) m.flags.push_back("spacing_mismatch");

  const auto lcc = largest_component(pred).with_spacing(gt.spacing());
  m.confusion = confusion(lcc, gt);
  const auto &c = m.confusion;
  if (c.tp + c.fn == 0) throw EvaluationError("ground truth is empty");

  m.dsc = *dsc(c);
  m.sen = *sensitivity(c);
  if (auto p = precision(c)) {
    m.precision = *p;
  } else {
    m.precision = 0.0;
    m.flags.push_back("empty_prediction");
  }
  if (auto s = specificity(c)) {
    m.spe = *s;
  } else {
    throw EvaluationError("specificity undefined: ground truth fills the whole image");
  }

  std::optional<SkeletonGraph> own;
  if (!ref_skel) {
    own = reference_skeleton(gt, opt);
    ref_skel = &*own;
  }

  if (opt.direction == CoverageDirection::reference) {
    m.coverage = tree_coverage(lcc, *ref_skel);
  } else {
    // Prediction centerline checked against the ground-truth mask; the
    // denominators still come from the reference tree.
    if (ref_skel->branches.empty()) throw EvaluationError("reference skeleton is empty");
    TreeCoverage cov;
    cov.t_ref_mm = tree_length(*ref_skel);
    cov.b_ref = ref_skel->branches.size();
    if (c.tp + c.fp > 0) {
      const auto pred_skel = parse_branches(skeletonize(lcc, opt.thinning), gt.spacing(), opt.min_branch_mm);
      const auto pc = tree_coverage(gt, pred_skel);
      cov.t_det_mm = pc.t_det_mm;
      cov.b_det = pc.b_det;
      cov.per_branch_coverage = pc.per_branch_coverage;
    }
    m.coverage = cov;
  }
  m.td = m.coverage.td();
  m.bd = m.coverage.bd();
  return m;
}

inline std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline const char *kCaseCsvHeader =
    "case_id,TD,BD,DSC,Precision,Sen,Spe,tp,fp,fn,tn,t_det_mm,t_ref_mm,b_det,b_ref";

inline std::string case_csv_row(const CaseMetrics &m) {
  std::string row = m.case_id;
  for (double v : {m.td, m.bd, m.dsc, m.precision, m.sen, m.spe}) row += "," + fmt3(v);
  for (auto v : {m.confusion.tp, m.confusion.fp, m.confusion.fn, m.confusion.tn}) row += "," + std::to_string(v);
  row += "," + fmt3(m.coverage.t_det_mm) + "," + fmt3(m.coverage.t_ref_mm);
  row += "," + std::to_string(m.coverage.b_det) + "," + std::to_string(m.coverage.b_ref);
  return row;
}

// Row for a case that could not be evaluated; metric columns are NA.
inline std::string case_csv_error_row(const std::string &case_id) {
  std::string row = case_id;
  for (int i = 0; i < 14; ++i) row += ",NA";
  return row;
}

// Metric values are rounded to 3 decimals, the same as the CSV output.
inline nlohmann::ordered_json case_to_json(const CaseMetrics &m) {
  auto r3 = [](double v) { return std::stod(fmt3(v)); };
  nlohmann::ordered_json j;
  j["case_id"] = m.case_id;
  j["TD"] = r3(m.td);
  j["BD"] = r3(m.bd);
  j["DSC"] = r3(m.dsc);
  j["Precision"] = r3(m.precision);
  j["Sen"] = r3(m.sen);
  j["Spe"] = r3(m.spe);
  j["confusion"] = {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"fn", m.confusion.fn}, {"tn", m.confusion.tn}};
  j["coverage"] = {{"t_det_mm", r3(m.coverage.t_det_mm)},
                   {"t_ref_mm", r3(m.coverage.t_ref_mm)},
                   {"b_det", m.coverage.b_det},
                   {"b_ref", m.coverage.b_ref}};
  j["flags"] = m.flags;
  return j;
}

}  // namespace treebench

#endif
