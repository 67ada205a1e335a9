#pragma once

#include <span>
#include <string>
#include <vector>

#include "fpl/core/types.hpp"

namespace fpl::pseudolabel {

struct FilterConfig {
  int K = 5;       // MC dropout passes
  double e = 0.2;  // threshold on entropy normalised by ln C
  void validate() const;
};

ProbabilityMap mean_probability(std::span<const ProbabilityMap> mc);
/// Population variance over the passes, averaged over foreground classes.
WeightMap variance_map(std::span<const ProbabilityMap> mc);
double image_uncertainty_raw(const WeightMap& V);
/// Entropy in nats divided by ln C, so values lie in [0,1].
WeightMap entropy_map(const ProbabilityMap& pbar);
/// Voxels whose normalised entropy is strictly above e.
long uncertain_region_size(const ProbabilityMap& pbar, double e);

/// u = v/eta, or the cohort maximum of v/eta when eta = 0. All zeros when no case has eta > 0.
std::vector<double> image_uncertainty(std::span<const double> v, std::span<const long> eta);
/// w = (u* - u)/(u* - u_min); all ones when u* == u_min.
std::vector<double> image_weights(std::span<const double> u);
/// 1 where the two predictions agree.
WeightMap consensus_map(const LabelMap& a, const LabelMap& b);

/// Everything the filter needs about one target case.
struct CaseEvidence {
  std::string case_id;
  std::vector<ProbabilityMap> mc;  // K stochastic passes on the target branch
  LabelMap target_pred;            // deterministic, target branch
  LabelMap back_pred;              // deterministic, source branch on the back-translated image
};

struct PseudoLabelRecord {
  std::string case_id;
  LabelMap pseudo_label;
  ProbabilityMap pbar;
  WeightMap variance;  // not persisted
  WeightMap entropy;   // not persisted
  double v = 0.0;
  long eta = 0;
  double u = 0.0;
  double w = 1.0;
  WeightMap consensus;
  WeightMap weight;  // A = M * w
  int K = 0;
  double e = 0.0;
};

/// Per-case quantities, then the cohort pass for u and w, then A.
std::vector<PseudoLabelRecord> filter_cohort(const std::vector<CaseEvidence>& cases, const FilterConfig& cfg);

}  // namespace fpl::pseudolabel
