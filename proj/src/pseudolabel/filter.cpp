#include "fpl/pseudolabel/filter.hpp"

#include <algorithm>
#include <cmath>

#include "fpl/core/error.hpp"
#include "fpl/dualnorm/trainer.hpp"

namespace fpl::pseudolabel {

void FilterConfig::validate() const {
  if (K < 2) throw ValidationError("filter: K must be at least 2, got " + std::to_string(K));
  if (!(e >= 0.0 && e < 1.0)) throw ValidationError("filter: e must lie in [0,1), got " + std::to_string(e));
}

namespace {

void check_stack(std::span<const ProbabilityMap> mc) {
  if (mc.size() < 2) throw ValidationError("MC stack needs at least two passes");
  for (const auto& m : mc) {
    require_same_dims(m.dims(), mc[0].dims(), "MC stack");
    if (m.channels() != mc[0].channels()) throw ShapeError("MC stack: channel count mismatch");
  }
  if (mc[0].channels() < 2) throw ValidationError("MC stack needs at least two channels");
}

double voxel_variance(std::span<const ProbabilityMap> mc, std::size_t i) {
  const int C = mc[0].channels();
  const double K = static_cast<double>(mc.size());
  double total = 0.0;
  for (int c = 1; c < C; ++c) {
    double mean = 0.0;
    for (const auto& m : mc) mean += m.at(c, i);
    mean /= K;
    double var = 0.0;
    for (const auto& m : mc) {
      const double d = m.at(c, i) - mean;
      var += d * d;
    }
    total += var / K;
  }
  return total / (C - 1);
}

double voxel_entropy(const ProbabilityMap& pbar, std::size_t i) {
  double h = 0.0;
  for (int c = 0; c < pbar.channels(); ++c) {
    const double p = pbar.at(c, i);
    if (p > 0.0) h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(pbar.channels()));
}

long count_uncertain(const ProbabilityMap& pbar, double e) {
  long n = 0;
  for (std::size_t i = 0; i < pbar.voxels(); ++i) n += voxel_entropy(pbar, i) > e;
  return n;
}

double summed_variance(std::span<const ProbabilityMap> mc) {
  double v = 0.0;
  for (std::size_t i = 0; i < mc[0].voxels(); ++i) v += voxel_variance(mc, i);
  return v;
}

}  // namespace

ProbabilityMap mean_probability(std::span<const ProbabilityMap> mc) {
  check_stack(mc);
  ProbabilityMap out(mc[0].dims(), mc[0].channels());
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    double s = 0.0;
    for (const auto& m : mc) s += m.values()[i];
    dst[i] = static_cast<float>(s / static_cast<double>(mc.size()));
  }
  return out;
}

WeightMap variance_map(std::span<const ProbabilityMap> mc) {
  check_stack(mc);
  WeightMap V(mc[0].dims());
  for (std::size_t i = 0; i < V.size(); ++i) V[i] = static_cast<float>(voxel_variance(mc, i));
  return V;
}

double image_uncertainty_raw(const WeightMap& V) {
  double v = 0.0;
  for (float x : V.values()) v += x;
  return v;
}

WeightMap entropy_map(const ProbabilityMap& pbar) {
  if (pbar.channels() < 2) throw ValidationError("entropy needs at least two channels");
  WeightMap E(pbar.dims());
  for (std::size_t i = 0; i < pbar.voxels(); ++i) E[i] = static_cast<float>(voxel_entropy(pbar, i));
  return E;
}

long uncertain_region_size(const ProbabilityMap& pbar, double e) {
  if (pbar.channels() < 2) throw ValidationError("entropy needs at least two channels");
  return count_uncertain(pbar, e);
}

std::vector<double> image_uncertainty(std::span<const double> v, std::span<const long> eta) {
  if (v.size() != eta.size()) throw ShapeError("image_uncertainty: v and eta differ in length");
  bool any = false;
  double u_star = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j)
    if (eta[j] > 0) {
      const double r = v[j] / static_cast<double>(eta[j]);
      u_star = any ? std::max(u_star, r) : r;
      any = true;
    }
  std::vector<double> u(v.size(), 0.0);
  if (!any) return u;
  for (std::size_t j = 0; j < v.size(); ++j) u[j] = eta[j] > 0 ? v[j] / static_cast<double>(eta[j]) : u_star;
  return u;
}

std::vector<double> image_weights(std::span<const double> u) {
  std::vector<double> w(u.size(), 1.0);
  if (u.empty()) return w;
  const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
  const double u_min = *lo, u_star = *hi;
  if (u_star == u_min) return w;
  for (std::size_t j = 0; j < u.size(); ++j) w[j] = (u_star - u[j]) / (u_star - u_min);
  return w;
}

WeightMap consensus_map(const LabelMap& a, const LabelMap& b) {
  require_same_dims(a.dims(), b.dims(), "consensus map");
  WeightMap M(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) M[i] = a[i] == b[i] ? 1.0f : 0.0f;
  return M;
}

std::vector<PseudoLabelRecord> filter_cohort(const std::vector<CaseEvidence>& cases, const FilterConfig& cfg) {
  cfg.validate();
  std::vector<PseudoLabelRecord> out;
  std::vector<double> v;
  std::vector<long> eta;
  for (const auto& c : cases) {
    try {
      if (static_cast<int>(c.mc.size()) != cfg.K)
        throw ValidationError("expected " + std::to_string(cfg.K) + " MC passes, got " + std::to_string(c.mc.size()));
      PseudoLabelRecord r;
      r.case_id = c.case_id;
      r.pbar = mean_probability(c.mc);
      r.pseudo_label = dualnorm::argmax_labels(r.pbar, c.target_pred.spacing());
      r.variance = variance_map(c.mc);
      r.entropy = entropy_map(r.pbar);
      // v from the unrounded variances; eta from the same P-bar that defines the pseudo label
      r.v = summed_variance(c.mc);
      r.eta = count_uncertain(r.pbar, cfg.e);
      r.consensus = consensus_map(c.target_pred, c.back_pred);
      require_same_dims(r.consensus.dims(), r.pbar.dims(), "consensus vs MC stack");
      r.K = cfg.K;
      r.e = cfg.e;
      v.push_back(r.v);
      eta.push_back(r.eta);
      out.push_back(std::move(r));
    } catch (const Error& err) {
      throw ValidationError("pseudo-label cohort failed at case '" + c.case_id + "': " + err.what());
    }
  }
  const auto u = image_uncertainty(v, eta);
  const auto w = image_weights(u);
  for (std::size_t j = 0; j < out.size(); ++j) {
    auto& r = out[j];
    r.u = u[j];
    r.w = w[j];
    r.weight = WeightMap(r.consensus.dims(), r.consensus.spacing());
    for (std::size_t i = 0; i < r.consensus.size(); ++i) r.weight[i] = static_cast<float>(r.consensus[i] * r.w);
  }
  return out;
}

}  // namespace fpl::pseudolabel
