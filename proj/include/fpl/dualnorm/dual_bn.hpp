#pragma once

#include <string>
#include <vector>

#include "fpl/core/types.hpp"
#include "fpl/nn/parameter.hpp"
#include "fpl/nn/tensor.hpp"

namespace fpl::dualnorm {

enum class Mode { train, eval };

struct DualBNConfig {
  float momentum = 0.1f;  // α in  μ̄ ← (1-α) μ̄ + α μ_batch
  float eps = 1e-5f;
};

/// Batch normalisation with one set of affine parameters and running statistics per domain.
/// Only the branch named by the domain argument is read or written.
class DualBatchNorm {
 public:
  DualBatchNorm() = default;
  DualBatchNorm(std::string name, int channels, DualBNConfig cfg = {});

  /// Train mode normalises with the statistics of this batch (N >= 2) and updates the running
  /// statistics of `domain`; eval mode uses the running statistics.
  nn::Tensor forward(const nn::Tensor& x, DomainTag domain, Mode mode);
  nn::Tensor infer(const nn::Tensor& x, DomainTag domain) const;
  nn::Tensor backward(const nn::Tensor& grad_out);

  void collect(std::vector<nn::Parameter*>& out);
  void collect(std::vector<const nn::Parameter*>& out) const;

  int channels() const { return channels_; }
  const std::string& name() const { return name_; }
  const DualBNConfig& config() const { return cfg_; }

  struct Branch {
    nn::Parameter gamma, beta, running_mean, running_var;
  };
  Branch& branch(DomainTag d) { return d == DomainTag::source ? source_ : target_; }
  const Branch& branch(DomainTag d) const { return d == DomainTag::source ? source_ : target_; }

 private:
  nn::Tensor normalise(const nn::Tensor& x, const Branch& b, const std::vector<double>& mean,
                       const std::vector<double>& inv_std, nn::Tensor* xhat) const;

  std::string name_;
  int channels_ = 0;
  DualBNConfig cfg_;
  Branch source_, target_;

  // Cache of the last forward().
  DomainTag last_domain_ = DomainTag::source;
  Mode last_mode_ = Mode::eval;
  nn::Tensor xhat_;
  std::vector<double> inv_std_;
};

}  // namespace fpl::dualnorm
