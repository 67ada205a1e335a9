#include "fpl/dualnorm/dual_bn.hpp"

#include <cmath>

#include "fpl/core/error.hpp"

namespace fpl::dualnorm {

using nn::ParamRole;
using nn::Tensor;

namespace {

DualBatchNorm::Branch make_branch(const std::string& name, int channels, DomainTag d) {
  const bool s = d == DomainTag::source;
  const std::string tag = s ? "s" : "t";
  return {{name + ".gamma_" + tag, {channels}, s ? ParamRole::gamma_source : ParamRole::gamma_target, 1.0f},
          {name + ".beta_" + tag, {channels}, s ? ParamRole::beta_source : ParamRole::beta_target, 0.0f},
          {name + ".running_mean_" + tag, {channels}, s ? ParamRole::running_mean_source : ParamRole::running_mean_target,
           0.0f},
          {name + ".running_var_" + tag, {channels}, s ? ParamRole::running_var_source : ParamRole::running_var_target,
           1.0f}};
}

}  // namespace

DualBatchNorm::DualBatchNorm(std::string name, int channels, DualBNConfig cfg)
    : name_(std::move(name)),
      channels_(channels),
      cfg_(cfg),
      source_(make_branch(name_, channels, DomainTag::source)),
      target_(make_branch(name_, channels, DomainTag::target)) {
  if (!(cfg.eps > 0.0f)) throw ValidationError(name_ + ": eps must be positive");
  if (!(cfg.momentum > 0.0f && cfg.momentum <= 1.0f)) throw ValidationError(name_ + ": momentum must be in (0,1]");
}

Tensor DualBatchNorm::normalise(const Tensor& x, const Branch& b, const std::vector<double>& mean,
                                const std::vector<double>& inv_std, Tensor* xhat) const {
  const nn::Shape& s = x.shape();
  const std::size_t m = s.spatial();
  Tensor out(s);
  if (xhat) *xhat = Tensor(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const float mu = static_cast<float>(mean[ci]);
      const float is = static_cast<float>(inv_std[ci]);
      const float g = b.gamma.value[ci], bb = b.beta.value[ci];
      const float* src = x.channel(n, c);
      float* dst = out.channel(n, c);
      float* xh = xhat ? xhat->channel(n, c) : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        const float v = (src[i] - mu) * is;
        if (xh) xh[i] = v;
        dst[i] = g * v + bb;
      }
    }
  return out;
}

Tensor DualBatchNorm::forward(const Tensor& x, DomainTag domain, Mode mode) {
  const nn::Shape& s = x.shape();
  if (s.c != channels_) throw ShapeError(name_ + ": expected " + std::to_string(channels_) + " channels");
  Branch& b = branch(domain);
  std::vector<double> mean(static_cast<std::size_t>(channels_)), inv_std(mean.size());
  if (mode == Mode::train) {
    if (s.n < 2) throw ValidationError(name_ + ": train-mode batch normalisation needs a batch of at least 2");
    const double count = static_cast<double>(s.n) * static_cast<double>(s.spatial());
    for (int c = 0; c < channels_; ++c) {
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const float* src = x.channel(n, c);
        for (std::size_t i = 0; i < s.spatial(); ++i) sum += src[i];
      }
      const double mu = sum / count;
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const float* src = x.channel(n, c);
        for (std::size_t i = 0; i < s.spatial(); ++i) sq += (src[i] - mu) * (src[i] - mu);
      }
      const double var = sq / count;
      const auto ci = static_cast<std::size_t>(c);
      mean[ci] = mu;
      inv_std[ci] = 1.0 / std::sqrt(var + cfg_.eps);
      const double a = cfg_.momentum;
      float& rm = b.running_mean.value[ci];
      float& rv = b.running_var.value[ci];
      rm = static_cast<float>((1.0 - a) * rm + a * mu);
      rv = static_cast<float>((1.0 - a) * rv + a * var);
    }
  } else {
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = b.running_mean.value[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(b.running_var.value[c]) + cfg_.eps);
    }
  }
  last_domain_ = domain;
  last_mode_ = mode;
  inv_std_ = inv_std;
  return normalise(x, b, mean, inv_std, &xhat_);
}

Tensor DualBatchNorm::infer(const Tensor& x, DomainTag domain) const {
  if (x.shape().c != channels_) throw ShapeError(name_ + ": expected " + std::to_string(channels_) + " channels");
  const Branch& b = branch(domain);
  std::vector<double> mean(static_cast<std::size_t>(channels_)), inv_std(mean.size());
  for (std::size_t c = 0; c < mean.size(); ++c) {
    mean[c] = b.running_mean.value[c];
    inv_std[c] = 1.0 / std::sqrt(static_cast<double>(b.running_var.value[c]) + cfg_.eps);
  }
  return normalise(x, b, mean, inv_std, nullptr);
}

Tensor DualBatchNorm::backward(const Tensor& grad_out) {
  const nn::Shape& s = xhat_.shape();
  if (!(grad_out.shape() == s)) throw ShapeError(name_ + ": backward shape mismatch");
  Branch& b = branch(last_domain_);
  const double count = static_cast<double>(s.n) * static_cast<double>(s.spatial());
  Tensor grad_in(s);
  for (int c = 0; c < channels_; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* g = grad_out.channel(n, c);
      const float* xh = xhat_.channel(n, c);
      for (std::size_t i = 0; i < s.spatial(); ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
    }
    b.gamma.grad[ci] += static_cast<float>(sum_gx);
    b.beta.grad[ci] += static_cast<float>(sum_g);
    const double scale = b.gamma.value[ci] * inv_std_[ci];
    const double mean_g = last_mode_ == Mode::train ? sum_g / count : 0.0;
    const double mean_gx = last_mode_ == Mode::train ? sum_gx / count : 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* g = grad_out.channel(n, c);
      const float* xh = xhat_.channel(n, c);
      float* dst = grad_in.channel(n, c);
      for (std::size_t i = 0; i < s.spatial(); ++i)
        dst[i] = static_cast<float>(scale * (g[i] - mean_g - xh[i] * mean_gx));
    }
  }
  b.gamma.touched = b.beta.touched = true;
  return grad_in;
}

void DualBatchNorm::collect(std::vector<nn::Parameter*>& out) {
  for (Branch* b : {&source_, &target_}) {
    out.push_back(&b->gamma);
    out.push_back(&b->beta);
    out.push_back(&b->running_mean);
    out.push_back(&b->running_var);
  }
}

void DualBatchNorm::collect(std::vector<const nn::Parameter*>& out) const {
  for (const Branch* b : {&source_, &target_}) {
    out.push_back(&b->gamma);
    out.push_back(&b->beta);
    out.push_back(&b->running_mean);
    out.push_back(&b->running_var);
  }
}

}  // namespace fpl::dualnorm
