#include "fpl/nn/adam.hpp"

#include <cmath>

namespace fpl::nn {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : cfg_(cfg) {
  for (auto* p : params) {
    if (is_buffer(p->role)) continue;
    params_.push_back(p);
    slots_.push_back({std::vector<float>(p->size(), 0.0f), std::vector<float>(p->size(), 0.0f), 0});
  }
}

void Adam::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (!p.touched) continue;
    Slot& s = slots_[k];
    ++s.steps;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.steps));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.steps));
    const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const auto step = static_cast<float>(cfg_.lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(cfg_.eps);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float g = p.grad[i];
      s.m[i] = b1 * s.m[i] + (1.0f - b1) * g;
      s.v[i] = b2 * s.v[i] + (1.0f - b2) * g * g;
      p.value[i] -= step * s.m[i] / (std::sqrt(s.v[i] * inv_c2) + eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace fpl::nn
