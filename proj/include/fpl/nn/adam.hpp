#pragma once

#include <span>
#include <vector>

#include "fpl/nn/parameter.hpp"

namespace fpl::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with a step count per parameter. Parameters whose `touched` flag is clear (no backward
/// pass reached them since the last zero_grad) are left exactly as they are, moments included.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg = {});

  void step();
  void zero_grad();
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Slot {
    std::vector<float> m, v;
    long steps = 0;
  };
  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  AdamConfig cfg_;
};

}  // namespace fpl::nn
