#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "fpl/core/types.hpp"

namespace fpl {

inline constexpr double kDiceSmooth = 1e-5;

/// Soft Dice loss over the foreground channels (1..C-1) of channel-major buffers.
///
/// loss = 1 - mean_c (2 Σ p·g + ε) / (Σ p + Σ g + ε). When `grad` is non-empty it receives
/// d loss / d pred for every channel (zero for the background channel).
template <std::floating_point T>
T soft_dice(std::span<const T> pred, std::span<const T> target, int channels, std::span<T> grad = {});

/// Weighted soft Dice with one weight per voxel shared by all foreground classes:
/// loss = 1 - mean_c (Σ 2·A·p·g) / (Σ A·(p + g) + ε).
template <std::floating_point T>
T weighted_dice(std::span<const T> pred, std::span<const T> target, std::span<const T> weight, int channels,
                std::span<T> grad = {});

double soft_dice_loss(const ProbabilityMap& pred, const ProbabilityMap& target_onehot);
double weighted_dice_loss(const ProbabilityMap& pred, const ProbabilityMap& pseudo_onehot, const WeightMap& weights);

struct LossWithGrad {
  double value = 0.0;
  std::vector<float> grad;  // channel-major, same layout as the prediction
};

LossWithGrad soft_dice_loss_grad(const ProbabilityMap& pred, const ProbabilityMap& target_onehot);
LossWithGrad weighted_dice_loss_grad(const ProbabilityMap& pred, const ProbabilityMap& pseudo_onehot,
                                     const WeightMap& weights);

}  // namespace fpl
