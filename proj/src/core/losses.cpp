#include "fpl/core/losses.hpp"

#include <cmath>
#include <string>

#include "fpl/core/error.hpp"

namespace fpl {

namespace {

template <typename T>
void check_buffers(std::size_t pred, std::size_t target, int channels) {
  if (channels < 2) throw ValidationError("dice loss needs at least two channels");
  if (pred != target || pred % static_cast<std::size_t>(channels) != 0)
    throw ShapeError("prediction and target buffers differ in shape");
}

template <typename T>
void check_finite(std::span<const T> values, const char* what) {
  for (T v : values)
    if (!std::isfinite(v)) throw ValidationError(std::string("non-finite value in ") + what);
}

}  // namespace

template <std::floating_point T>
T soft_dice(std::span<const T> pred, std::span<const T> target, int channels, std::span<T> grad) {
  check_buffers<T>(pred.size(), target.size(), channels);
  const std::size_t n = pred.size() / static_cast<std::size_t>(channels);
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != pred.size()) throw ShapeError("gradient buffer has wrong size");
  const T eps = static_cast<T>(kDiceSmooth);
  const T fg = static_cast<T>(channels - 1);

  if (want_grad)
    for (std::size_t i = 0; i < n; ++i) grad[i] = T(0);

  T ratio_sum = 0;
  for (int c = 1; c < channels; ++c) {
    const T* p = pred.data() + static_cast<std::size_t>(c) * n;
    const T* g = target.data() + static_cast<std::size_t>(c) * n;
    T inter = 0, sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      inter += p[i] * g[i];
      sum += p[i] + g[i];
    }
    const T num = 2 * inter + eps;
    const T den = sum + eps;
    ratio_sum += num / den;
    if (want_grad) {
      T* out = grad.data() + static_cast<std::size_t>(c) * n;
      const T den2 = den * den;
      for (std::size_t i = 0; i < n; ++i) out[i] = -(2 * g[i] * den - num) / den2 / fg;
    }
  }
  return T(1) - ratio_sum / fg;
}

template <std::floating_point T>
T weighted_dice(std::span<const T> pred, std::span<const T> target, std::span<const T> weight, int channels,
                std::span<T> grad) {
  check_buffers<T>(pred.size(), target.size(), channels);
  const std::size_t n = pred.size() / static_cast<std::size_t>(channels);
  if (weight.size() != n) throw ShapeError("weight map does not match prediction dims");
  check_finite(pred, "prediction");
  check_finite(target, "pseudo label");
  check_finite(weight, "weight map");
  for (T a : weight)
    if (a < T(0) || a > T(1)) throw ValidationError("weight map value outside [0,1]");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != pred.size()) throw ShapeError("gradient buffer has wrong size");
  const T eps = static_cast<T>(kDiceSmooth);
  const T fg = static_cast<T>(channels - 1);

  if (want_grad)
    for (std::size_t i = 0; i < n; ++i) grad[i] = T(0);

  T ratio_sum = 0;
  for (int c = 1; c < channels; ++c) {
    const T* p = pred.data() + static_cast<std::size_t>(c) * n;
    const T* g = target.data() + static_cast<std::size_t>(c) * n;
    T num = 0, den = eps;
    for (std::size_t i = 0; i < n; ++i) {
      num += 2 * weight[i] * p[i] * g[i];
      den += weight[i] * (p[i] + g[i]);
    }
    ratio_sum += num / den;
    if (want_grad) {
      T* out = grad.data() + static_cast<std::size_t>(c) * n;
      const T den2 = den * den;
      for (std::size_t i = 0; i < n; ++i) out[i] = -weight[i] * (2 * g[i] * den - num) / den2 / fg;
    }
  }
  return T(1) - ratio_sum / fg;
}

template float soft_dice(std::span<const float>, std::span<const float>, int, std::span<float>);
template double soft_dice(std::span<const double>, std::span<const double>, int, std::span<double>);
template float weighted_dice(std::span<const float>, std::span<const float>, std::span<const float>, int,
                             std::span<float>);
template double weighted_dice(std::span<const double>, std::span<const double>, std::span<const double>, int,
                              std::span<double>);

namespace {

std::vector<double> widen(std::span<const float> v) { return {v.begin(), v.end()}; }

void check_maps(const ProbabilityMap& pred, const ProbabilityMap& target) {
  require_same_dims(pred.dims(), target.dims(), "dice loss");
  if (pred.channels() != target.channels()) throw ShapeError("dice loss: channel count mismatch");
}

}  // namespace

double soft_dice_loss(const ProbabilityMap& pred, const ProbabilityMap& target_onehot) {
  check_maps(pred, target_onehot);
  const auto p = widen(pred.values());
  const auto g = widen(target_onehot.values());
  return soft_dice<double>(p, g, pred.channels());
}

double weighted_dice_loss(const ProbabilityMap& pred, const ProbabilityMap& pseudo_onehot, const WeightMap& weights) {
  check_maps(pred, pseudo_onehot);
  require_same_dims(pred.dims(), weights.dims(), "weighted dice loss weight map");
  const auto p = widen(pred.values());
  const auto g = widen(pseudo_onehot.values());
  const auto a = widen(weights.values());
  return weighted_dice<double>(p, g, a, pred.channels());
}

LossWithGrad soft_dice_loss_grad(const ProbabilityMap& pred, const ProbabilityMap& target_onehot) {
  check_maps(pred, target_onehot);
  const auto p = widen(pred.values());
  const auto g = widen(target_onehot.values());
  std::vector<double> grad(p.size());
  LossWithGrad out;
  out.value = soft_dice<double>(p, g, pred.channels(), grad);
  out.grad.assign(grad.begin(), grad.end());
  return out;
}

LossWithGrad weighted_dice_loss_grad(const ProbabilityMap& pred, const ProbabilityMap& pseudo_onehot,
                                     const WeightMap& weights) {
  check_maps(pred, pseudo_onehot);
  require_same_dims(pred.dims(), weights.dims(), "weighted dice loss weight map");
  const auto p = widen(pred.values());
  const auto g = widen(pseudo_onehot.values());
  const auto a = widen(weights.values());
  std::vector<double> grad(p.size());
  LossWithGrad out;
  out.value = weighted_dice<double>(p, g, a, pred.channels(), grad);
  out.grad.assign(grad.begin(), grad.end());
  return out;
}

}  // namespace fpl
