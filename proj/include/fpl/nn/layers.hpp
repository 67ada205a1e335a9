#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fpl/core/rng.hpp"
#include "fpl/nn/parameter.hpp"
#include "fpl/nn/tensor.hpp"

namespace fpl::nn {

// Layers follow one convention: forward() caches what backward() needs, infer() is the const
// cache-free path, and backward() accumulates parameter gradients and returns the input gradient.

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  std::array<int, 3> kernel{3, 3, 3};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{1, 1, 1};
  bool bias = false;
};

class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, const ConvSpec& spec, Rng& init);

  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& grad_out, bool need_input_grad = true);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  Shape output_shape(const Shape& in) const;
  const ConvSpec& spec() const { return spec_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Tensor run(const Tensor& x, std::vector<std::vector<float>>* cols) const;

  ConvSpec spec_;
  Parameter weight_;
  Parameter bias_;
  Shape in_shape_{};
  std::vector<std::vector<float>> cols_;
};

/// Transposed convolution whose kernel equals its stride (non-overlapping upsampling).
class UpConv3d {
 public:
  UpConv3d() = default;
  UpConv3d(std::string name, int in_channels, int out_channels, std::array<int, 3> factor, Rng& init);

  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  int in_ = 0, out_ = 0;
  std::array<int, 3> factor_{2, 2, 2};
  Parameter weight_;  // (out * fz * fy * fx) x in, row-major
  Parameter bias_;
  Tensor input_;
};

class MaxPool3d {
 public:
  MaxPool3d() = default;
  explicit MaxPool3d(std::array<int, 3> factor) : factor_(factor) {}

  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& grad_out) const;

 private:
  Tensor run(const Tensor& x, std::vector<std::uint32_t>* argmax) const;

  std::array<int, 3> factor_{2, 2, 2};
  Shape in_shape_{};
  std::vector<std::uint32_t> argmax_;
};

class LeakyRelu {
 public:
  explicit LeakyRelu(float slope = 0.01f) : slope_(slope) {}
  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& grad_out) const;

 private:
  float slope_;
  std::vector<std::uint8_t> positive_;
};

/// Inverted dropout. Inactive (identity) whenever no random stream is supplied.
class Dropout {
 public:
  explicit Dropout(float rate = 0.0f) : rate_(rate) {}
  Tensor forward(const Tensor& x, Rng* rng);
  Tensor infer(const Tensor& x, Rng* rng) const;
  Tensor backward(const Tensor& grad_out) const;
  float rate() const { return rate_; }

 private:
  Tensor run(const Tensor& x, Rng* rng, std::vector<float>* mask) const;

  float rate_;
  std::vector<float> mask_;  // empty when the last forward was the identity
};

/// Per-sample, per-channel normalisation over the spatial axes with an affine transform.
class InstanceNorm {
 public:
  InstanceNorm() = default;
  InstanceNorm(std::string name, int channels, float eps = 1e-5f);

  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  Tensor run(const Tensor& x, Tensor* xhat, std::vector<float>* inv_std) const;

  int channels_ = 0;
  float eps_ = 1e-5f;
  Parameter gamma_, beta_;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

/// Softmax over the channel axis.
Tensor softmax_channels(const Tensor& logits);
/// Given probabilities p and dL/dp, returns dL/dlogits.
Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs);

}  // namespace fpl::nn
