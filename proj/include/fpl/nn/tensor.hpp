#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fpl::nn {

/// N x C x D x H x W. Two-dimensional data uses D = 1.
struct Shape {
  int n = 0, c = 0, d = 1, h = 1, w = 1;

  std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
  std::size_t sample_size() const { return spatial() * static_cast<std::size_t>(c); }
  std::size_t numel() const { return sample_size() * static_cast<std::size_t>(n); }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.sample_size(); }
  const float* sample(int n) const { return data_.data() + static_cast<std::size_t>(n) * shape_.sample_size(); }
  float* channel(int n, int c) { return sample(n) + static_cast<std::size_t>(c) * shape_.spatial(); }
  const float* channel(int n, int c) const { return sample(n) + static_cast<std::size_t>(c) * shape_.spatial(); }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::vector<float>& storage() { return data_; }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  std::vector<float> data_;
};

/// Channel-wise concatenation of two tensors with equal N and spatial size.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits a gradient of a concatenation back into its two parts.
void split_channels(const Tensor& g, int channels_a, Tensor& ga, Tensor& gb);

void add_inplace(Tensor& into, const Tensor& other);

}  // namespace fpl::nn
