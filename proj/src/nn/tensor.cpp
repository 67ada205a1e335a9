#include "fpl/nn/tensor.hpp"

#include <algorithm>

#include "fpl/core/error.hpp"

namespace fpl::nn {

std::string to_string(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.d) + "x" + std::to_string(s.h) +
         "x" + std::to_string(s.w);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) throw ShapeError("tensor buffer does not match shape " + to_string(shape_));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.d != sb.d || sa.h != sb.h || sa.w != sb.w)
    throw ShapeError("concat: " + to_string(sa) + " vs " + to_string(sb));
  Tensor out({sa.n, sa.c + sb.c, sa.d, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy(a.sample(n), a.sample(n) + sa.sample_size(), out.sample(n));
    std::copy(b.sample(n), b.sample(n) + sb.sample_size(), out.sample(n) + sa.sample_size());
  }
  return out;
}

void split_channels(const Tensor& g, int channels_a, Tensor& ga, Tensor& gb) {
  const Shape& s = g.shape();
  ga = Tensor({s.n, channels_a, s.d, s.h, s.w});
  gb = Tensor({s.n, s.c - channels_a, s.d, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const float* src = g.sample(n);
    std::copy(src, src + ga.shape().sample_size(), ga.sample(n));
    std::copy(src + ga.shape().sample_size(), src + s.sample_size(), gb.sample(n));
  }
}

void add_inplace(Tensor& into, const Tensor& other) {
  if (!(into.shape() == other.shape())) throw ShapeError("add: shape mismatch");
  float* dst = into.data();
  const float* src = other.data();
  for (std::size_t i = 0; i < into.size(); ++i) dst[i] += src[i];
}

}  // namespace fpl::nn
