#include "fpl/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "fpl/core/error.hpp"

namespace fpl::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

void init_he(Parameter& w, int fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w.value) v = static_cast<float>(rng.normal(0.0, stddev));
}

struct ConvGeometry {
  int cin, d, h, w;        // input
  int kd, kh, kw;
  int sd, sh, sw;
  int pd, ph, pw;
  int od, oh, ow;          // output
  std::size_t rows() const { return static_cast<std::size_t>(cin) * kd * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(od) * oh * ow; }
  bool pointwise() const {
    return kd == 1 && kh == 1 && kw == 1 && sd == 1 && sh == 1 && sw == 1 && pd == 0 && ph == 0 && pw == 0;
  }
};

ConvGeometry geometry(const ConvSpec& s, const Shape& in) {
  ConvGeometry g{in.c, in.d, in.h, in.w, s.kernel[0], s.kernel[1], s.kernel[2], s.stride[0], s.stride[1],
                 s.stride[2], s.pad[0], s.pad[1], s.pad[2], 0, 0, 0};
  g.od = (in.d + 2 * g.pd - g.kd) / g.sd + 1;
  g.oh = (in.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.ow = (in.w + 2 * g.pw - g.kw) / g.sw + 1;
  if (g.od < 1 || g.oh < 1 || g.ow < 1) throw ShapeError("convolution input " + to_string(in) + " too small");
  return g;
}

void im2col(const ConvGeometry& g, const float* in, float* col) {
  const std::size_t plane = g.cols();
  for (int ci = 0; ci < g.cin; ++ci)
    for (int a = 0; a < g.kd; ++a)
      for (int b = 0; b < g.kh; ++b)
        for (int c = 0; c < g.kw; ++c) {
          float* dst = col + ((static_cast<std::size_t>(ci) * g.kd + a) * g.kh * g.kw + b * g.kw + c) * plane;
          for (int oz = 0; oz < g.od; ++oz) {
            const int iz = oz * g.sd - g.pd + a;
            if (iz < 0 || iz >= g.d) {
              std::fill(dst, dst + static_cast<std::size_t>(g.oh) * g.ow, 0.0f);
              dst += static_cast<std::size_t>(g.oh) * g.ow;
              continue;
            }
            for (int oy = 0; oy < g.oh; ++oy, dst += g.ow) {
              const int iy = oy * g.sh - g.ph + b;
              if (iy < 0 || iy >= g.h) {
                std::fill(dst, dst + g.ow, 0.0f);
                continue;
              }
              const float* src = in + ((static_cast<std::size_t>(ci) * g.d + iz) * g.h + iy) * g.w;
              if (g.sw == 1) {
                const int x0 = c - g.pw;
                for (int ox = 0; ox < g.ow; ++ox) {
                  const int ix = ox + x0;
                  dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
                }
              } else {
                for (int ox = 0; ox < g.ow; ++ox) {
                  const int ix = ox * g.sw - g.pw + c;
                  dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
                }
              }
            }
          }
        }
}

void col2im(const ConvGeometry& g, const float* col, float* in) {
  const std::size_t plane = g.cols();
  std::fill(in, in + static_cast<std::size_t>(g.cin) * g.d * g.h * g.w, 0.0f);
  for (int ci = 0; ci < g.cin; ++ci)
    for (int a = 0; a < g.kd; ++a)
      for (int b = 0; b < g.kh; ++b)
        for (int c = 0; c < g.kw; ++c) {
          const float* src = col + ((static_cast<std::size_t>(ci) * g.kd + a) * g.kh * g.kw + b * g.kw + c) * plane;
          for (int oz = 0; oz < g.od; ++oz) {
            const int iz = oz * g.sd - g.pd + a;
            if (iz < 0 || iz >= g.d) {
              src += static_cast<std::size_t>(g.oh) * g.ow;
              continue;
            }
            for (int oy = 0; oy < g.oh; ++oy, src += g.ow) {
              const int iy = oy * g.sh - g.ph + b;
              if (iy < 0 || iy >= g.h) continue;
              float* dst = in + ((static_cast<std::size_t>(ci) * g.d + iz) * g.h + iy) * g.w;
              for (int ox = 0; ox < g.ow; ++ox) {
                const int ix = ox * g.sw - g.pw + c;
                if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
              }
            }
          }
        }
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Conv3d

Conv3d::Conv3d(std::string name, const ConvSpec& spec, Rng& init)
    : spec_(spec),
      weight_(name + ".weight", {spec.out_channels, spec.in_channels, spec.kernel[0], spec.kernel[1], spec.kernel[2]},
              ParamRole::shared),
      bias_(name + ".bias", {spec.bias ? spec.out_channels : 0}, ParamRole::shared) {
  init_he(weight_, spec.in_channels * spec.kernel[0] * spec.kernel[1] * spec.kernel[2], init);
}

Shape Conv3d::output_shape(const Shape& in) const {
  const ConvGeometry g = geometry(spec_, in);
  return {in.n, spec_.out_channels, g.od, g.oh, g.ow};
}

Tensor Conv3d::run(const Tensor& x, std::vector<std::vector<float>>* cols) const {
  const Shape& in = x.shape();
  if (in.c != spec_.in_channels)
    throw ShapeError(weight_.name + ": expected " + std::to_string(spec_.in_channels) + " channels, got " +
                     std::to_string(in.c));
  const ConvGeometry g = geometry(spec_, in);
  Tensor out({in.n, spec_.out_channels, g.od, g.oh, g.ow});
  const auto K = static_cast<Eigen::Index>(g.rows());
  const auto P = static_cast<Eigen::Index>(g.cols());
  ConstMapMatrix W(weight_.value.data(), spec_.out_channels, K);
  if (cols) cols->assign(static_cast<std::size_t>(in.n), {});
  std::vector<float> scratch;
  for (int n = 0; n < in.n; ++n) {
    const float* colp;
    if (g.pointwise()) {
      colp = x.sample(n);
    } else {
      std::vector<float>& buf = cols ? (*cols)[static_cast<std::size_t>(n)] : scratch;
      buf.resize(g.rows() * g.cols());
      im2col(g, x.sample(n), buf.data());
      colp = buf.data();
    }
    MapMatrix O(out.sample(n), spec_.out_channels, P);
    O.noalias() = W * ConstMapMatrix(colp, K, P);
    if (spec_.bias)
      for (int co = 0; co < spec_.out_channels; ++co) O.row(co).array() += bias_.value[static_cast<std::size_t>(co)];
  }
  return out;
}

Tensor Conv3d::forward(const Tensor& x) {
  in_shape_ = x.shape();
  Tensor out = run(x, &cols_);
  if (geometry(spec_, in_shape_).pointwise()) {
    // Pointwise convolutions use the input itself as the column matrix.
    cols_.assign(static_cast<std::size_t>(in_shape_.n), {});
    for (int n = 0; n < in_shape_.n; ++n)
      cols_[static_cast<std::size_t>(n)].assign(x.sample(n), x.sample(n) + in_shape_.sample_size());
  }
  return out;
}

Tensor Conv3d::infer(const Tensor& x) const { return run(x, nullptr); }

Tensor Conv3d::backward(const Tensor& grad_out, bool need_input_grad) {
  const ConvGeometry g = geometry(spec_, in_shape_);
  const auto K = static_cast<Eigen::Index>(g.rows());
  const auto P = static_cast<Eigen::Index>(g.cols());
  if (cols_.size() != static_cast<std::size_t>(in_shape_.n)) throw Error(weight_.name + ": backward without forward");
  MapMatrix dW(weight_.grad.data(), spec_.out_channels, K);
  ConstMapMatrix W(weight_.value.data(), spec_.out_channels, K);
  Tensor grad_in;
  if (need_input_grad) grad_in = Tensor(in_shape_);
  std::vector<float> dcol;
  for (int n = 0; n < in_shape_.n; ++n) {
    ConstMapMatrix G(grad_out.sample(n), spec_.out_channels, P);
    ConstMapMatrix C(cols_[static_cast<std::size_t>(n)].data(), K, P);
    dW.noalias() += G * C.transpose();
    if (spec_.bias)
      for (int co = 0; co < spec_.out_channels; ++co) bias_.grad[static_cast<std::size_t>(co)] += G.row(co).sum();
    if (!need_input_grad) continue;
    if (g.pointwise()) {
      MapMatrix(grad_in.sample(n), K, P).noalias() = W.transpose() * G;
    } else {
      dcol.resize(g.rows() * g.cols());
      MapMatrix(dcol.data(), K, P).noalias() = W.transpose() * G;
      col2im(g, dcol.data(), grad_in.sample(n));
    }
  }
  weight_.touched = true;
  bias_.touched = spec_.bias;
  return grad_in;
}

void Conv3d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (spec_.bias) out.push_back(&bias_);
}

void Conv3d::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight_);
  if (spec_.bias) out.push_back(&bias_);
}

// ---------------------------------------------------------------------------------------------
// UpConv3d

UpConv3d::UpConv3d(std::string name, int in_channels, int out_channels, std::array<int, 3> factor, Rng& init)
    : in_(in_channels),
      out_(out_channels),
      factor_(factor),
      weight_(name + ".weight", {out_channels, factor[0], factor[1], factor[2], in_channels}, ParamRole::shared),
      bias_(name + ".bias", {out_channels}, ParamRole::shared) {
  init_he(weight_, in_channels, init);
}

namespace {

struct UpGeometry {
  int fz, fy, fx;
  Shape in;
  std::size_t factor() const { return static_cast<std::size_t>(fz) * fy * fx; }
};

}  // namespace

Tensor UpConv3d::infer(const Tensor& x) const {
  const Shape& s = x.shape();
  if (s.c != in_) throw ShapeError(weight_.name + ": channel mismatch");
  const auto [fz, fy, fx] = factor_;
  const std::size_t F = static_cast<std::size_t>(fz) * fy * fx;
  const auto P = static_cast<Eigen::Index>(s.spatial());
  Tensor out({s.n, out_, s.d * fz, s.h * fy, s.w * fx});
  ConstMapMatrix W(weight_.value.data(), static_cast<Eigen::Index>(out_ * F), in_);
  RowMatrix tmp;
  const int OH = s.h * fy, OW = s.w * fx;
  for (int n = 0; n < s.n; ++n) {
    tmp.noalias() = W * ConstMapMatrix(x.sample(n), in_, P);
    for (int co = 0; co < out_; ++co) {
      float* dst = out.channel(n, co);
      const float b = bias_.value[static_cast<std::size_t>(co)];
      for (int a = 0; a < fz; ++a)
        for (int bb = 0; bb < fy; ++bb)
          for (int c = 0; c < fx; ++c) {
            const float* row = tmp.data() + (co * F + static_cast<std::size_t>((a * fy + bb) * fx + c)) * P;
            std::size_t p = 0;
            for (int iz = 0; iz < s.d; ++iz)
              for (int iy = 0; iy < s.h; ++iy) {
                float* line = dst + ((static_cast<std::size_t>(iz) * fz + a) * OH + iy * fy + bb) * OW + c;
                for (int ix = 0; ix < s.w; ++ix, ++p) line[ix * fx] = row[p] + b;
              }
          }
    }
  }
  return out;
}

Tensor UpConv3d::forward(const Tensor& x) {
  input_ = x;
  return infer(x);
}

Tensor UpConv3d::backward(const Tensor& grad_out) {
  const Shape& s = input_.shape();
  const auto [fz, fy, fx] = factor_;
  const std::size_t F = static_cast<std::size_t>(fz) * fy * fx;
  const auto P = static_cast<Eigen::Index>(s.spatial());
  const int OH = s.h * fy, OW = s.w * fx;
  ConstMapMatrix W(weight_.value.data(), static_cast<Eigen::Index>(out_ * F), in_);
  MapMatrix dW(weight_.grad.data(), static_cast<Eigen::Index>(out_ * F), in_);
  RowMatrix gathered(static_cast<Eigen::Index>(out_ * F), P);
  Tensor grad_in(s);
  for (int n = 0; n < s.n; ++n) {
    for (int co = 0; co < out_; ++co) {
      const float* src = grad_out.channel(n, co);
      double bsum = 0.0;
      for (int a = 0; a < fz; ++a)
        for (int bb = 0; bb < fy; ++bb)
          for (int c = 0; c < fx; ++c) {
            float* row = gathered.data() + (co * F + static_cast<std::size_t>((a * fy + bb) * fx + c)) * P;
            std::size_t p = 0;
            for (int iz = 0; iz < s.d; ++iz)
              for (int iy = 0; iy < s.h; ++iy) {
                const float* line = src + ((static_cast<std::size_t>(iz) * fz + a) * OH + iy * fy + bb) * OW + c;
                for (int ix = 0; ix < s.w; ++ix, ++p) {
                  row[p] = line[ix * fx];
                  bsum += row[p];
                }
              }
          }
      bias_.grad[static_cast<std::size_t>(co)] += static_cast<float>(bsum);
    }
    ConstMapMatrix X(input_.sample(n), in_, P);
    dW.noalias() += gathered * X.transpose();
    MapMatrix(grad_in.sample(n), in_, P).noalias() = W.transpose() * gathered;
  }
  weight_.touched = bias_.touched = true;
  return grad_in;
}

void UpConv3d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void UpConv3d::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------------------------------------
// MaxPool3d

Tensor MaxPool3d::run(const Tensor& x, std::vector<std::uint32_t>* argmax) const {
  const Shape& s = x.shape();
  const auto [fz, fy, fx] = factor_;
  if (s.d % fz || s.h % fy || s.w % fx) throw ShapeError("max pool: input " + to_string(s) + " not divisible");
  Tensor out({s.n, s.c, s.d / fz, s.h / fy, s.w / fx});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const float* src = x.channel(n, c);
      for (int z = 0; z < s.d / fz; ++z)
        for (int y = 0; y < s.h / fy; ++y)
          for (int xx = 0; xx < s.w / fx; ++xx, ++o) {
            float best = -std::numeric_limits<float>::infinity();
            std::uint32_t where = 0;
            for (int a = 0; a < fz; ++a)
              for (int b = 0; b < fy; ++b)
                for (int cc = 0; cc < fx; ++cc) {
                  const auto idx = static_cast<std::uint32_t>(((z * fz + a) * s.h + y * fy + b) * s.w + xx * fx + cc);
                  if (src[idx] > best) best = src[idx], where = idx;
                }
            out[o] = best;
            if (argmax) (*argmax)[o] = where;
          }
    }
  return out;
}

Tensor MaxPool3d::forward(const Tensor& x) {
  in_shape_ = x.shape();
  return run(x, &argmax_);
}

Tensor MaxPool3d::infer(const Tensor& x) const { return run(x, nullptr); }

Tensor MaxPool3d::backward(const Tensor& grad_out) const {
  Tensor grad_in(in_shape_);
  const std::size_t per_channel = grad_out.shape().spatial();
  std::size_t o = 0;
  for (int n = 0; n < in_shape_.n; ++n)
    for (int c = 0; c < in_shape_.c; ++c) {
      float* dst = grad_in.channel(n, c);
      for (std::size_t i = 0; i < per_channel; ++i, ++o) dst[argmax_[o]] += grad_out[o];
    }
  return grad_in;
}

// ---------------------------------------------------------------------------------------------
// LeakyRelu

Tensor LeakyRelu::infer(const Tensor& x) const {
  Tensor out = x;
  for (auto& v : out.values()) v = v > 0.0f ? v : v * slope_;
  return out;
}

Tensor LeakyRelu::forward(const Tensor& x) {
  positive_.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) positive_[i] = x[i] > 0.0f;
  return infer(x);
}

Tensor LeakyRelu::backward(const Tensor& grad_out) const {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!positive_[i]) g[i] *= slope_;
  return g;
}

// ---------------------------------------------------------------------------------------------
// Dropout

Tensor Dropout::run(const Tensor& x, Rng* rng, std::vector<float>* mask) const {
  if (mask) mask->clear();
  if (!rng || rate_ <= 0.0f) return x;
  const float keep = 1.0f - rate_;
  const float scale = 1.0f / keep;
  Tensor out = x;
  if (mask) mask->resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float m = rng->uniform() < keep ? scale : 0.0f;
    out[i] *= m;
    if (mask) (*mask)[i] = m;
  }
  return out;
}

Tensor Dropout::forward(const Tensor& x, Rng* rng) { return run(x, rng, &mask_); }
Tensor Dropout::infer(const Tensor& x, Rng* rng) const { return run(x, rng, nullptr); }

Tensor Dropout::backward(const Tensor& grad_out) const {
  if (mask_.empty()) return grad_out;
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask_[i];
  return g;
}

// ---------------------------------------------------------------------------------------------
// InstanceNorm

InstanceNorm::InstanceNorm(std::string name, int channels, float eps)
    : channels_(channels),
      eps_(eps),
      gamma_(name + ".gamma", {channels}, ParamRole::shared, 1.0f),
      beta_(name + ".beta", {channels}, ParamRole::shared, 0.0f) {}

Tensor InstanceNorm::run(const Tensor& x, Tensor* xhat, std::vector<float>* inv_std) const {
  const Shape& s = x.shape();
  if (s.c != channels_) throw ShapeError(gamma_.name + ": channel mismatch");
  const std::size_t m = s.spatial();
  Tensor out(s);
  if (xhat) *xhat = Tensor(s);
  if (inv_std) inv_std->assign(static_cast<std::size_t>(s.n) * s.c, 0.0f);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const float* src = x.channel(n, c);
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += src[i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= static_cast<double>(m);
      const auto istd = static_cast<float>(1.0 / std::sqrt(var + eps_));
      const float g = gamma_.value[static_cast<std::size_t>(c)];
      const float b = beta_.value[static_cast<std::size_t>(c)];
      float* dst = out.channel(n, c);
      float* xh = xhat ? xhat->channel(n, c) : nullptr;
      for (std::size_t i = 0; i < m; ++i) {
        const float v = static_cast<float>(src[i] - mean) * istd;
        if (xh) xh[i] = v;
        dst[i] = g * v + b;
      }
      if (inv_std) (*inv_std)[static_cast<std::size_t>(n) * s.c + c] = istd;
    }
  return out;
}

Tensor InstanceNorm::forward(const Tensor& x) { return run(x, &xhat_, &inv_std_); }
Tensor InstanceNorm::infer(const Tensor& x) const { return run(x, nullptr, nullptr); }

Tensor InstanceNorm::backward(const Tensor& grad_out) {
  const Shape& s = xhat_.shape();
  const std::size_t m = s.spatial();
  Tensor grad_in(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const float* g = grad_out.channel(n, c);
      const float* xh = xhat_.channel(n, c);
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
      gamma_.grad[static_cast<std::size_t>(c)] += static_cast<float>(sum_gx);
      beta_.grad[static_cast<std::size_t>(c)] += static_cast<float>(sum_g);
      const double gamma = gamma_.value[static_cast<std::size_t>(c)];
      const double istd = inv_std_[static_cast<std::size_t>(n) * s.c + c];
      const double mean_g = sum_g / static_cast<double>(m);
      const double mean_gx = sum_gx / static_cast<double>(m);
      float* dst = grad_in.channel(n, c);
      for (std::size_t i = 0; i < m; ++i)
        dst[i] = static_cast<float>(gamma * istd * (g[i] - mean_g - xh[i] * mean_gx));
    }
  gamma_.touched = beta_.touched = true;
  return grad_in;
}

void InstanceNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void InstanceNorm::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// ---------------------------------------------------------------------------------------------
// Softmax

Tensor softmax_channels(const Tensor& logits) {
  const Shape& s = logits.shape();
  const std::size_t m = s.spatial();
  Tensor out(s);
  std::vector<double> e(static_cast<std::size_t>(s.c));
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < m; ++i) {
      double top = logits.channel(n, 0)[i];
      for (int c = 1; c < s.c; ++c) top = std::max<double>(top, logits.channel(n, c)[i]);
      double sum = 0.0;
      for (int c = 0; c < s.c; ++c) {
        e[static_cast<std::size_t>(c)] = std::exp(logits.channel(n, c)[i] - top);
        sum += e[static_cast<std::size_t>(c)];
      }
      for (int c = 0; c < s.c; ++c) out.channel(n, c)[i] = static_cast<float>(e[static_cast<std::size_t>(c)] / sum);
    }
  return out;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
  const Shape& s = probs.shape();
  const std::size_t m = s.spatial();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int c = 0; c < s.c; ++c) dot += static_cast<double>(probs.channel(n, c)[i]) * grad_probs.channel(n, c)[i];
      for (int c = 0; c < s.c; ++c)
        out.channel(n, c)[i] = static_cast<float>(probs.channel(n, c)[i] * (grad_probs.channel(n, c)[i] - dot));
    }
  return out;
}

}  // namespace fpl::nn
