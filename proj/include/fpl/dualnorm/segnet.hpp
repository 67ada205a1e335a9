#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fpl/core/rng.hpp"
#include "fpl/core/types.hpp"
#include "fpl/dualnorm/dual_bn.hpp"
#include "fpl/nn/layers.hpp"

namespace fpl::dualnorm {

struct SegNetConfig {
  int in_channels = 1;
  int num_classes = 2;
  int base_width = 8;
  int levels = 4;
  int flat_levels = 2;   // the shallowest levels use 1x3x3 kernels
  float dropout = 0.3f;  // applied after the two deepest encoder and decoder blocks
  DualBNConfig bn;

  int downsample_factor() const { return 1 << (levels - 1); }
  int width(int level) const { return base_width << level; }
  void validate() const;
  bool operator==(const SegNetConfig& o) const;
};

/// Conv -> Dual-BN -> LeakyReLU, twice, optionally followed by dropout.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in, int out, bool flat, float dropout, DualBNConfig bn, Rng& init);

  nn::Tensor forward(const nn::Tensor& x, DomainTag d, Mode mode, Rng* rng);
  nn::Tensor infer(const nn::Tensor& x, DomainTag d, Rng* rng) const;
  nn::Tensor backward(const nn::Tensor& g, bool need_input_grad);
  void collect(std::vector<nn::Parameter*>& out);
  void collect(std::vector<const nn::Parameter*>& out) const;
  void bn_sites(std::vector<std::string>& out) const;

 private:
  nn::Conv3d conv1_, conv2_;
  DualBatchNorm bn1_, bn2_;
  nn::LeakyRelu act1_{0.01f}, act2_{0.01f};
  nn::Dropout drop_;
};

/// Encoder-decoder with skip connections whose normalisation layers are all dual-domain. The
/// convolution weights θ are shared; γ, β and running statistics exist per domain.
class DualDomainSegNet {
 public:
  DualDomainSegNet(const SegNetConfig& cfg, std::uint64_t init_seed);

  const SegNetConfig& config() const { return cfg_; }

  /// Probabilities (softmax over channels). Caches activations for backward().
  nn::Tensor forward(const nn::Tensor& x, DomainTag d, Mode mode, Rng* dropout_rng = nullptr);
  /// Gradient of the loss with respect to the forward() output probabilities.
  void backward(const nn::Tensor& grad_probs);
  /// Eval-mode normalisation; dropout only when a random stream is supplied.
  nn::Tensor predict(const nn::Tensor& x, DomainTag d, Rng* dropout_rng = nullptr) const;

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  std::vector<std::string> bn_sites() const;

  /// `<stem>.json` manifest plus `<stem>.bin` parameter blob.
  void save(const std::filesystem::path& stem) const;
  static DualDomainSegNet load(const std::filesystem::path& stem);
  void copy_from(const DualDomainSegNet& other);

  void check_input(const nn::Shape& s) const;

 private:
  SegNetConfig cfg_;
  std::vector<ConvBlock> enc_, dec_;  // dec_[l] merges level l+1 into level l
  std::vector<nn::MaxPool3d> pool_;
  std::vector<nn::UpConv3d> up_;
  nn::Conv3d head_;
  nn::Tensor probs_;
  std::vector<int> skip_channels_;
};

struct CheckpointManifest {
  SegNetConfig arch;
  std::vector<std::string> bn_sites;
  struct Entry {
    std::string name;
    std::vector<int> shape;
    nn::ParamRole role;
  };
  std::vector<Entry> params;

  static CheckpointManifest read(const std::filesystem::path& stem);
};

nn::Tensor to_tensor(const std::vector<const Volume3D*>& batch);
nn::Tensor to_tensor(const Volume3D& v);
ProbabilityMap to_probability_map(const nn::Tensor& probs, int sample = 0);

/// Single-volume probabilities. The patch must be divisible by the downsampling factor.
ProbabilityMap segnet_forward(const DualDomainSegNet& net, const Volume3D& patch, DomainTag d);

/// K stochastic passes with dropout active and eval-mode normalisation. Pass k draws its dropout
/// masks from its own stream derived from `seed`.
std::vector<ProbabilityMap> mc_dropout_predict(const DualDomainSegNet& net, const Volume3D& x, DomainTag d, int K,
                                               std::uint64_t seed);

}  // namespace fpl::dualnorm
