#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpl/core/rng.hpp"
#include "fpl/nn/layers.hpp"

namespace fpl::translate {

/// Anything that maps a batch of single-channel slices (N x 1 x 1 x H x W) to the same shape.
class SliceTranslator {
 public:
  virtual ~SliceTranslator() = default;
  virtual nn::Tensor translate(const nn::Tensor& slices) const = 0;
};

class IdentityTranslator final : public SliceTranslator {
 public:
  nn::Tensor translate(const nn::Tensor& slices) const override { return slices; }
};

/// Adds a constant to every pixel.
class ShiftTranslator final : public SliceTranslator {
 public:
  explicit ShiftTranslator(float shift) : shift_(shift) {}
  nn::Tensor translate(const nn::Tensor& slices) const override;

 private:
  float shift_;
};

struct TranslatorArch {
  int ngf = 8;         // width of the first layer
  int residual_blocks = 4;
  bool operator==(const TranslatorArch&) const = default;
};

/// 2D encoder / residual / decoder generator: 7x7 stem, two stride-2 downsampling convolutions,
/// residual blocks, two upsampling stages and a linear 7x7 output. Instance normalisation
/// throughout. Slice height and width must be multiples of 4.
class TranslatorNet final : public SliceTranslator {
 public:
  TranslatorNet() = default;
  TranslatorNet(const std::string& name, TranslatorArch arch, std::uint64_t init_seed);

  nn::Tensor forward(const nn::Tensor& x);
  nn::Tensor infer(const nn::Tensor& x) const;
  nn::Tensor backward(const nn::Tensor& grad_out);
  nn::Tensor translate(const nn::Tensor& slices) const override { return infer(slices); }

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  const TranslatorArch& arch() const { return arch_; }

 private:
  struct Stage {
    nn::Conv3d conv;
    nn::InstanceNorm norm;
    nn::LeakyRelu act{0.0f};
  };
  struct Residual {
    Stage a;
    nn::Conv3d conv_b;
    nn::InstanceNorm norm_b;
  };
  struct UpStage {
    nn::UpConv3d up;
    nn::InstanceNorm norm;
    nn::LeakyRelu act{0.0f};
  };

  TranslatorArch arch_;
  Stage stem_, down1_, down2_;
  std::vector<Residual> res_;
  UpStage up1_, up2_;
  nn::Conv3d out_;
};

struct DiscriminatorArch {
  int ndf = 8;
  bool operator==(const DiscriminatorArch&) const = default;
};

/// Patch discriminator returning a map of real/fake logits; D = sigmoid(logits).
class DiscriminatorNet {
 public:
  DiscriminatorNet() = default;
  DiscriminatorNet(const std::string& name, DiscriminatorArch arch, std::uint64_t init_seed);

  nn::Tensor forward(const nn::Tensor& x);
  nn::Tensor infer(const nn::Tensor& x) const;
  nn::Tensor backward(const nn::Tensor& grad_logits);

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  const DiscriminatorArch& arch() const { return arch_; }

 private:
  DiscriminatorArch arch_;
  nn::Conv3d c1_, c2_, c3_, c4_;
  nn::InstanceNorm n2_, n3_;
  nn::LeakyRelu a1_{0.2f}, a2_{0.2f}, a3_{0.2f};
};

/// Checkpoint: `<dir>/<component>.json` {"component","epoch","param_shapes","arch"} and `<component>.bin`.
void save_component(const std::filesystem::path& dir, const std::string& component, int epoch,
                    const std::vector<const nn::Parameter*>& params, const nlohmann::json& arch);
/// Reads the manifest, checks the parameter shapes and fills the values; returns the epoch.
int load_component(const std::filesystem::path& dir, const std::string& component,
                   const std::vector<nn::Parameter*>& params);
nlohmann::json read_component_manifest(const std::filesystem::path& dir, const std::string& component);

}  // namespace fpl::translate
