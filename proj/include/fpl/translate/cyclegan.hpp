#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpl/core/types.hpp"
#include "fpl/translate/networks.hpp"

namespace fpl::translate {

enum class GanMode { log_likelihood, least_squares };

inline constexpr double kScoreClamp = 1e-6;

struct GanTerms {
  double objective = 0.0;  // E[log D(real)] + E[log(1 - D(fake))], maximised by D
  double disc_loss = 0.0;  // -objective
  double gen_loss = 0.0;   // -E[log D(fake)]
};

/// Evaluates the adversarial objective on discriminator outputs D in (0,1), clamped to
/// [1e-6, 1-1e-6] before the logarithm.
GanTerms adversarial_terms(std::span<const float> d_real, std::span<const float> d_fake);
/// Same, running `disc` on the two slice batches.
GanTerms adversarial_loss(const DiscriminatorNet& disc, const nn::Tensor& real_slices, const nn::Tensor& fake_slices);

/// mean|T_s(T_t(x_s)) - x_s| + mean|T_t(T_s(x_t)) - x_t|.
double cycle_loss(const SliceTranslator& T_s, const SliceTranslator& T_t, const nn::Tensor& source_batch,
                  const nn::Tensor& target_batch);

struct CycleGanConfig {
  int epochs = 12;
  int steps_per_epoch = 40;
  int batch = 4;
  double lambda_cyc = 10.0;
  double lr = 2e-4;
  double beta1 = 0.5;
  GanMode gan = GanMode::log_likelihood;
  TranslatorArch translator;
  DiscriminatorArch discriminator;
  std::uint64_t seed = 0;

  /// Epoch (1-based) whose end-of-epoch weights become the auxiliary translator: ceil(2E/3).
  int auxiliary_epoch() const { return (2 * epochs + 2) / 3; }
};

struct EpochLosses {
  int epoch = 0;
  double gan_s = 0, gan_t = 0, cycle = 0, disc_s = 0, disc_t = 0;
};

struct TranslatorSet {
  TranslatorNet T_s, T_t, T_at;
  DiscriminatorNet D_s, D_t;
  int final_epoch = 0;
  int auxiliary_epoch = 0;
  std::vector<EpochLosses> history;

  void save(const std::filesystem::path& dir) const;
  static TranslatorSet load(const std::filesystem::path& dir);
};

/// Pool of axial slices drawn from a set of volumes (all with the same in-plane size).
class SlicePool {
 public:
  explicit SlicePool(std::vector<Volume3D> volumes);
  std::size_t size() const { return index_.size(); }
  /// N uniformly drawn slices as N x 1 x 1 x H x W.
  nn::Tensor sample(int n, Rng& rng) const;
  int height() const { return height_; }
  int width() const { return width_; }

 private:
  std::vector<Volume3D> volumes_;
  std::vector<std::pair<std::size_t, int>> index_;
  int height_ = 0, width_ = 0;
};

/// Unpaired cycle-consistent training. Throws NumericError on a non-finite loss.
TranslatorSet train_cyclegan(const SlicePool& source, const SlicePool& target, const CycleGanConfig& cfg,
                             const std::function<void(const EpochLosses&)>& on_epoch = {});

/// Applies `t` to every axial slice independently; in-plane sizes that the translator cannot
/// take are reflect-padded and cropped back.
Volume3D translate_volume(const SliceTranslator& t, const Volume3D& v);

struct LabeledCase {
  std::string case_id;
  Volume3D image;  // normalised
  std::optional<LabelMap> label;
};

struct CddaResult {
  std::vector<LabeledCase> source_like;  // X^s, X^s', X^s''   (3N)
  std::vector<LabeledCase> target_like;  // X^s->t, X^s->at    (2N)
};

/// Cross-domain augmentation of labelled source cases. Every output shares the origin label.
CddaResult cdda_augment(const std::vector<LabeledCase>& source, const SliceTranslator& T_s,
                        const SliceTranslator& T_t, const SliceTranslator& T_at);

}  // namespace fpl::translate
