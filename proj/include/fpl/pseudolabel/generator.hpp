#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fpl/dualnorm/segnet.hpp"
#include "fpl/dualnorm/trainer.hpp"
#include "fpl/pseudolabel/filter.hpp"
#include "fpl/translate/cyclegan.hpp"

namespace fpl::pseudolabel {

struct GeneratorConfig {
  dualnorm::SegNetConfig net;
  dualnorm::TrainConfig train;
  std::uint64_t init_seed = 0;
};

/// G trained on source-like images through the s branch and target-like images through the t branch,
/// one batch of each per step.
dualnorm::DualDomainSegNet train_generator(const std::vector<translate::LabeledCase>& source_like,
                                           const std::vector<translate::LabeledCase>& target_like,
                                           const GeneratorConfig& cfg,
                                           std::vector<dualnorm::EpochLog>* logs = nullptr,
                                           const std::function<void(const dualnorm::EpochLog&)>& on_epoch = {});

/// Agreement between the deterministic target-branch prediction on x_t and the source-branch
/// prediction on T_s(x_t).
WeightMap consensus_map(const dualnorm::DualDomainSegNet& G, const translate::SliceTranslator& T_s,
                        const Volume3D& x_t, const dualnorm::Tiling& tiling);

/// Runs the MC passes and both consensus passes for every case, then the cohort filter.
/// Case k's dropout masks come from substream "<case_id>" of `seed`.
std::vector<PseudoLabelRecord> build_records(const std::vector<translate::LabeledCase>& target,
                                             const dualnorm::DualDomainSegNet& G,
                                             const translate::SliceTranslator& T_s, const FilterConfig& cfg,
                                             const dualnorm::Tiling& tiling, std::uint64_t seed);

}  // namespace fpl::pseudolabel
