#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fpl/dualnorm/segnet.hpp"
#include "fpl/dualnorm/trainer.hpp"
#include "fpl/pseudolabel/filter.hpp"
#include "fpl/translate/cyclegan.hpp"

namespace fpl::jointtrain {

struct JointTrainConfig {
  dualnorm::TrainConfig train;
  bool init_from_generator = true;
};

/// Names of the fields where a checkpoint disagrees with `arch`; empty when compatible.
std::vector<std::string> manifest_differences(const dualnorm::SegNetConfig& arch,
                                              const dualnorm::CheckpointManifest& have);

/// S as an exact copy of the generator checkpoint (both normalisation branches included).
/// Throws IncompatibilityError listing the differing fields.
dualnorm::DualDomainSegNet init_segmentor_from_generator(const std::filesystem::path& generator_stem,
                                                         const dualnorm::SegNetConfig& arch);
dualnorm::DualDomainSegNet init_segmentor_from_generator(const dualnorm::DualDomainSegNet& G,
                                                         const dualnorm::SegNetConfig& arch);

using EpochCallback = std::function<void(const dualnorm::EpochLog&)>;

/// Soft Dice on labelled source images (s branch) plus weighted Dice on pseudo-labelled target
/// images with their A maps (t branch). Every target case needs a record.
std::vector<dualnorm::EpochLog> train_final_segmentor(dualnorm::DualDomainSegNet& S,
                                                      const std::vector<translate::LabeledCase>& source,
                                                      const std::vector<translate::LabeledCase>& target,
                                                      const std::vector<pseudolabel::PseudoLabelRecord>& records,
                                                      const JointTrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Baseline: pseudo labels taken at face value (A = 1), no source term.
std::vector<dualnorm::EpochLog> train_unfiltered(dualnorm::DualDomainSegNet& S,
                                                 const std::vector<translate::LabeledCase>& target,
                                                 const std::vector<pseudolabel::PseudoLabelRecord>& records,
                                                 const JointTrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Baseline without adaptation: source images only, s branch.
std::vector<dualnorm::EpochLog> train_source_only(dualnorm::DualDomainSegNet& S,
                                                  const std::vector<translate::LabeledCase>& source,
                                                  const JointTrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Deterministic tiled segmentation through the given branch (target by default).
LabelMap infer(const dualnorm::DualDomainSegNet& S, const Volume3D& x, const dualnorm::Tiling& tiling,
               DomainTag d = DomainTag::target);

}  // namespace fpl::jointtrain
