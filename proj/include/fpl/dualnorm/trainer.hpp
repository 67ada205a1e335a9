#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fpl/core/types.hpp"
#include "fpl/dualnorm/segnet.hpp"

namespace fpl::dualnorm {

/// One training image. `weight` selects the weighted Dice loss for this case.
struct TrainCase {
  const Volume3D* image = nullptr;
  const LabelMap* label = nullptr;
  const WeightMap* weight = nullptr;
};

/// A set of cases routed through one domain's normalisation branch.
struct TrainStream {
  std::string name;
  DomainTag domain = DomainTag::source;
  std::vector<TrainCase> cases;
};

struct TrainConfig {
  int epochs = 10;
  int steps_per_epoch = 0;  // 0: one pass over the largest stream
  int batch = 2;
  Dims3 patch{16, 16, 16};
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  std::vector<double> stream_loss;  // mean per-step loss of each stream
  double total = 0.0;               // sum of the stream terms
};

/// Each optimisation step draws one patch batch per stream, adds the per-stream mean Dice losses
/// (soft Dice, or weighted Dice where the case carries a weight map), and takes one Adam step.
/// Throws NumericError with epoch/step diagnostics on a non-finite loss.
std::vector<EpochLog> train_segnet(DualDomainSegNet& net, const std::vector<TrainStream>& streams,
                                   const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {});

/// Whole-volume prediction; reflect-pads to the network's downsampling factor and crops back.
ProbabilityMap predict_volume(const DualDomainSegNet& net, const Volume3D& x, DomainTag d, Rng* dropout_rng = nullptr);

/// Sliding-window layout. Overlaps are fractions of the patch along z and in-plane.
struct Tiling {
  Dims3 patch{16, 16, 16};
  double z_overlap = 0.5;
  double inplane_overlap = 0.25;
  int tiles_per_forward = 8;
};

/// Tile corners along one axis: stride patch*(1-overlap), the last tile flush with the end.
std::vector<int> tile_starts(int extent, int patch, double overlap);

/// Tiled prediction: reflect-pads volumes smaller than a patch, averages probabilities uniformly where
/// tiles overlap, crops back. Dropout is active only when `dropout_rng` is given.
ProbabilityMap predict_tiled(const DualDomainSegNet& net, const Volume3D& x, DomainTag d, const Tiling& tiling,
                             Rng* dropout_rng = nullptr);

/// K stochastic tiled passes; pass k draws dropout masks from substream "mc<k>" of `seed`.
std::vector<ProbabilityMap> mc_dropout_predict(const DualDomainSegNet& net, const Volume3D& x, DomainTag d, int K,
                                               std::uint64_t seed, const Tiling& tiling);

LabelMap argmax_labels(const ProbabilityMap& p, Spacing3 spacing = {});

}  // namespace fpl::dualnorm
