#pragma once

#include <cstdint>
#include <filesystem>

#include "fpl/core/types.hpp"
#include "fpl/data/dataset.hpp"

namespace fpl::data {

/// How a domain renders the shared canonical anatomy (background, organ, lesions in [0,1]).
struct DomainAppearance {
  double base_intensity = 0.0;  // additive offset after the transform
  int contrast_sign = +1;       // -1 inverts the canonical intensities
  double gamma = 1.0;
  double noise_min = 0.02;      // per-case Gaussian noise std drawn from [noise_min, noise_max]
  double noise_max = 0.02;
};

struct SyntheticSpec {
  int num_source_train = 32;
  int num_target_train = 32;
  int num_target_val = 4;
  int num_target_test = 8;
  Dims3 dims{32, 32, 32};
  Spacing3 spacing{1.0, 1.0, 1.0};
  int lesions_min = 1;
  int lesions_max = 3;
  double radius_min = 3.0;  // voxels
  double radius_max = 5.0;
  double lesion_contrast_min = 0.25;  // canonical lesion brightness above the organ
  double lesion_contrast_max = 0.45;
  DomainAppearance source{0.0, +1, 1.0, 0.02, 0.04};
  DomainAppearance target{0.0, -1, 2.0, 0.02, 0.12};
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticCase {
  Volume3D image;
  LabelMap label;
};

/// One case, fully determined by (spec.seed, case_id).
SyntheticCase synthesize_case(const SyntheticSpec& spec, DomainTag domain, const std::string& case_id);

/// Writes both cohorts under `out_dir` and returns the saved index (`out_dir/index.json`).
/// Target training labels are written to disk for evaluation only and listed in
/// `out_dir/reference_labels.json`; the index itself leaves them unlabeled.
DatasetIndex generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace fpl::data
