#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fpl/data/synthetic.hpp"
#include "fpl/dualnorm/segnet.hpp"
#include "fpl/dualnorm/trainer.hpp"
#include "fpl/pseudolabel/filter.hpp"
#include "fpl/translate/cyclegan.hpp"

namespace fpl::pipeline {

struct SegTrainSettings {
  int epochs = 0;
  int steps_per_epoch = 10;
  int batch = 2;
  Dims3 patch{16, 16, 16};
  double lr = 1e-3;
};

/// Every hyper-parameter of the pipeline. TOML layout: top-level `seed`, `[paths]`, and one flat
/// `[stage.<name>]` table per stage.
struct PipelineConfig {
  std::uint64_t seed = 2024;
  std::filesystem::path workdir = "work";
  std::filesystem::path dataset;  // empty: <workdir>/data/index.json

  data::SyntheticSpec synth;
  translate::CycleGanConfig translate;
  dualnorm::SegNetConfig net;
  SegTrainSettings generator{200};
  pseudolabel::FilterConfig filter;
  SegTrainSettings segmentor{100};
  bool init_from_generator = true;
  dualnorm::Tiling tiling;

  PipelineConfig();

  std::filesystem::path dataset_index() const;

  /// Stage tables present in the file must be complete; a missing key is a ConfigError naming it.
  /// Absent tables keep their defaults. Unknown keys are rejected.
  static PipelineConfig from_toml_string(const std::string& text);
  static PipelineConfig from_toml_file(const std::filesystem::path& path);
  std::string to_toml() const;

  /// Canonical text of the settings one stage depends on (plus the seed), and its SHA-256.
  std::string stage_text(const std::string& stage) const;
  std::string stage_hash(const std::string& stage) const;
  std::string config_hash() const;

  void validate() const;
};

}  // namespace fpl::pipeline
