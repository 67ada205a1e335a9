#pragma once

#include <filesystem>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "fpl/pipeline/config.hpp"

namespace fpl::pipeline {

/// Which final segmentor a train-segmentor/infer/eval run refers to.
enum class Variant {
  fpl_plus,     // joint source + weighted pseudo-label training, initialised from G
  unfiltered,   // pseudo labels at face value (A = 1), no source term, initialised from G
  source_only,  // no adaptation: source images only, inferred through the source branch
};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

const std::vector<std::string>& stage_names();

struct RunOptions {
  bool resume = false;  // skip a stage whose log matches the config and whose artifacts are intact
  bool force = false;   // wipe existing output first
  Variant variant = Variant::fpl_plus;
  std::ostream* log = nullptr;
};

struct StageLog {
  std::string stage;
  std::string variant;
  std::string config_hash;
  std::string stage_hash;
  std::uint64_t seed = 0;
  std::uint64_t stage_seed = 0;
  std::string dataset_hash;
  std::string inputs_hash;  // digest of the upstream stages' artifacts
  std::map<std::string, std::string> artifacts;  // relative path -> SHA-256
  double wall_time_s = 0.0;

  static StageLog read(const std::filesystem::path& stage_dir);
};

struct StageResult {
  StageLog log;
  bool skipped = false;
};

/// Output directory of a stage under the work dir; variant-specific stages get a suffix.
std::filesystem::path stage_dir(const PipelineConfig& cfg, const std::string& stage, Variant v = Variant::fpl_plus);

/// SHA-256 over every file next to the dataset index (index included).
std::string dataset_hash(const std::filesystem::path& index_path);

StageResult run_stage(const std::string& stage, const PipelineConfig& cfg, const RunOptions& opt = {});

/// Every stage the variant needs, in order (synth only when the dataset is not external).
std::vector<StageResult> run_all(const PipelineConfig& cfg, const RunOptions& opt = {});

struct EvalRow {
  std::string case_id;
  int cls = 1;
  double dice = 0.0;
  double assd_mm = 0.0;
};

/// Per-case, per-foreground-class Dice and ASSD of the `<id>_label` predictions in `pred_dir`
/// against the labelled target test cases of the dataset.
std::vector<EvalRow> evaluate_predictions(const std::filesystem::path& pred_dir,
                                          const std::filesystem::path& index_path);

std::vector<EvalRow> read_eval_csv(const std::filesystem::path& csv);

/// Cohort mean foreground Dice of each eval directory. Throws ValidationError if the runs were
/// made on different datasets.
std::map<std::string, double> compare_runs(const std::vector<std::filesystem::path>& eval_dirs);

}  // namespace fpl::pipeline
