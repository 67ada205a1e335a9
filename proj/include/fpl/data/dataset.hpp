#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fpl/core/types.hpp"

namespace fpl::data {

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct DatasetRecord {
  std::string case_id;
  std::filesystem::path volume;                // volume stem, absolute once loaded
  std::optional<std::filesystem::path> label;  // label stem
  DomainTag domain = DomainTag::source;
  Split split = Split::train;
};

/// JSON file {"num_classes": C, "normalized": bool, "records": [{case_id, volume, label, domain, split}]}.
/// Paths are stored relative to the index file.
class DatasetIndex {
 public:
  std::vector<DatasetRecord> records;
  int num_classes = 2;
  /// True when volumes on disk are already intensity-normalised (augmented sets).
  bool normalized = false;

  static DatasetIndex load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::vector<const DatasetRecord*> select(DomainTag domain, Split split) const;
  const DatasetRecord* find(std::string_view case_id) const;

  /// case_id uniqueness within each split.
  void validate() const;
  /// Labels present for every source-train record and absent for every target-train record.
  void validate_unsupervised_contract() const;
};

/// Image ready for a network: read and, unless the index says otherwise, z-normalised.
Volume3D load_image(const DatasetRecord& record, bool normalized);
LabelMap load_label(const DatasetRecord& record, int num_classes);

}  // namespace fpl::data
