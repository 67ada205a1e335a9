#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fpl/pseudolabel/filter.hpp"

namespace fpl::pseudolabel {

/// `<dir>/<case_id>.plrec/`: pseudo_label (uint8), pbar (float32, channels stacked along z), A and M
/// (float32) and meta.json {case_id, v, eta, u, w, K, e, num_classes}.
std::filesystem::path record_path(const std::filesystem::path& dir, const std::string& case_id);
void save_record(const PseudoLabelRecord& r, const std::filesystem::path& dir);
/// Variance and entropy maps are not stored and come back empty.
PseudoLabelRecord load_record(const std::filesystem::path& plrec_dir);

void save_cohort(const std::vector<PseudoLabelRecord>& records, const std::filesystem::path& dir);
/// Records named by `case_ids`; a missing one is a ValidationError naming the case.
std::vector<PseudoLabelRecord> load_cohort(const std::filesystem::path& dir, const std::vector<std::string>& case_ids);

}  // namespace fpl::pseudolabel
