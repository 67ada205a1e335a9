#pragma once

#include <filesystem>

#include "fpl/core/types.hpp"

namespace fpl::data {

/// On-disk volume: `<stem>.json` header and `<stem>.raw` payload (z-major, little-endian, no
/// padding). The header carries exactly the keys dims, spacing, dtype, order and endian.
///
/// `path` may be the stem itself or either of the two file names.
void write_volume(const Volume3D& volume, const std::filesystem::path& path);
Volume3D read_volume(const std::filesystem::path& path);

/// Label maps are stored with dtype "uint8". The class count is not part of the format, so it is
/// supplied by the caller; labels at or above it are rejected.
void write_labels(const LabelMap& labels, const std::filesystem::path& path);
LabelMap read_labels(const std::filesystem::path& path, int num_classes);

std::filesystem::path header_path(const std::filesystem::path& path);
std::filesystem::path payload_path(const std::filesystem::path& path);
bool volume_exists(const std::filesystem::path& path);

}  // namespace fpl::data
