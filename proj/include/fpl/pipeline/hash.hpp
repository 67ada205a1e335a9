#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace fpl::pipeline {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);
/// Relative path -> SHA-256 of every regular file under `dir`, skipping `stage.json`.
std::map<std::string, std::string> hash_tree(const std::filesystem::path& dir);

}  // namespace fpl::pipeline
