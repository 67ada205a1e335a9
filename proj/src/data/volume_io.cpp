#include "fpl/data/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fpl/core/error.hpp"

namespace fpl::data {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

namespace {

fs::path stem_of(const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".json" || ext == ".raw") return fs::path(path).replace_extension();
  return path;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("short write to " + path.string());
}

struct Header {
  Dims3 dims;
  Spacing3 spacing;
  std::string dtype;
};

void write_header(const fs::path& stem, const Dims3& dims, const Spacing3& spacing, const char* dtype) {
  json h;
  h["dims"] = {dims.depth, dims.height, dims.width};
  h["spacing"] = {spacing.z, spacing.y, spacing.x};
  h["dtype"] = dtype;
  h["order"] = "zyx";
  h["endian"] = "little";
  const std::string text = h.dump(2) + "\n";
  write_file(header_path(stem), text.data(), text.size());
}

Header read_header(const fs::path& stem) {
  const fs::path path = header_path(stem);
  const std::string text = read_file(path);
  json h;
  try {
    h = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed volume header " + path.string() + ": " + e.what(), e.byte);
  }
  const auto fail = [&](const std::string& why) { throw ParseError(path.string() + ": " + why, 0); };
  if (!h.is_object()) fail("header is not a JSON object");
  static const char* kKeys[] = {"dims", "spacing", "dtype", "order", "endian"};
  for (const char* key : kKeys)
    if (!h.contains(key)) fail(std::string("missing key '") + key + "'");
  if (h.size() != std::size(kKeys)) fail("unexpected extra keys");

  if (!h["endian"].is_string()) fail("endian must be a string");
  if (h["endian"] != "little")
    throw UnsupportedEncodingError(path.string() + ": endian '" + h["endian"].dump() + "' is not supported");
  if (h["order"] != "zyx") throw UnsupportedEncodingError(path.string() + ": only order \"zyx\" is supported");

  const auto& d = h["dims"];
  const auto& s = h["spacing"];
  if (!d.is_array() || d.size() != 3) fail("dims must have three entries");
  if (!s.is_array() || s.size() != 3) fail("spacing must have three entries");
  for (const auto& v : d)
    if (!v.is_number_integer() || v.get<long long>() < 1) fail("dims must be positive integers");
  for (const auto& v : s)
    if (!v.is_number() || !(v.get<double>() > 0)) fail("spacing must be positive numbers");

  Header out;
  out.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
  out.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
  if (!h["dtype"].is_string()) fail("dtype must be a string");
  out.dtype = h["dtype"].get<std::string>();
  if (out.dtype != "float32" && out.dtype != "uint8")
    throw UnsupportedEncodingError(path.string() + ": dtype '" + out.dtype + "' is not supported");
  return out;
}

std::string read_payload(const fs::path& stem, std::size_t expected) {
  std::string bytes = read_file(payload_path(stem));
  if (bytes.size() != expected)
    throw TruncationError(payload_path(stem).string() + ": payload has " + std::to_string(bytes.size()) +
                          " bytes, header implies " + std::to_string(expected));
  return bytes;
}

}  // namespace

fs::path header_path(const fs::path& path) { return fs::path(stem_of(path)).concat(".json"); }
fs::path payload_path(const fs::path& path) { return fs::path(stem_of(path)).concat(".raw"); }

bool volume_exists(const fs::path& path) {
  return fs::exists(header_path(path)) && fs::exists(payload_path(path));
}

void write_volume(const Volume3D& volume, const fs::path& path) {
  validate(volume, false);
  const fs::path stem = stem_of(path);
  write_header(stem, volume.dims(), volume.spacing(), "float32");
  write_file(payload_path(stem), volume.values().data(), volume.size() * sizeof(float));
}

Volume3D read_volume(const fs::path& path) {
  const fs::path stem = stem_of(path);
  const Header h = read_header(stem);
  if (h.dtype != "float32") throw UnsupportedEncodingError(stem.string() + ": expected float32, got " + h.dtype);
  const std::string bytes = read_payload(stem, h.dims.voxels() * sizeof(float));
  std::vector<float> values(h.dims.voxels());
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return Volume3D(h.dims, h.spacing, std::move(values));
}

void write_labels(const LabelMap& labels, const fs::path& path) {
  validate(labels);
  const fs::path stem = stem_of(path);
  write_header(stem, labels.dims(), labels.spacing(), "uint8");
  write_file(payload_path(stem), labels.values().data(), labels.size());
}

LabelMap read_labels(const fs::path& path, int num_classes) {
  const fs::path stem = stem_of(path);
  const Header h = read_header(stem);
  if (h.dtype != "uint8") throw UnsupportedEncodingError(stem.string() + ": expected uint8, got " + h.dtype);
  const std::string bytes = read_payload(stem, h.dims.voxels());
  std::vector<std::uint8_t> values(bytes.begin(), bytes.end());
  LabelMap out(h.dims, num_classes, h.spacing, std::move(values));
  validate(out);
  return out;
}

}  // namespace fpl::data
