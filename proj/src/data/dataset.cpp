#include "fpl/data/dataset.hpp"

#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "fpl/core/error.hpp"
#include "fpl/data/preprocess.hpp"
#include "fpl/data/volume_io.hpp"

namespace fpl::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(text) + "'");
}

DatasetIndex DatasetIndex::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset index " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed dataset index " + path.string() + ": " + e.what(), e.byte);
  }
  const fs::path base = fs::absolute(path).parent_path();
  DatasetIndex out;
  try {
    out.num_classes = j.value("num_classes", 2);
    out.normalized = j.value("normalized", false);
    for (const auto& r : j.at("records")) {
      DatasetRecord rec;
      rec.case_id = r.at("case_id").get<std::string>();
      rec.volume = base / r.at("volume").get<std::string>();
      if (!r.at("label").is_null()) rec.label = base / r.at("label").get<std::string>();
      rec.domain = parse_domain(r.at("domain").get<std::string>());
      rec.split = parse_split(r.at("split").get<std::string>());
      out.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw ParseError("dataset index " + path.string() + ": " + e.what(), 0);
  }
  out.validate();
  return out;
}

void DatasetIndex::save(const fs::path& path) const {
  validate();
  const fs::path base = fs::absolute(path).parent_path();
  json records_json = json::array();
  for (const auto& r : records) {
    json rec;
    rec["case_id"] = r.case_id;
    rec["volume"] = fs::relative(fs::absolute(r.volume), base).generic_string();
    rec["label"] = r.label ? json(fs::relative(fs::absolute(*r.label), base).generic_string()) : json(nullptr);
    rec["domain"] = std::string(fpl::to_string(r.domain));
    rec["split"] = std::string(data::to_string(r.split));
    records_json.push_back(std::move(rec));
  }
  json j;
  j["num_classes"] = num_classes;
  j["normalized"] = normalized;
  j["records"] = std::move(records_json);
  fs::create_directories(base);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset index " + path.string());
  out << j.dump(2) << "\n";
}

std::vector<const DatasetRecord*> DatasetIndex::select(DomainTag domain, Split split) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.domain == domain && r.split == split) out.push_back(&r);
  return out;
}

const DatasetRecord* DatasetIndex::find(std::string_view case_id) const {
  for (const auto& r : records)
    if (r.case_id == case_id) return &r;
  return nullptr;
}

void DatasetIndex::validate() const {
  std::map<Split, std::set<std::string>> seen;
  for (const auto& r : records) {
    if (r.case_id.empty()) throw ValidationError("dataset record with empty case_id");
    if (!seen[r.split].insert(r.case_id).second)
      throw ValidationError("duplicate case_id '" + r.case_id + "' in split " + std::string(data::to_string(r.split)));
  }
}

void DatasetIndex::validate_unsupervised_contract() const {
  for (const auto& r : records) {
    if (r.split != Split::train) continue;
    if (r.domain == DomainTag::source && !r.label)
      throw ValidationError("source training case '" + r.case_id + "' has no label");
    if (r.domain == DomainTag::target && r.label)
      throw ValidationError("target training case '" + r.case_id + "' exposes a label");
  }
}

Volume3D load_image(const DatasetRecord& record, bool normalized) {
  Volume3D v = read_volume(record.volume);
  return normalized ? v : znorm(v);
}

LabelMap load_label(const DatasetRecord& record, int num_classes) {
  if (!record.label) throw ValidationError("case '" + record.case_id + "' has no label");
  return read_labels(*record.label, num_classes);
}

}  // namespace fpl::data
