#include "fpl/pseudolabel/records.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "fpl/core/error.hpp"
#include "fpl/data/volume_io.hpp"

namespace fpl::pseudolabel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Volume3D as_volume(const WeightMap& m) { return Volume3D(m.dims(), m.spacing(), m.storage()); }

WeightMap as_weights(const Volume3D& v) { return WeightMap(v.dims(), v.spacing(), v.storage()); }

Volume3D stack_channels(const ProbabilityMap& p, Spacing3 spacing) {
  const Dims3 d = p.dims();
  return Volume3D({d.depth * p.channels(), d.height, d.width}, spacing, std::vector<float>(p.values().begin(), p.values().end()));
}

}  // namespace

fs::path record_path(const fs::path& dir, const std::string& case_id) { return dir / (case_id + ".plrec"); }

void save_record(const PseudoLabelRecord& r, const fs::path& dir) {
  const fs::path out = record_path(dir, r.case_id);
  fs::create_directories(out);
  const Spacing3 sp = r.pseudo_label.spacing();
  data::write_labels(r.pseudo_label, out / "pseudo_label");
  data::write_volume(stack_channels(r.pbar, sp), out / "pbar");
  data::write_volume(as_volume(r.weight), out / "A");
  data::write_volume(as_volume(r.consensus), out / "M");
  const json meta = {{"case_id", r.case_id}, {"v", r.v},  {"eta", r.eta}, {"u", r.u},
                     {"w", r.w},             {"K", r.K}, {"e", r.e},     {"num_classes", r.pbar.channels()}};
  std::ofstream f(out / "meta.json");
  if (!f) throw IoError("cannot write " + (out / "meta.json").string());
  f << meta.dump(2) << '\n';
}

PseudoLabelRecord load_record(const fs::path& plrec_dir) {
  std::ifstream f(plrec_dir / "meta.json");
  if (!f) throw IoError("missing pseudo-label metadata in " + plrec_dir.string());
  json meta;
  try {
    meta = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ParseError((plrec_dir / "meta.json").string() + ": " + e.what(), e.byte);
  }
  PseudoLabelRecord r;
  try {
    r.case_id = meta.at("case_id").get<std::string>();
    r.v = meta.at("v").get<double>();
    r.eta = meta.at("eta").get<long>();
    r.u = meta.at("u").get<double>();
    r.w = meta.at("w").get<double>();
    r.K = meta.at("K").get<int>();
    r.e = meta.at("e").get<double>();
  } catch (const json::exception& e) {
    throw ParseError((plrec_dir / "meta.json").string() + ": " + e.what(), 0);
  }
  const int C = meta.value("num_classes", 2);
  r.pseudo_label = data::read_labels(plrec_dir / "pseudo_label", C);
  const Dims3 d = r.pseudo_label.dims();
  const Volume3D pbar = data::read_volume(plrec_dir / "pbar");
  if (pbar.dims() != Dims3{d.depth * C, d.height, d.width}) throw ShapeError("pbar does not match pseudo label dims");
  r.pbar = ProbabilityMap(d, C, pbar.storage());
  r.weight = as_weights(data::read_volume(plrec_dir / "A"));
  r.consensus = as_weights(data::read_volume(plrec_dir / "M"));
  require_same_dims(r.weight.dims(), d, "weight map A");
  require_same_dims(r.consensus.dims(), d, "consensus map M");
  return r;
}

void save_cohort(const std::vector<PseudoLabelRecord>& records, const fs::path& dir) {
  for (const auto& r : records) save_record(r, dir);
}

std::vector<PseudoLabelRecord> load_cohort(const fs::path& dir, const std::vector<std::string>& case_ids) {
  std::vector<PseudoLabelRecord> out;
  for (const auto& id : case_ids) {
    const fs::path p = record_path(dir, id);
    if (!fs::exists(p / "meta.json")) throw ValidationError("no pseudo-label record for target case '" + id + "'");
    out.push_back(load_record(p));
  }
  return out;
}

}  // namespace fpl::pseudolabel
