#include "fpl/jointtrain/segmentor.hpp"

#include <map>
#include <sstream>

#include "fpl/core/error.hpp"

namespace fpl::jointtrain {

using dualnorm::CheckpointManifest;
using dualnorm::DualDomainSegNet;
using dualnorm::SegNetConfig;

std::vector<std::string> manifest_differences(const SegNetConfig& arch, const CheckpointManifest& have) {
  std::vector<std::string> diff;
  const SegNetConfig& h = have.arch;
  if (h.in_channels != arch.in_channels) diff.push_back("in_channels");
  if (h.num_classes != arch.num_classes) diff.push_back("num_classes");
  if (h.base_width != arch.base_width) diff.push_back("base_width");
  if (h.levels != arch.levels) diff.push_back("levels");
  if (h.flat_levels != arch.flat_levels) diff.push_back("flat_levels");
  if (h.dropout != arch.dropout) diff.push_back("dropout");
  if (h.bn.momentum != arch.bn.momentum) diff.push_back("bn_momentum");
  if (h.bn.eps != arch.bn.eps) diff.push_back("bn_eps");
  if (diff.empty()) {
    // same arch fields: the layout must match too
    const DualDomainSegNet probe(arch, 0);
    if (probe.bn_sites() != have.bn_sites) diff.push_back("bn_sites");
    const auto ps = probe.parameters();
    bool same = ps.size() == have.params.size();
    for (std::size_t i = 0; same && i < ps.size(); ++i)
      same = ps[i]->name == have.params[i].name && ps[i]->shape == have.params[i].shape &&
             ps[i]->role == have.params[i].role;
    if (!same) diff.push_back("params");
  }
  return diff;
}

namespace {

[[noreturn]] void incompatible(const std::vector<std::string>& diff) {
  std::ostringstream os;
  os << "generator checkpoint is incompatible with the segmentor; differing fields:";
  for (const auto& d : diff) os << ' ' << d;
  throw IncompatibilityError(os.str());
}

CheckpointManifest manifest_of(const DualDomainSegNet& net) {
  CheckpointManifest m;
  m.arch = net.config();
  m.bn_sites = net.bn_sites();
  for (const auto* p : net.parameters()) m.params.push_back({p->name, p->shape, p->role});
  return m;
}

}  // namespace

DualDomainSegNet init_segmentor_from_generator(const std::filesystem::path& generator_stem, const SegNetConfig& arch) {
  const auto diff = manifest_differences(arch, CheckpointManifest::read(generator_stem));
  if (!diff.empty()) incompatible(diff);
  return DualDomainSegNet::load(generator_stem);
}

DualDomainSegNet init_segmentor_from_generator(const DualDomainSegNet& G, const SegNetConfig& arch) {
  const auto diff = manifest_differences(arch, manifest_of(G));
  if (!diff.empty()) incompatible(diff);
  DualDomainSegNet S(arch, 0);
  S.copy_from(G);
  return S;
}

namespace {

dualnorm::TrainStream labelled_stream(const std::vector<translate::LabeledCase>& cases) {
  dualnorm::TrainStream s{"source", DomainTag::source, {}};
  for (const auto& c : cases) {
    if (!c.label) throw ValidationError("source case '" + c.case_id + "' has no label");
    s.cases.push_back({&c.image, &*c.label, nullptr});
  }
  return s;
}

dualnorm::TrainStream pseudo_stream(const std::vector<translate::LabeledCase>& target,
                                    const std::vector<pseudolabel::PseudoLabelRecord>& records, bool weighted) {
  std::map<std::string, const pseudolabel::PseudoLabelRecord*> by_id;
  for (const auto& r : records) by_id[r.case_id] = &r;
  dualnorm::TrainStream s{"target", DomainTag::target, {}};
  for (const auto& c : target) {
    const auto it = by_id.find(c.case_id);
    if (it == by_id.end()) throw ValidationError("no pseudo-label record for target case '" + c.case_id + "'");
    const auto& r = *it->second;
    require_same_dims(c.image.dims(), r.pseudo_label.dims(), "pseudo label of " + c.case_id);
    s.cases.push_back({&c.image, &r.pseudo_label, weighted ? &r.weight : nullptr});
  }
  return s;
}

}  // namespace

std::vector<dualnorm::EpochLog> train_final_segmentor(DualDomainSegNet& S,
                                                      const std::vector<translate::LabeledCase>& source,
                                                      const std::vector<translate::LabeledCase>& target,
                                                      const std::vector<pseudolabel::PseudoLabelRecord>& records,
                                                      const JointTrainConfig& cfg, const EpochCallback& on_epoch) {
  return dualnorm::train_segnet(S, {labelled_stream(source), pseudo_stream(target, records, true)}, cfg.train,
                                on_epoch);
}

std::vector<dualnorm::EpochLog> train_unfiltered(DualDomainSegNet& S, const std::vector<translate::LabeledCase>& target,
                                                 const std::vector<pseudolabel::PseudoLabelRecord>& records,
                                                 const JointTrainConfig& cfg, const EpochCallback& on_epoch) {
  return dualnorm::train_segnet(S, {pseudo_stream(target, records, false)}, cfg.train, on_epoch);
}

std::vector<dualnorm::EpochLog> train_source_only(DualDomainSegNet& S, const std::vector<translate::LabeledCase>& source,
                                                  const JointTrainConfig& cfg, const EpochCallback& on_epoch) {
  return dualnorm::train_segnet(S, {labelled_stream(source)}, cfg.train, on_epoch);
}

LabelMap infer(const DualDomainSegNet& S, const Volume3D& x, const dualnorm::Tiling& tiling, DomainTag d) {
  return dualnorm::argmax_labels(dualnorm::predict_tiled(S, x, d, tiling), x.spacing());
}

}  // namespace fpl::jointtrain
