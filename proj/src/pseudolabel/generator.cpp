#include "fpl/pseudolabel/generator.hpp"

#include "fpl/core/error.hpp"

namespace fpl::pseudolabel {

using dualnorm::DualDomainSegNet;

namespace {

dualnorm::TrainStream stream(const char* name, DomainTag d, const std::vector<translate::LabeledCase>& cases) {
  dualnorm::TrainStream s{name, d, {}};
  for (const auto& c : cases) {
    if (!c.label) throw ValidationError(std::string(name) + " case '" + c.case_id + "' has no label");
    s.cases.push_back({&c.image, &*c.label, nullptr});
  }
  return s;
}

}  // namespace

DualDomainSegNet train_generator(const std::vector<translate::LabeledCase>& source_like,
                                 const std::vector<translate::LabeledCase>& target_like, const GeneratorConfig& cfg,
                                 std::vector<dualnorm::EpochLog>* logs,
                                 const std::function<void(const dualnorm::EpochLog&)>& on_epoch) {
  if (source_like.empty() || target_like.empty()) throw ValidationError("generator needs both augmented sets");
  DualDomainSegNet G(cfg.net, cfg.init_seed);
  auto l = dualnorm::train_segnet(
      G, {stream("source_like", DomainTag::source, source_like), stream("target_like", DomainTag::target, target_like)},
      cfg.train, on_epoch);
  if (logs) *logs = std::move(l);
  return G;
}

namespace {

std::pair<LabelMap, LabelMap> consensus_pair(const DualDomainSegNet& G, const translate::SliceTranslator& T_s,
                                             const Volume3D& x_t, const dualnorm::Tiling& tiling) {
  const Volume3D back = translate::translate_volume(T_s, x_t);
  if (back.dims() != x_t.dims()) throw Error("translation changed volume dims");
  return {dualnorm::argmax_labels(dualnorm::predict_tiled(G, x_t, DomainTag::target, tiling), x_t.spacing()),
          dualnorm::argmax_labels(dualnorm::predict_tiled(G, back, DomainTag::source, tiling), x_t.spacing())};
}

}  // namespace

WeightMap consensus_map(const DualDomainSegNet& G, const translate::SliceTranslator& T_s, const Volume3D& x_t,
                        const dualnorm::Tiling& tiling) {
  const auto [a, b] = consensus_pair(G, T_s, x_t, tiling);
  return consensus_map(a, b);
}

std::vector<PseudoLabelRecord> build_records(const std::vector<translate::LabeledCase>& target,
                                             const DualDomainSegNet& G, const translate::SliceTranslator& T_s,
                                             const FilterConfig& cfg, const dualnorm::Tiling& tiling,
                                             std::uint64_t seed) {
  cfg.validate();
  if (target.empty()) throw ValidationError("build_records: empty target cohort");
  std::vector<CaseEvidence> evidence;
  for (const auto& c : target) {
    try {
      CaseEvidence ev;
      ev.case_id = c.case_id;
      ev.mc = dualnorm::mc_dropout_predict(G, c.image, DomainTag::target, cfg.K, substream_seed(seed, c.case_id), tiling);
      std::tie(ev.target_pred, ev.back_pred) = consensus_pair(G, T_s, c.image, tiling);
      evidence.push_back(std::move(ev));
    } catch (const Error& err) {
      throw ValidationError("pseudo-label cohort failed at case '" + c.case_id + "': " + err.what());
    }
  }
  return filter_cohort(evidence, cfg);
}

}  // namespace fpl::pseudolabel
