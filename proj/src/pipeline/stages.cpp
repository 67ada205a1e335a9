#include "fpl/pipeline/stages.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "fpl/core/error.hpp"
#include "fpl/core/metrics.hpp"
#include "fpl/core/rng.hpp"
#include "fpl/data/dataset.hpp"
#include "fpl/data/volume_io.hpp"
#include "fpl/jointtrain/segmentor.hpp"
#include "fpl/pipeline/hash.hpp"
#include "fpl/pseudolabel/generator.hpp"
#include "fpl/pseudolabel/records.hpp"

namespace fpl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kStageNames = {"synth",           "translate", "train-generator", "build-records",
                                              "train-segmentor", "infer",     "eval"};

bool variant_specific(const std::string& stage) {
  return stage == "train-segmentor" || stage == "infer" || stage == "eval";
}

std::string variant_stage_hash(const PipelineConfig& cfg, const std::string& stage, Variant v) {
  if (!variant_specific(stage)) return cfg.stage_hash(stage);
  return sha256_hex(cfg.stage_text(stage) + "variant = " + std::string(to_string(v)) + "\n");
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

bool dir_has_entries(const fs::path& d) { return fs::exists(d) && !fs::is_empty(d); }

std::vector<translate::LabeledCase> load_cases(const data::DatasetIndex& index, DomainTag domain, data::Split split,
                                               bool with_labels) {
  std::vector<translate::LabeledCase> out;
  for (const auto* r : index.select(domain, split)) {
    translate::LabeledCase c{r->case_id, data::load_image(*r, index.normalized), std::nullopt};
    if (with_labels) c.label = data::load_label(*r, index.num_classes);
    out.push_back(std::move(c));
  }
  if (out.empty())
    throw ValidationError("dataset has no " + std::string(to_string(domain)) + " " + std::string(data::to_string(split)) +
                          " cases");
  return out;
}

std::vector<std::string> ids_of(const std::vector<translate::LabeledCase>& cs) {
  std::vector<std::string> ids;
  for (const auto& c : cs) ids.push_back(c.case_id);
  return ids;
}

dualnorm::TrainConfig train_config(const SegTrainSettings& s, std::uint64_t seed) {
  dualnorm::TrainConfig t;
  t.epochs = s.epochs;
  t.steps_per_epoch = s.steps_per_epoch;
  t.batch = s.batch;
  t.patch = s.patch;
  t.lr = s.lr;
  t.seed = seed;
  return t;
}

json epoch_json(const dualnorm::EpochLog& l) { return {{"epoch", l.epoch}, {"streams", l.stream_loss}, {"total", l.total}}; }

// Everything one stage body needs.
struct Ctx {
  const PipelineConfig& cfg;
  const RunOptions& opt;
  Variant variant;
  fs::path dir;
  std::uint64_t stage_seed;
  json losses = json::array();

  void say(const std::string& s) const {
    if (opt.log) *opt.log << s << std::endl;
  }
  fs::path up(const std::string& stage) const { return stage_dir(cfg, stage, variant); }
};

void run_synth(Ctx& c) {
  if (!c.cfg.dataset.empty())
    throw ConfigError("paths.dataset points to an external dataset; the synth stage does not apply");
  auto spec = c.cfg.synth;
  spec.seed = c.stage_seed;
  const auto idx = data::generate_synthetic(spec, c.dir);
  c.say("synth: " + std::to_string(idx.records.size()) + " cases");
}

void run_translate(Ctx& c, const data::DatasetIndex& index) {
  const auto src = load_cases(index, DomainTag::source, data::Split::train, true);
  const auto tgt = load_cases(index, DomainTag::target, data::Split::train, false);
  std::vector<Volume3D> sv, tv;
  for (const auto& x : src) sv.push_back(x.image);
  for (const auto& x : tgt) tv.push_back(x.image);

  auto gc = c.cfg.translate;
  gc.seed = c.stage_seed;
  const auto ts = translate::train_cyclegan(translate::SlicePool(std::move(sv)), translate::SlicePool(std::move(tv)), gc,
                                            [&](const translate::EpochLosses& l) {
                                              c.losses.push_back({{"epoch", l.epoch},
                                                                  {"gan_s", l.gan_s},
                                                                  {"gan_t", l.gan_t},
                                                                  {"cycle", l.cycle},
                                                                  {"disc_s", l.disc_s},
                                                                  {"disc_t", l.disc_t}});
                                              std::ostringstream os;
                                              os << "translate: epoch " << l.epoch << " cycle " << l.cycle << " gan "
                                                 << l.gan_s + l.gan_t;
                                              c.say(os.str());
                                            });
  ts.save(c.dir / "translators");

  const auto aug = translate::cdda_augment(src, ts.T_s, ts.T_t, ts.T_at);
  data::DatasetIndex out;
  out.num_classes = index.num_classes;
  out.normalized = true;
  const auto emit = [&](const std::vector<translate::LabeledCase>& cases, DomainTag d, const char* sub) {
    const fs::path base = c.dir / "augmented" / sub;
    for (const auto& x : cases) {
      data::write_volume(x.image, base / x.case_id);
      data::write_labels(*x.label, base / (x.case_id + "_label"));
      out.records.push_back({x.case_id, base / x.case_id, base / (x.case_id + "_label"), d, data::Split::train});
    }
  };
  emit(aug.source_like, DomainTag::source, "source_like");
  emit(aug.target_like, DomainTag::target, "target_like");
  out.save(c.dir / "augmented" / "index.json");
}

void run_generator(Ctx& c) {
  const auto aug = data::DatasetIndex::load(c.up("translate") / "augmented" / "index.json");
  const auto sl = load_cases(aug, DomainTag::source, data::Split::train, true);
  const auto tl = load_cases(aug, DomainTag::target, data::Split::train, true);
  pseudolabel::GeneratorConfig g;
  g.net = c.cfg.net;
  g.net.num_classes = aug.num_classes;
  g.train = train_config(c.cfg.generator, substream_seed(c.stage_seed, "train"));
  g.init_seed = substream_seed(c.stage_seed, "init");
  const auto G = pseudolabel::train_generator(sl, tl, g, nullptr, [&](const dualnorm::EpochLog& l) {
    c.losses.push_back(epoch_json(l));
    c.say("train-generator: epoch " + std::to_string(l.epoch) + " loss " + std::to_string(l.total));
  });
  G.save(c.dir / "G");
}

void run_records(Ctx& c, const data::DatasetIndex& index) {
  const auto G = dualnorm::DualDomainSegNet::load(c.up("train-generator") / "G");
  const auto ts = translate::TranslatorSet::load(c.up("translate") / "translators");
  const auto tgt = load_cases(index, DomainTag::target, data::Split::train, false);
  const auto recs = pseudolabel::build_records(tgt, G, ts.T_s, c.cfg.filter, c.cfg.tiling, c.stage_seed);
  pseudolabel::save_cohort(recs, c.dir);
  for (const auto& r : recs)
    c.losses.push_back({{"case_id", r.case_id}, {"v", r.v}, {"eta", r.eta}, {"u", r.u}, {"w", r.w}});
  c.say("build-records: " + std::to_string(recs.size()) + " records");
}

void run_segmentor(Ctx& c, const data::DatasetIndex& index) {
  auto arch = c.cfg.net;
  arch.num_classes = index.num_classes;
  jointtrain::JointTrainConfig jc;
  jc.train = train_config(c.cfg.segmentor, substream_seed(c.stage_seed, "train"));
  jc.init_from_generator = c.cfg.init_from_generator && c.variant != Variant::source_only;

  auto S = jc.init_from_generator ? jointtrain::init_segmentor_from_generator(c.up("train-generator") / "G", arch)
                                  : dualnorm::DualDomainSegNet(arch, substream_seed(c.stage_seed, "init"));
  const auto cb = [&](const dualnorm::EpochLog& l) {
    c.losses.push_back(epoch_json(l));
    c.say("train-segmentor: epoch " + std::to_string(l.epoch) + " loss " + std::to_string(l.total));
  };
  const auto src = load_cases(index, DomainTag::source, data::Split::train, true);
  if (c.variant == Variant::source_only) {
    jointtrain::train_source_only(S, src, jc, cb);
  } else {
    const auto tgt = load_cases(index, DomainTag::target, data::Split::train, false);
    const auto recs = pseudolabel::load_cohort(c.up("build-records"), ids_of(tgt));
    if (c.variant == Variant::fpl_plus)
      jointtrain::train_final_segmentor(S, src, tgt, recs, jc, cb);
    else
      jointtrain::train_unfiltered(S, tgt, recs, jc, cb);
  }
  S.save(c.dir / "S");
}

json case_metrics(const std::string& id, const LabelMap& pred, const LabelMap& gt) {
  double d = 0, a = 0;
  const int C = gt.num_classes();
  for (int k = 1; k < C; ++k) {
    d += dice_score(pred, gt, k);
    a += assd(pred, gt, k, gt.spacing());
  }
  return {{"case_id", id}, {"dice", d / (C - 1)}, {"assd_mm", a / (C - 1)}};
}

void run_infer(Ctx& c, const data::DatasetIndex& index) {
  const auto S = dualnorm::DualDomainSegNet::load(c.up("train-segmentor") / "S");
  const DomainTag branch = c.variant == Variant::source_only ? DomainTag::source : DomainTag::target;
  const auto test = index.select(DomainTag::target, data::Split::test);
  if (test.empty()) throw ValidationError("dataset has no target test cases");
  fs::create_directories(c.dir);
  for (const auto* r : test) {
    const Volume3D x = data::load_image(*r, index.normalized);
    LabelMap y = jointtrain::infer(S, x, c.cfg.tiling, branch);
    y.set_spacing(x.spacing());
    data::write_labels(y, c.dir / (r->case_id + "_label"));
    if (r->label) {
      const auto m = case_metrics(r->case_id, y, data::load_label(*r, index.num_classes));
      write_json(c.dir / (r->case_id + ".json"), m);
      c.say("infer: " + r->case_id + " dice " + std::to_string(m["dice"].get<double>()));
    }
  }
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << x;
  return os.str();
}

std::string dice_svg(const std::vector<EvalRow>& rows, double mean) {
  const int bar = 18, gap = 6, h = 200, left = 40;
  const int w = left + static_cast<int>(rows.size()) * (bar + gap) + 20;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h + 40 << "\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << h << "\" x2=\"" << w << "\" y2=\"" << h << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int bh = static_cast<int>(std::lround(rows[i].dice * h));
    const int x = left + static_cast<int>(i) * (bar + gap);
    os << "<rect x=\"" << x << "\" y=\"" << h - bh << "\" width=\"" << bar << "\" height=\"" << bh
       << "\" fill=\"steelblue\"><title>" << rows[i].case_id << " class " << rows[i].cls << ": " << fmt(rows[i].dice)
       << "</title></rect>\n";
  }
  const int my = h - static_cast<int>(std::lround(mean * h));
  os << "<line x1=\"" << left << "\" y1=\"" << my << "\" x2=\"" << w << "\" y2=\"" << my
     << "\" stroke=\"firebrick\" stroke-dasharray=\"4\"/>\n";
  os << "<text x=\"4\" y=\"" << my + 4 << "\" font-size=\"10\">" << fmt(mean).substr(0, 5) << "</text>\n";
  os << "<text x=\"" << left << "\" y=\"" << h + 25 << "\" font-size=\"12\">Dice per test case</text>\n</svg>\n";
  return os.str();
}

void run_eval(Ctx& c, const std::string& ds_hash) {
  const auto rows = evaluate_predictions(c.up("infer"), c.cfg.dataset_index());
  std::map<int, std::pair<double, double>> sums;
  std::map<int, int> n;
  std::ofstream csv(c.dir / "metrics.csv");
  csv << "case_id,class,dice,assd_mm\n";
  for (const auto& r : rows) {
    csv << r.case_id << "," << r.cls << "," << fmt(r.dice) << "," << fmt(r.assd_mm) << "\n";
    sums[r.cls].first += r.dice;
    sums[r.cls].second += r.assd_mm;
    ++n[r.cls];
  }
  double md = 0, ma = 0;
  json per_class = json::object();
  for (const auto& [k, s] : sums) {
    const double d = s.first / n[k], a = s.second / n[k];
    csv << "mean," << k << "," << fmt(d) << "," << fmt(a) << "\n";
    per_class[std::to_string(k)] = {{"dice", d}, {"assd_mm", a}};
    md += d / sums.size();
    ma += a / sums.size();
  }
  csv.close();
  write_json(c.dir / "summary.json", {{"variant", to_string(c.variant)},
                                      {"dataset_hash", ds_hash},
                                      {"cases", rows.size() / std::max<std::size_t>(1, sums.size())},
                                      {"mean_dice", md},
                                      {"mean_assd_mm", ma},
                                      {"classes", per_class}});
  std::ofstream(c.dir / "dice.svg") << dice_svg(rows, md);
  c.say("eval: mean dice " + fmt(md) + " mean assd " + fmt(ma) + " mm");
}

json log_json(const StageLog& l, const json& losses) {
  return {{"stage", l.stage},
          {"variant", l.variant},
          {"config_hash", l.config_hash},
          {"stage_hash", l.stage_hash},
          {"seed", l.seed},
          {"stage_seed", l.stage_seed},
          {"dataset_hash", l.dataset_hash},
          {"inputs_hash", l.inputs_hash},
          {"artifacts", l.artifacts},
          {"losses", losses},
          {"wall_time_s", l.wall_time_s}};
}

std::vector<std::string> upstream_of(const std::string& stage, Variant v, const PipelineConfig& cfg) {
  if (stage == "translate") return {};
  if (stage == "train-generator") return {"translate"};
  if (stage == "build-records") return {"translate", "train-generator"};
  if (stage == "train-segmentor") {
    if (v == Variant::source_only) return {};
    std::vector<std::string> u{"build-records"};
    if (cfg.init_from_generator) u.push_back("train-generator");
    return u;
  }
  if (stage == "infer") return {"train-segmentor"};
  if (stage == "eval") return {"infer"};
  return {};
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::fpl_plus: return "fpl+";
    case Variant::unfiltered: return "unfiltered";
    case Variant::source_only: return "source_only";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  if (text == "fpl+" || text == "fpl_plus") return Variant::fpl_plus;
  if (text == "unfiltered") return Variant::unfiltered;
  if (text == "source_only" || text == "source-only") return Variant::source_only;
  throw ConfigError("unknown variant '" + std::string(text) + "' (expected fpl+, unfiltered or source_only)");
}

const std::vector<std::string>& stage_names() { return kStageNames; }

StageLog StageLog::read(const fs::path& stage_dir) {
  const json j = read_json(stage_dir / "stage.json");
  StageLog l;
  try {
    l.stage = j.at("stage").get<std::string>();
    l.variant = j.at("variant").get<std::string>();
    l.config_hash = j.at("config_hash").get<std::string>();
    l.stage_hash = j.at("stage_hash").get<std::string>();
    l.seed = j.at("seed").get<std::uint64_t>();
    l.stage_seed = j.at("stage_seed").get<std::uint64_t>();
    l.dataset_hash = j.at("dataset_hash").get<std::string>();
    l.inputs_hash = j.at("inputs_hash").get<std::string>();
    l.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    l.wall_time_s = j.at("wall_time_s").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError((stage_dir / "stage.json").string() + ": " + e.what());
  }
  return l;
}

fs::path stage_dir(const PipelineConfig& cfg, const std::string& stage, Variant v) {
  static const std::map<std::string, std::string> base = {
      {"synth", "data"},          {"translate", "translate"},       {"train-generator", "generator"},
      {"build-records", "records"}, {"train-segmentor", "segmentor"}, {"infer", "predictions"},
      {"eval", "eval"}};
  const auto it = base.find(stage);
  if (it == base.end()) throw ConfigError("unknown stage '" + stage + "'");
  std::string name = it->second;
  if (variant_specific(stage) && v != Variant::fpl_plus) name += "-" + std::string(to_string(v));
  return cfg.workdir / name;
}

std::string dataset_hash(const fs::path& index_path) {
  if (!fs::exists(index_path)) throw IoError("dataset index not found: " + index_path.string());
  std::string all;
  for (const auto& [rel, h] : hash_tree(index_path.parent_path())) all += rel + " " + h + "\n";
  return sha256_hex(all);
}

StageResult run_stage(const std::string& stage, const PipelineConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  if (std::find(kStageNames.begin(), kStageNames.end(), stage) == kStageNames.end())
    throw ConfigError("unknown stage '" + stage + "'");
  Ctx c{cfg, opt, opt.variant, stage_dir(cfg, stage, opt.variant), substream_seed(cfg.seed, stage)};
  const auto t0 = std::chrono::steady_clock::now();

  // The dataset: every stage except synth reads it.
  std::string ds_hash;
  if (stage != "synth") {
    const fs::path idx = cfg.dataset_index();
    if (cfg.dataset.empty()) {
      const fs::path d = stage_dir(cfg, "synth");
      if (!fs::exists(d / "stage.json")) throw MissingStageError("synth", "no dataset at " + d.string());
      if (StageLog::read(d).stage_hash != cfg.stage_hash("synth"))
        throw MissingStageError("synth", "the dataset was generated with different settings; rerun synth");
    } else if (!fs::exists(idx)) {
      throw ConfigError("paths.dataset: no index at " + idx.string());
    }
    ds_hash = dataset_hash(idx);
  }

  if (stage == "eval") {
    const fs::path p = stage_dir(cfg, "infer", opt.variant);
    if (fs::exists(p / "stage.json") && StageLog::read(p).dataset_hash != ds_hash)
      throw ValidationError("predictions in " + p.string() + " were made on a different dataset (hash " +
                            StageLog::read(p).dataset_hash.substr(0, 12) + ", current " + ds_hash.substr(0, 12) + ")");
  }
  std::string inputs;
  for (const auto& u : upstream_of(stage, opt.variant, cfg)) {
    const fs::path p = stage_dir(cfg, u, opt.variant);
    if (!fs::exists(p / "stage.json")) throw MissingStageError(u, "run it before " + stage + " (" + p.string() + ")");
    const auto l = StageLog::read(p);
    if (l.stage_hash != variant_stage_hash(cfg, u, opt.variant))
      throw MissingStageError(u, "its output in " + p.string() + " was produced with different settings; rerun it");
    if (l.dataset_hash != ds_hash) throw MissingStageError(u, "its output in " + p.string() + " used a different dataset");
    for (const auto& [rel, h] : l.artifacts) inputs += u + "/" + rel + " " + h + "\n";
  }

  StageLog log;
  log.stage = stage;
  log.variant = variant_specific(stage) ? std::string(to_string(opt.variant)) : "";
  log.config_hash = cfg.config_hash();
  log.stage_hash = variant_stage_hash(cfg, stage, opt.variant);
  log.seed = cfg.seed;
  log.stage_seed = c.stage_seed;
  log.dataset_hash = ds_hash;
  log.inputs_hash = sha256_hex(inputs);

  if (dir_has_entries(c.dir)) {
    if (opt.resume && !opt.force && fs::exists(c.dir / "stage.json")) {
      const auto old = StageLog::read(c.dir);
      const bool same_data = (stage == "synth" || old.dataset_hash == ds_hash) && old.inputs_hash == log.inputs_hash;
      if (old.stage_hash == log.stage_hash && same_data && hash_tree(c.dir) == old.artifacts) {
        c.say(stage + ": up to date, skipped");
        return {old, true};
      }
    }
    if (!opt.resume && !opt.force)
      throw ConfigError("output directory " + c.dir.string() + " is not empty; pass --resume or --force");
    c.say(stage + ": discarding previous output in " + c.dir.string());
    fs::remove_all(c.dir);
  }
  fs::create_directories(c.dir);

  if (stage == "synth") {
    run_synth(c);
    log.dataset_hash = dataset_hash(c.dir / "index.json");
  } else {
    const auto index = data::DatasetIndex::load(cfg.dataset_index());
    if (stage == "translate") run_translate(c, index);
    else if (stage == "train-generator") run_generator(c);
    else if (stage == "build-records") run_records(c, index);
    else if (stage == "train-segmentor") run_segmentor(c, index);
    else if (stage == "infer") run_infer(c, index);
    else run_eval(c, ds_hash);
  }

  log.artifacts = hash_tree(c.dir);
  log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(c.dir / "stage.json", log_json(log, c.losses));
  return {log, false};
}

std::vector<StageResult> run_all(const PipelineConfig& cfg, const RunOptions& opt) {
  std::vector<std::string> order;
  if (cfg.dataset.empty()) order.push_back("synth");
  if (opt.variant != Variant::source_only)
    for (const char* s : {"translate", "train-generator", "build-records"}) order.emplace_back(s);
  for (const char* s : {"train-segmentor", "infer", "eval"}) order.emplace_back(s);
  std::vector<StageResult> out;
  for (const auto& s : order) out.push_back(run_stage(s, cfg, opt));
  return out;
}

std::vector<EvalRow> evaluate_predictions(const fs::path& pred_dir, const fs::path& index_path) {
  const auto index = data::DatasetIndex::load(index_path);
  std::vector<EvalRow> rows;
  for (const auto* r : index.select(DomainTag::target, data::Split::test)) {
    if (!r->label) continue;
    const fs::path p = pred_dir / (r->case_id + "_label");
    if (!data::volume_exists(p)) throw MissingStageError("infer", "no prediction for case " + r->case_id);
    const LabelMap pred = data::read_labels(p, index.num_classes);
    const LabelMap gt = data::load_label(*r, index.num_classes);
    for (int k = 1; k < index.num_classes; ++k)
      rows.push_back({r->case_id, k, dice_score(pred, gt, k), assd(pred, gt, k, gt.spacing())});
  }
  if (rows.empty()) throw ValidationError("dataset has no labelled target test cases");
  return rows;
}

std::vector<EvalRow> read_eval_csv(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot read " + csv.string());
  std::string line;
  std::getline(in, line);
  if (line != "case_id,class,dice,assd_mm") throw ParseError(csv.string() + ": unexpected header", 0);
  std::vector<EvalRow> rows;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string id, cls, d, a;
    if (!std::getline(ls, id, ',') || !std::getline(ls, cls, ',') || !std::getline(ls, d, ',') || !std::getline(ls, a))
      throw ParseError(csv.string() + ": malformed row", offset);
    try {
      rows.push_back({id, std::stoi(cls), std::stod(d), std::stod(a)});
    } catch (const std::exception&) {
      throw ParseError(csv.string() + ": malformed number", offset);
    }
    offset += line.size() + 1;
  }
  return rows;
}

std::map<std::string, double> compare_runs(const std::vector<fs::path>& eval_dirs) {
  std::map<std::string, double> out;
  std::string ds;
  for (const auto& d : eval_dirs) {
    const json s = read_json(d / "summary.json");
    const auto h = s.at("dataset_hash").get<std::string>();
    if (ds.empty()) ds = h;
    else if (h != ds) throw ValidationError("eval runs in " + d.string() + " used a different dataset");
    out[d.filename().string()] = s.at("mean_dice").get<double>();
  }
  return out;
}

}  // namespace fpl::pipeline
