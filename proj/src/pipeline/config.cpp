#include "fpl/pipeline/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <toml.hpp>

#include "fpl/core/error.hpp"
#include "fpl/pipeline/hash.hpp"

namespace fpl::pipeline {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kStages = {"synth",           "translate",       "train-generator", "build-records",
                                          "train-segmentor", "infer",           "eval"};

// One list of fields per table, shared by the reader, the writer and the hash.
template <typename V>
void visit_table(const std::string& table, PipelineConfig& c, V& v) {
  if (table == "paths") {
    v.field("workdir", c.workdir);
    v.field("dataset", c.dataset);
  } else if (table == "synth") {
    auto& s = c.synth;
    v.field("num_source_train", s.num_source_train);
    v.field("num_target_train", s.num_target_train);
    v.field("num_target_val", s.num_target_val);
    v.field("num_target_test", s.num_target_test);
    v.field("dims", s.dims);
    v.field("spacing", s.spacing);
    v.field("lesions_min", s.lesions_min);
    v.field("lesions_max", s.lesions_max);
    v.field("radius_min", s.radius_min);
    v.field("radius_max", s.radius_max);
    v.field("lesion_contrast_min", s.lesion_contrast_min);
    v.field("lesion_contrast_max", s.lesion_contrast_max);
    for (auto [name, look] : {std::pair{"source", &s.source}, std::pair{"target", &s.target}}) {
      const std::string p = name;
      v.field(p + "_base_intensity", look->base_intensity);
      v.field(p + "_contrast_sign", look->contrast_sign);
      v.field(p + "_gamma", look->gamma);
      v.field(p + "_noise_min", look->noise_min);
      v.field(p + "_noise_max", look->noise_max);
    }
  } else if (table == "translate") {
    auto& t = c.translate;
    v.field("epochs", t.epochs);
    v.field("steps_per_epoch", t.steps_per_epoch);
    v.field("batch", t.batch);
    v.field("lambda_cyc", t.lambda_cyc);
    v.field("lr", t.lr);
    v.field("beta1", t.beta1);
    v.field("gan", t.gan);
    v.field("ngf", t.translator.ngf);
    v.field("residual_blocks", t.translator.residual_blocks);
    v.field("ndf", t.discriminator.ndf);
  } else if (table == "train-generator") {
    v.field("epochs", c.generator.epochs);
    v.field("steps_per_epoch", c.generator.steps_per_epoch);
    v.field("batch", c.generator.batch);
    v.field("patch", c.generator.patch);
    v.field("lr", c.generator.lr);
    v.field("base_width", c.net.base_width);
    v.field("levels", c.net.levels);
    v.field("flat_levels", c.net.flat_levels);
    v.field("dropout", c.net.dropout);
    v.field("bn_momentum", c.net.bn.momentum);
    v.field("bn_eps", c.net.bn.eps);
  } else if (table == "build-records") {
    v.field("K", c.filter.K);
    v.field("e", c.filter.e);
  } else if (table == "train-segmentor") {
    v.field("epochs", c.segmentor.epochs);
    v.field("steps_per_epoch", c.segmentor.steps_per_epoch);
    v.field("batch", c.segmentor.batch);
    v.field("patch", c.segmentor.patch);
    v.field("lr", c.segmentor.lr);
    v.field("init_from_generator", c.init_from_generator);
  } else if (table == "infer") {
    v.field("patch", c.tiling.patch);
    v.field("z_overlap", c.tiling.z_overlap);
    v.field("inplane_overlap", c.tiling.inplane_overlap);
    v.field("tiles_per_forward", c.tiling.tiles_per_forward);
  }
  // eval has no settings
}

std::string gan_name(translate::GanMode m) {
  return m == translate::GanMode::least_squares ? "least_squares" : "log_likelihood";
}

struct Writer {
  toml::table t;
  void field(const std::string& k, int x) { t.insert(k, x); }
  void field(const std::string& k, double x) { t.insert(k, x); }
  void field(const std::string& k, float x) { t.insert(k, static_cast<double>(x)); }
  void field(const std::string& k, bool x) { t.insert(k, x); }
  void field(const std::string& k, const fs::path& x) { t.insert(k, x.generic_string()); }
  void field(const std::string& k, const Dims3& d) { t.insert(k, toml::array{d.depth, d.height, d.width}); }
  void field(const std::string& k, const Spacing3& s) { t.insert(k, toml::array{s.z, s.y, s.x}); }
  void field(const std::string& k, translate::GanMode m) { t.insert(k, gan_name(m)); }
};

struct Reader {
  const toml::table& t;
  std::string prefix;
  std::set<std::string> seen;

  toml::node_view<const toml::node> need(const std::string& k) {
    seen.insert(k);
    auto n = t[k];
    if (!n) throw ConfigError("missing config key '" + prefix + k + "'");
    return n;
  }
  [[noreturn]] void bad(const std::string& k, const char* want) {
    throw ConfigError("config key '" + prefix + k + "' must be " + want);
  }
  void field(const std::string& k, int& x) {
    auto n = need(k);
    if (!n.is_integer()) bad(k, "an integer");
    x = static_cast<int>(n.value<std::int64_t>().value());
  }
  void field(const std::string& k, double& x) {
    auto n = need(k);
    if (!n.is_number()) bad(k, "a number");
    x = n.value<double>().value();
  }
  void field(const std::string& k, float& x) {
    double d = 0;
    field(k, d);
    x = static_cast<float>(d);
  }
  void field(const std::string& k, bool& x) {
    auto n = need(k);
    if (!n.is_boolean()) bad(k, "a boolean");
    x = n.value<bool>().value();
  }
  void field(const std::string& k, fs::path& x) {
    auto n = need(k);
    if (!n.is_string()) bad(k, "a string");
    x = n.value<std::string>().value();
  }
  std::vector<double> triple(const std::string& k) {
    auto n = need(k);
    const auto* a = n.as_array();
    if (!a || a->size() != 3) bad(k, "an array of three numbers");
    std::vector<double> out;
    for (const auto& e : *a) {
      if (!e.is_number()) bad(k, "an array of three numbers");
      out.push_back(e.value<double>().value());
    }
    return out;
  }
  void field(const std::string& k, Dims3& d) {
    const auto v = triple(k);
    for (double x : v)
      if (x != static_cast<int>(x)) bad(k, "an array of three integers");
    d = {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
  }
  void field(const std::string& k, Spacing3& s) {
    const auto v = triple(k);
    s = {v[0], v[1], v[2]};
  }
  void field(const std::string& k, translate::GanMode& m) {
    auto n = need(k);
    const auto s = n.value<std::string>();
    if (s == "log_likelihood") m = translate::GanMode::log_likelihood;
    else if (s == "least_squares") m = translate::GanMode::least_squares;
    else bad(k, "\"log_likelihood\" or \"least_squares\"");
  }
  void finish() {
    for (const auto& [k, _] : t)
      if (!seen.count(std::string(k.str()))) throw ConfigError("unknown config key '" + prefix + std::string(k.str()) + "'");
  }
};

toml::table table_of(const std::string& name, const PipelineConfig& c) {
  Writer w;
  visit_table(name, const_cast<PipelineConfig&>(c), w);
  return std::move(w.t);
}

std::string render(const toml::table& t) {
  std::ostringstream os;
  os << t;
  return os.str();
}

}  // namespace

PipelineConfig::PipelineConfig() {
  synth.seed = 0;  // replaced by the stage seed when the data are generated
  translate.epochs = 60;
  translate.steps_per_epoch = 40;
  translate.batch = 4;
  translate.lr = 1e-3;
}

fs::path PipelineConfig::dataset_index() const {
  return dataset.empty() ? workdir / "data" / "index.json" : dataset;
}

PipelineConfig PipelineConfig::from_toml_string(const std::string& text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + std::string(e.description()));
  }
  PipelineConfig c;
  std::set<std::string> known_top = {"seed", "paths", "stage"};
  for (const auto& [k, _] : root)
    if (!known_top.count(std::string(k.str()))) throw ConfigError("unknown config key '" + std::string(k.str()) + "'");
  if (auto s = root["seed"]) {
    if (!s.is_integer() || s.value<std::int64_t>().value() < 0) throw ConfigError("config key 'seed' must be a non-negative integer");
    c.seed = static_cast<std::uint64_t>(s.value<std::int64_t>().value());
  }
  if (const auto* paths = root["paths"].as_table()) {
    Reader r{*paths, "paths."};
    visit_table("paths", c, r);
    r.finish();
  }
  if (auto st = root["stage"]) {
    const auto* stages = st.as_table();
    if (!stages) throw ConfigError("config key 'stage' must be a table of stage tables");
    for (const auto& [k, node] : *stages) {
      const std::string name(k.str());
      if (std::find(kStages.begin(), kStages.end(), name) == kStages.end())
        throw ConfigError("unknown stage table 'stage." + name + "'");
      const auto* t = node.as_table();
      if (!t) throw ConfigError("'stage." + name + "' must be a table");
      Reader r{*t, "stage." + name + "."};
      visit_table(name, c, r);
      r.finish();
    }
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_toml_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_toml_string(ss.str());
}

std::string PipelineConfig::to_toml() const {
  std::ostringstream os;
  os << "seed = " << seed << "\n\n[paths]\n" << render(table_of("paths", *this)) << "\n";
  for (const auto& s : kStages) {
    if (s == "eval") continue;
    os << "\n[stage." << s << "]\n" << render(table_of(s, *this)) << "\n";
  }
  return os.str();
}

std::string PipelineConfig::stage_text(const std::string& stage) const {
  const auto it = std::find(kStages.begin(), kStages.end(), stage);
  if (it == kStages.end()) throw ConfigError("unknown stage '" + stage + "'");
  std::ostringstream os;
  os << "seed = " << seed << "\n";
  // a stage depends on its own settings and on everything upstream
  for (auto s = kStages.begin(); s <= it; ++s) os << "[" << *s << "]\n" << render(table_of(*s, *this)) << "\n";
  if (it - kStages.begin() >= 3 && it - kStages.begin() < 5) os << "[infer]\n" << render(table_of("infer", *this)) << "\n";
  return os.str();
}

std::string PipelineConfig::stage_hash(const std::string& stage) const { return sha256_hex(stage_text(stage)); }

std::string PipelineConfig::config_hash() const { return sha256_hex(to_toml()); }

void PipelineConfig::validate() const {
  try {
    synth.validate();
    net.validate();
    filter.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (translate.epochs < 3) throw ConfigError("stage.translate.epochs must be >= 3");
  for (const auto* t : {&generator, &segmentor}) {
    if (t->epochs < 1 || t->batch < 1 || t->steps_per_epoch < 0) throw ConfigError("training epochs/batch must be positive");
    const int f = net.downsample_factor();
    if (t->patch.depth % f || t->patch.height % f || t->patch.width % f)
      throw ConfigError("patch " + to_string(t->patch) + " is not divisible by the network factor " + std::to_string(f));
  }
  const int f = net.downsample_factor();
  if (tiling.patch.depth % f || tiling.patch.height % f || tiling.patch.width % f)
    throw ConfigError("stage.infer.patch is not divisible by the network factor");
  if (!(tiling.z_overlap >= 0 && tiling.z_overlap < 1 && tiling.inplane_overlap >= 0 && tiling.inplane_overlap < 1))
    throw ConfigError("tiling overlaps must lie in [0,1)");
}

}  // namespace fpl::pipeline
