#include "fpl/dualnorm/segnet.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "fpl/core/error.hpp"
#include "fpl/dualnorm/trainer.hpp"

namespace fpl::dualnorm {

using nlohmann::json;
using nn::Tensor;

void SegNetConfig::validate() const {
  if (in_channels < 1) throw ValidationError("segnet: in_channels must be >= 1");
  if (num_classes < 2) throw ValidationError("segnet: num_classes must be >= 2");
  if (base_width < 1) throw ValidationError("segnet: base_width must be >= 1");
  if (levels < 1 || levels > 6) throw ValidationError("segnet: levels must be in [1,6]");
  if (flat_levels < 0 || flat_levels > levels) throw ValidationError("segnet: flat_levels out of range");
  if (dropout < 0.0f || dropout >= 1.0f) throw ValidationError("segnet: dropout must be in [0,1)");
}

bool SegNetConfig::operator==(const SegNetConfig& o) const {
  return in_channels == o.in_channels && num_classes == o.num_classes && base_width == o.base_width &&
         levels == o.levels && flat_levels == o.flat_levels && dropout == o.dropout &&
         bn.momentum == o.bn.momentum && bn.eps == o.bn.eps;
}

namespace {

nn::ConvSpec conv3(int in, int out, bool flat) {
  nn::ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = flat ? std::array{1, 3, 3} : std::array{3, 3, 3};
  s.pad = flat ? std::array{0, 1, 1} : std::array{1, 1, 1};
  return s;
}

json arch_json(const SegNetConfig& c) {
  return {{"in_channels", c.in_channels}, {"num_classes", c.num_classes}, {"base_width", c.base_width},
          {"levels", c.levels},           {"flat_levels", c.flat_levels}, {"dropout", c.dropout},
          {"bn_momentum", c.bn.momentum}, {"bn_eps", c.bn.eps}};
}

SegNetConfig arch_from_json(const json& j) {
  SegNetConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.levels = j.at("levels").get<int>();
  c.flat_levels = j.at("flat_levels").get<int>();
  c.dropout = j.at("dropout").get<float>();
  c.bn.momentum = j.at("bn_momentum").get<float>();
  c.bn.eps = j.at("bn_eps").get<float>();
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

ConvBlock::ConvBlock(const std::string& name, int in, int out, bool flat, float dropout, DualBNConfig bn, Rng& init)
    : conv1_(name + ".conv1", conv3(in, out, flat), init),
      conv2_(name + ".conv2", conv3(out, out, flat), init),
      bn1_(name + ".bn1", out, bn),
      bn2_(name + ".bn2", out, bn),
      drop_(dropout) {}

Tensor ConvBlock::forward(const Tensor& x, DomainTag d, Mode mode, Rng* rng) {
  Tensor h = act1_.forward(bn1_.forward(conv1_.forward(x), d, mode));
  h = act2_.forward(bn2_.forward(conv2_.forward(h), d, mode));
  return drop_.forward(h, rng);
}

Tensor ConvBlock::infer(const Tensor& x, DomainTag d, Rng* rng) const {
  Tensor h = act1_.infer(bn1_.infer(conv1_.infer(x), d));
  h = act2_.infer(bn2_.infer(conv2_.infer(h), d));
  return drop_.infer(h, rng);
}

Tensor ConvBlock::backward(const Tensor& g, bool need_input_grad) {
  Tensor h = conv2_.backward(bn2_.backward(act2_.backward(drop_.backward(g))));
  return conv1_.backward(bn1_.backward(act1_.backward(h)), need_input_grad);
}

void ConvBlock::collect(std::vector<nn::Parameter*>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
}

void ConvBlock::collect(std::vector<const nn::Parameter*>& out) const {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
}

void ConvBlock::bn_sites(std::vector<std::string>& out) const {
  out.push_back(bn1_.name());
  out.push_back(bn2_.name());
}

// ---------------------------------------------------------------------------------------------

DualDomainSegNet::DualDomainSegNet(const SegNetConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng init(init_seed);
  const int L = cfg.levels;
  auto dropout_at = [&](int level) { return level >= L - 2 ? cfg.dropout : 0.0f; };
  for (int l = 0; l < L; ++l) {
    const int in = l == 0 ? cfg.in_channels : cfg.width(l - 1);
    enc_.emplace_back("enc" + std::to_string(l), in, cfg.width(l), l < cfg.flat_levels, dropout_at(l), cfg.bn, init);
    if (l < L - 1) pool_.emplace_back(std::array{2, 2, 2});
  }
  dec_.resize(static_cast<std::size_t>(std::max(L - 1, 0)));
  up_.resize(dec_.size());
  for (int l = L - 2; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    up_[li] = nn::UpConv3d("up" + std::to_string(l), cfg.width(l + 1), cfg.width(l), {2, 2, 2}, init);
    const float p = (l >= L - 3 && l > 0) ? cfg.dropout : 0.0f;  // two deepest decoder blocks
    dec_[li] = ConvBlock("dec" + std::to_string(l), 2 * cfg.width(l), cfg.width(l), l < cfg.flat_levels, p, cfg.bn,
                         init);
  }
  nn::ConvSpec head;
  head.in_channels = cfg.width(0);
  head.out_channels = cfg.num_classes;
  head.kernel = {1, 1, 1};
  head.pad = {0, 0, 0};
  head.bias = true;
  head_ = nn::Conv3d("head", head, init);
}

void DualDomainSegNet::check_input(const nn::Shape& s) const {
  if (s.c != cfg_.in_channels)
    throw ShapeError("segnet: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                     std::to_string(s.c));
  const int f = cfg_.downsample_factor();
  const char* axes[] = {"depth", "height", "width"};
  const int dims[] = {s.d, s.h, s.w};
  for (int a = 0; a < 3; ++a)
    if (dims[a] % f != 0)
      throw ShapeError(std::string("segnet: input ") + axes[a] + " " + std::to_string(dims[a]) +
                       " is not divisible by " + std::to_string(f));
}

Tensor DualDomainSegNet::forward(const Tensor& x, DomainTag d, Mode mode, Rng* rng) {
  check_input(x.shape());
  const int L = cfg_.levels;
  std::vector<Tensor> skips;
  Tensor h = x;
  for (int l = 0; l < L; ++l) {
    h = enc_[static_cast<std::size_t>(l)].forward(h, d, mode, rng);
    if (l < L - 1) {
      skips.push_back(h);
      h = pool_[static_cast<std::size_t>(l)].forward(h);
    }
  }
  skip_channels_.assign(static_cast<std::size_t>(std::max(L - 1, 0)), 0);
  for (int l = L - 2; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    Tensor u = up_[li].forward(h);
    skip_channels_[li] = skips[li].shape().c;
    h = dec_[li].forward(nn::concat_channels(skips[li], u), d, mode, rng);
  }
  probs_ = nn::softmax_channels(head_.forward(h));
  return probs_;
}

void DualDomainSegNet::backward(const Tensor& grad_probs) {
  if (!(grad_probs.shape() == probs_.shape())) throw ShapeError("segnet: backward gradient shape mismatch");
  const int L = cfg_.levels;
  Tensor g = head_.backward(nn::softmax_backward(probs_, grad_probs));
  std::vector<Tensor> skip_grads(static_cast<std::size_t>(std::max(L - 1, 0)));
  for (int l = 0; l <= L - 2; ++l) {
    const auto li = static_cast<std::size_t>(l);
    Tensor gcat = dec_[li].backward(g, true);
    Tensor gu;
    nn::split_channels(gcat, skip_channels_[li], skip_grads[li], gu);
    g = up_[li].backward(gu);
  }
  for (int l = L - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    if (l < L - 1) {
      g = pool_[li].backward(g);
      nn::add_inplace(g, skip_grads[li]);
    }
    g = enc_[li].backward(g, l > 0);
  }
}

Tensor DualDomainSegNet::predict(const Tensor& x, DomainTag d, Rng* rng) const {
  check_input(x.shape());
  const int L = cfg_.levels;
  std::vector<Tensor> skips;
  Tensor h = x;
  for (int l = 0; l < L; ++l) {
    h = enc_[static_cast<std::size_t>(l)].infer(h, d, rng);
    if (l < L - 1) {
      skips.push_back(h);
      h = pool_[static_cast<std::size_t>(l)].infer(h);
    }
  }
  for (int l = L - 2; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    h = dec_[li].infer(nn::concat_channels(skips[li], up_[li].infer(h)), d, rng);
  }
  return nn::softmax_channels(head_.infer(h));
}

std::vector<nn::Parameter*> DualDomainSegNet::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& b : enc_) b.collect(out);
  for (int l = cfg_.levels - 2; l >= 0; --l) {
    up_[static_cast<std::size_t>(l)].collect(out);
    dec_[static_cast<std::size_t>(l)].collect(out);
  }
  head_.collect(out);
  return out;
}

std::vector<const nn::Parameter*> DualDomainSegNet::parameters() const {
  std::vector<const nn::Parameter*> out;
  for (const auto& b : enc_) b.collect(out);
  for (int l = cfg_.levels - 2; l >= 0; --l) {
    up_[static_cast<std::size_t>(l)].collect(out);
    dec_[static_cast<std::size_t>(l)].collect(out);
  }
  head_.collect(out);
  return out;
}

std::vector<std::string> DualDomainSegNet::bn_sites() const {
  std::vector<std::string> out;
  for (const auto& b : enc_) b.bn_sites(out);
  for (int l = cfg_.levels - 2; l >= 0; --l) dec_[static_cast<std::size_t>(l)].bn_sites(out);
  return out;
}

void DualDomainSegNet::copy_from(const DualDomainSegNet& other) {
  if (!(cfg_ == other.cfg_)) throw IncompatibilityError("segnet: cannot copy between different architectures");
  auto dst = parameters();
  const auto src = other.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

void DualDomainSegNet::save(const std::filesystem::path& stem) const {
  json params = json::array();
  const auto ps = parameters();
  for (const auto* p : ps) params.push_back({{"name", p->name}, {"shape", p->shape}, {"role", nn::to_string(p->role)}});
  const json manifest = {{"arch", arch_json(cfg_)},
                         {"num_classes", cfg_.num_classes},
                         {"bn_sites", bn_sites()},
                         {"params", params}};
  auto header = stem;
  header += ".json";
  if (header.has_parent_path()) std::filesystem::create_directories(header.parent_path());
  std::ofstream out(header, std::ios::trunc);
  if (!out) throw IoError("cannot write " + header.string());
  out << manifest.dump(2) << '\n';
  auto blob = stem;
  blob += ".bin";
  nn::write_blob(ps, blob);
}

CheckpointManifest CheckpointManifest::read(const std::filesystem::path& stem) {
  auto header = stem;
  header += ".json";
  std::ifstream in(header);
  if (!in) throw IoError("cannot open checkpoint manifest " + header.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(header.string() + ": " + e.what(), e.byte);
  }
  CheckpointManifest m;
  m.arch = arch_from_json(j.at("arch"));
  m.arch.num_classes = j.at("num_classes").get<int>();
  m.bn_sites = j.at("bn_sites").get<std::vector<std::string>>();
  for (const auto& p : j.at("params"))
    m.params.push_back({p.at("name").get<std::string>(), p.at("shape").get<std::vector<int>>(),
                        nn::parse_param_role(p.at("role").get<std::string>())});
  return m;
}

DualDomainSegNet DualDomainSegNet::load(const std::filesystem::path& stem) {
  const auto m = CheckpointManifest::read(stem);
  DualDomainSegNet net(m.arch, 0);
  auto ps = net.parameters();
  if (ps.size() != m.params.size()) throw IncompatibilityError("checkpoint parameter count does not match its arch");
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i]->name != m.params[i].name || ps[i]->shape != m.params[i].shape || ps[i]->role != m.params[i].role)
      throw IncompatibilityError("checkpoint parameter '" + m.params[i].name + "' does not match its arch");
  auto blob = stem;
  blob += ".bin";
  nn::read_blob(ps, blob);
  return net;
}

// ---------------------------------------------------------------------------------------------

Tensor to_tensor(const std::vector<const Volume3D*>& batch) {
  if (batch.empty()) throw ValidationError("empty batch");
  const Dims3 d = batch.front()->dims();
  Tensor t({static_cast<int>(batch.size()), 1, d.depth, d.height, d.width});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    require_same_dims(d, batch[n]->dims(), "batch");
    std::copy(batch[n]->values().begin(), batch[n]->values().end(), t.sample(static_cast<int>(n)));
  }
  return t;
}

Tensor to_tensor(const Volume3D& v) { return to_tensor(std::vector<const Volume3D*>{&v}); }

ProbabilityMap to_probability_map(const Tensor& probs, int sample) {
  const auto& s = probs.shape();
  ProbabilityMap p({s.d, s.h, s.w}, s.c);
  std::copy(probs.sample(sample), probs.sample(sample) + s.sample_size(), p.values().begin());
  return p;
}

ProbabilityMap segnet_forward(const DualDomainSegNet& net, const Volume3D& patch, DomainTag d) {
  return to_probability_map(net.predict(to_tensor(patch), d));
}

std::vector<ProbabilityMap> mc_dropout_predict(const DualDomainSegNet& net, const Volume3D& x, DomainTag d, int K,
                                               std::uint64_t seed) {
  if (K < 2) throw ValidationError("MC dropout needs K >= 2 passes, got " + std::to_string(K));
  std::vector<ProbabilityMap> out;
  out.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    Rng rng(substream_seed(seed, "mc" + std::to_string(k)));
    out.push_back(predict_volume(net, x, d, &rng));
  }
  return out;
}

}  // namespace fpl::dualnorm
