#include "fpl/translate/networks.hpp"

#include <fstream>

#include "fpl/core/error.hpp"

namespace fpl::translate {

using nn::Tensor;

Tensor ShiftTranslator::translate(const Tensor& slices) const {
  Tensor out = slices;
  for (auto& v : out.values()) v += shift_;
  return out;
}

namespace {

nn::ConvSpec planar(int in, int out, int k, int stride = 1, bool bias = false) {
  nn::ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = {1, k, k};
  s.stride = {1, stride, stride};
  s.pad = {0, k / 2, k / 2};
  s.bias = bias;
  return s;
}

void check_slices(const nn::Shape& s, int multiple) {
  if (s.c != 1 || s.d != 1) throw ShapeError("translator expects N x 1 x 1 x H x W slices, got " + to_string(s));
  if (s.h % multiple || s.w % multiple)
    throw ShapeError("slice size " + std::to_string(s.h) + "x" + std::to_string(s.w) + " is not a multiple of " +
                     std::to_string(multiple));
}

}  // namespace

TranslatorNet::TranslatorNet(const std::string& name, TranslatorArch arch, std::uint64_t init_seed) : arch_(arch) {
  if (arch.ngf < 1 || arch.residual_blocks < 0) throw ValidationError("translator: invalid architecture");
  Rng init(init_seed);
  const int f = arch.ngf;
  auto stage = [&](const std::string& n, nn::ConvSpec spec) {
    return Stage{nn::Conv3d(name + "." + n, spec, init), nn::InstanceNorm(name + "." + n + ".in", spec.out_channels),
                 nn::LeakyRelu(0.0f)};
  };
  stem_ = stage("stem", planar(1, f, 7));
  down1_ = stage("down1", planar(f, 2 * f, 3, 2));
  down2_ = stage("down2", planar(2 * f, 4 * f, 3, 2));
  for (int r = 0; r < arch.residual_blocks; ++r) {
    const std::string n = "res" + std::to_string(r);
    res_.push_back({stage(n + ".a", planar(4 * f, 4 * f, 3)), nn::Conv3d(name + "." + n + ".b", planar(4 * f, 4 * f, 3), init),
                    nn::InstanceNorm(name + "." + n + ".b.in", 4 * f)});
  }
  up1_ = {nn::UpConv3d(name + ".up1", 4 * f, 2 * f, {1, 2, 2}, init), nn::InstanceNorm(name + ".up1.in", 2 * f),
          nn::LeakyRelu(0.0f)};
  up2_ = {nn::UpConv3d(name + ".up2", 2 * f, f, {1, 2, 2}, init), nn::InstanceNorm(name + ".up2.in", f),
          nn::LeakyRelu(0.0f)};
  out_ = nn::Conv3d(name + ".out", planar(f, 1, 7, 1, true), init);
}

Tensor TranslatorNet::forward(const Tensor& x) {
  check_slices(x.shape(), 4);
  auto run = [](Stage& s, const Tensor& t) { return s.act.forward(s.norm.forward(s.conv.forward(t))); };
  Tensor h = run(down2_, run(down1_, run(stem_, x)));
  for (auto& r : res_) {
    Tensor b = r.norm_b.forward(r.conv_b.forward(run(r.a, h)));
    nn::add_inplace(b, h);
    h = std::move(b);
  }
  h = up1_.act.forward(up1_.norm.forward(up1_.up.forward(h)));
  h = up2_.act.forward(up2_.norm.forward(up2_.up.forward(h)));
  return out_.forward(h);
}

Tensor TranslatorNet::infer(const Tensor& x) const {
  check_slices(x.shape(), 4);
  auto run = [](const Stage& s, const Tensor& t) { return s.act.infer(s.norm.infer(s.conv.infer(t))); };
  Tensor h = run(down2_, run(down1_, run(stem_, x)));
  for (const auto& r : res_) {
    Tensor b = r.norm_b.infer(r.conv_b.infer(run(r.a, h)));
    nn::add_inplace(b, h);
    h = std::move(b);
  }
  h = up1_.act.infer(up1_.norm.infer(up1_.up.infer(h)));
  h = up2_.act.infer(up2_.norm.infer(up2_.up.infer(h)));
  return out_.infer(h);
}

Tensor TranslatorNet::backward(const Tensor& grad_out) {
  auto back = [](Stage& s, const Tensor& g, bool need = true) {
    return s.conv.backward(s.norm.backward(s.act.backward(g)), need);
  };
  Tensor g = out_.backward(grad_out);
  g = up2_.up.backward(up2_.norm.backward(up2_.act.backward(g)));
  g = up1_.up.backward(up1_.norm.backward(up1_.act.backward(g)));
  for (auto it = res_.rbegin(); it != res_.rend(); ++it) {
    Tensor inner = back(it->a, it->conv_b.backward(it->norm_b.backward(g)));
    nn::add_inplace(inner, g);
    g = std::move(inner);
  }
  return back(stem_, back(down1_, back(down2_, g)));
}

std::vector<nn::Parameter*> TranslatorNet::parameters() {
  std::vector<nn::Parameter*> out;
  for (Stage* s : {&stem_, &down1_, &down2_}) s->conv.collect(out), s->norm.collect(out);
  for (auto& r : res_) {
    r.a.conv.collect(out);
    r.a.norm.collect(out);
    r.conv_b.collect(out);
    r.norm_b.collect(out);
  }
  for (UpStage* u : {&up1_, &up2_}) u->up.collect(out), u->norm.collect(out);
  out_.collect(out);
  return out;
}

std::vector<const nn::Parameter*> TranslatorNet::parameters() const {
  auto ps = const_cast<TranslatorNet*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

// ---------------------------------------------------------------------------------------------

DiscriminatorNet::DiscriminatorNet(const std::string& name, DiscriminatorArch arch, std::uint64_t init_seed)
    : arch_(arch) {
  if (arch.ndf < 1) throw ValidationError("discriminator: invalid architecture");
  Rng init(init_seed);
  const int f = arch.ndf;
  c1_ = nn::Conv3d(name + ".c1", planar(1, f, 3, 2, true), init);
  c2_ = nn::Conv3d(name + ".c2", planar(f, 2 * f, 3, 2), init);
  n2_ = nn::InstanceNorm(name + ".c2.in", 2 * f);
  c3_ = nn::Conv3d(name + ".c3", planar(2 * f, 4 * f, 3), init);
  n3_ = nn::InstanceNorm(name + ".c3.in", 4 * f);
  c4_ = nn::Conv3d(name + ".c4", planar(4 * f, 1, 3, 1, true), init);
}

Tensor DiscriminatorNet::forward(const Tensor& x) {
  check_slices(x.shape(), 4);
  Tensor h = a1_.forward(c1_.forward(x));
  h = a2_.forward(n2_.forward(c2_.forward(h)));
  h = a3_.forward(n3_.forward(c3_.forward(h)));
  return c4_.forward(h);
}

Tensor DiscriminatorNet::infer(const Tensor& x) const {
  check_slices(x.shape(), 4);
  Tensor h = a1_.infer(c1_.infer(x));
  h = a2_.infer(n2_.infer(c2_.infer(h)));
  h = a3_.infer(n3_.infer(c3_.infer(h)));
  return c4_.infer(h);
}

Tensor DiscriminatorNet::backward(const Tensor& grad_logits) {
  Tensor g = n3_.backward(a3_.backward(c4_.backward(grad_logits)));
  g = n2_.backward(a2_.backward(c3_.backward(g)));
  return c1_.backward(a1_.backward(c2_.backward(g)));
}

std::vector<nn::Parameter*> DiscriminatorNet::parameters() {
  std::vector<nn::Parameter*> out;
  c1_.collect(out);
  c2_.collect(out);
  n2_.collect(out);
  c3_.collect(out);
  n3_.collect(out);
  c4_.collect(out);
  return out;
}

std::vector<const nn::Parameter*> DiscriminatorNet::parameters() const {
  auto ps = const_cast<DiscriminatorNet*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

// ---------------------------------------------------------------------------------------------

void save_component(const std::filesystem::path& dir, const std::string& component, int epoch,
                    const std::vector<const nn::Parameter*>& params, const nlohmann::json& arch) {
  std::filesystem::create_directories(dir);
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto* p : params) shapes.push_back(p->shape);
  const nlohmann::json manifest = {{"component", component}, {"epoch", epoch}, {"param_shapes", shapes}, {"arch", arch}};
  std::ofstream out(dir / (component + ".json"), std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + (dir / (component + ".json")).string());
  out << manifest.dump(2) << '\n';
  nn::write_blob(params, dir / (component + ".bin"));
}

nlohmann::json read_component_manifest(const std::filesystem::path& dir, const std::string& component) {
  const auto path = dir / (component + ".json");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

int load_component(const std::filesystem::path& dir, const std::string& component,
                   const std::vector<nn::Parameter*>& params) {
  const auto manifest = read_component_manifest(dir, component);
  if (manifest.at("component").get<std::string>() != component)
    throw IncompatibilityError("checkpoint " + component + " holds component " +
                               manifest.at("component").get<std::string>());
  const auto shapes = manifest.at("param_shapes").get<std::vector<std::vector<int>>>();
  if (shapes.size() != params.size()) throw IncompatibilityError(component + ": parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (shapes[i] != params[i]->shape) throw IncompatibilityError(component + ": shape mismatch at " + params[i]->name);
  nn::read_blob(params, dir / (component + ".bin"));
  return manifest.at("epoch").get<int>();
}

}  // namespace fpl::translate
