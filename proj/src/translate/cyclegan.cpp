#include "fpl/translate/cyclegan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fpl/core/error.hpp"
#include "fpl/data/preprocess.hpp"
#include "fpl/nn/adam.hpp"

namespace fpl::translate {

using nn::Tensor;

namespace {

double clamp_score(double d) { return std::clamp(d, kScoreClamp, 1.0 - kScoreClamp); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<float> sigmoid(const Tensor& logits) {
  std::vector<float> d(logits.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(sigmoid(logits[i]));
  return d;
}

// d(-mean log D)/dz for D = sigmoid(z), zero where the clamp is active.
Tensor grad_neg_log_d(const Tensor& logits) {
  Tensor g(logits.shape());
  const double n = static_cast<double>(logits.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = sigmoid(logits[i]);
    if (d > kScoreClamp && d < 1.0 - kScoreClamp) g[i] = static_cast<float>(-(1.0 - d) / n);
  }
  return g;
}

// d(-mean log(1 - D))/dz.
Tensor grad_neg_log_one_minus_d(const Tensor& logits) {
  Tensor g(logits.shape());
  const double n = static_cast<double>(logits.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = sigmoid(logits[i]);
    if (d > kScoreClamp && d < 1.0 - kScoreClamp) g[i] = static_cast<float>(d / n);
  }
  return g;
}

double mean_log(const Tensor& logits, bool one_minus) {
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double d = clamp_score(sigmoid(logits[i]));
    s += std::log(one_minus ? 1.0 - d : d);
  }
  return s / static_cast<double>(logits.size());
}

// Least-squares variant on the raw outputs: mean (z - target)^2 and its gradient.
double squared_error(const Tensor& z, float target, Tensor* grad) {
  double s = 0.0;
  const double n = static_cast<double>(z.size());
  if (grad) *grad = Tensor(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double e = z[i] - target;
    s += e * e;
    if (grad) (*grad)[i] = static_cast<float>(2.0 * e / n);
  }
  return s / n;
}

// Generator adversarial term and its gradient with respect to the discriminator logits.
double generator_term(GanMode mode, const Tensor& logits, Tensor& grad) {
  if (mode == GanMode::least_squares) return squared_error(logits, 1.0f, &grad);
  grad = grad_neg_log_d(logits);
  return -mean_log(logits, false);
}

double l1_with_grad(const Tensor& a, const Tensor& b, double weight, Tensor& grad) {
  grad = Tensor(a.shape());
  double s = 0.0;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += std::abs(d);
    grad[i] = static_cast<float>(d > 0 ? weight / n : d < 0 ? -weight / n : 0.0);
  }
  return s / n;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
  return s / static_cast<double>(a.size());
}

// One discriminator update on a real and a fake batch; returns the discriminator loss.
double discriminator_step(DiscriminatorNet& D, nn::Adam& opt, GanMode mode, const Tensor& real, const Tensor& fake) {
  opt.zero_grad();
  double loss = 0.0;
  Tensor g;
  const Tensor zr = D.forward(real);
  if (mode == GanMode::least_squares) {
    loss += squared_error(zr, 1.0f, &g);
  } else {
    loss -= mean_log(zr, false);
    g = grad_neg_log_d(zr);
  }
  D.backward(g);
  const Tensor zf = D.forward(fake);
  if (mode == GanMode::least_squares) {
    loss += squared_error(zf, 0.0f, &g);
  } else {
    loss -= mean_log(zf, true);
    g = grad_neg_log_one_minus_d(zf);
  }
  D.backward(g);
  opt.step();
  return loss;
}

std::string describe(const EpochLosses& l) {
  std::ostringstream os;
  os << "epoch " << l.epoch << " gan_s=" << l.gan_s << " gan_t=" << l.gan_t << " cycle=" << l.cycle
     << " disc_s=" << l.disc_s << " disc_t=" << l.disc_t;
  return os.str();
}

}  // namespace

GanTerms adversarial_terms(std::span<const float> d_real, std::span<const float> d_fake) {
  if (d_real.empty() || d_fake.empty()) throw ValidationError("adversarial loss needs non-empty batches");
  double lr = 0.0, lf = 0.0, lg = 0.0;
  for (float d : d_real) lr += std::log(clamp_score(d));
  for (float d : d_fake) {
    lf += std::log(1.0 - clamp_score(d));
    lg += std::log(clamp_score(d));
  }
  GanTerms t;
  t.objective = lr / static_cast<double>(d_real.size()) + lf / static_cast<double>(d_fake.size());
  t.disc_loss = -t.objective;
  t.gen_loss = -lg / static_cast<double>(d_fake.size());
  return t;
}

GanTerms adversarial_loss(const DiscriminatorNet& disc, const Tensor& real_slices, const Tensor& fake_slices) {
  const auto real = sigmoid(disc.infer(real_slices));
  const auto fake = sigmoid(disc.infer(fake_slices));
  return adversarial_terms(real, fake);
}

double cycle_loss(const SliceTranslator& T_s, const SliceTranslator& T_t, const Tensor& source_batch,
                  const Tensor& target_batch) {
  if (source_batch.size() == 0 || target_batch.size() == 0) throw ValidationError("cycle loss needs non-empty batches");
  return mean_abs_diff(T_s.translate(T_t.translate(source_batch)), source_batch) +
         mean_abs_diff(T_t.translate(T_s.translate(target_batch)), target_batch);
}

// ---------------------------------------------------------------------------------------------

SlicePool::SlicePool(std::vector<Volume3D> volumes) : volumes_(std::move(volumes)) {
  if (volumes_.empty()) throw ValidationError("slice pool needs at least one volume");
  height_ = volumes_.front().dims().height;
  width_ = volumes_.front().dims().width;
  for (std::size_t v = 0; v < volumes_.size(); ++v) {
    const auto& d = volumes_[v].dims();
    if (d.height != height_ || d.width != width_) throw ShapeError("slice pool volumes differ in slice size");
    for (int z = 0; z < d.depth; ++z) index_.emplace_back(v, z);
  }
}

Tensor SlicePool::sample(int n, Rng& rng) const {
  Tensor out({n, 1, 1, height_, width_});
  const std::size_t plane = static_cast<std::size_t>(height_) * width_;
  for (int i = 0; i < n; ++i) {
    const auto [v, z] = index_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(index_.size()) - 1))];
    const auto* src = volumes_[v].values().data() + static_cast<std::size_t>(z) * plane;
    std::copy(src, src + plane, out.sample(i));
  }
  return out;
}

TranslatorSet train_cyclegan(const SlicePool& source, const SlicePool& target, const CycleGanConfig& cfg,
                             const std::function<void(const EpochLosses&)>& on_epoch) {
  if (cfg.epochs < 3) throw ValidationError("cycle GAN training needs at least 3 epochs, got " + std::to_string(cfg.epochs));
  if (cfg.steps_per_epoch < 1 || cfg.batch < 1) throw ValidationError("cycle GAN: steps and batch must be positive");
  if (source.size() == 0 || target.size() == 0) throw ValidationError("cycle GAN: empty slice pool");

  TranslatorSet set;
  set.T_s = TranslatorNet("T_s", cfg.translator, substream_seed(cfg.seed, "init/T_s"));
  set.T_t = TranslatorNet("T_t", cfg.translator, substream_seed(cfg.seed, "init/T_t"));
  set.D_s = DiscriminatorNet("D_s", cfg.discriminator, substream_seed(cfg.seed, "init/D_s"));
  set.D_t = DiscriminatorNet("D_t", cfg.discriminator, substream_seed(cfg.seed, "init/D_t"));
  set.final_epoch = cfg.epochs;
  set.auxiliary_epoch = cfg.auxiliary_epoch();

  const nn::AdamConfig adam{cfg.lr, cfg.beta1, 0.999, 1e-8};
  auto gen_params = set.T_s.parameters();
  for (auto* p : set.T_t.parameters()) gen_params.push_back(p);
  nn::Adam opt_g(gen_params, adam), opt_ds(set.D_s.parameters(), adam), opt_dt(set.D_t.parameters(), adam);
  Rng rng(substream_seed(cfg.seed, "batches"));
  const double lambda = cfg.lambda_cyc;

  EpochLosses last_finite;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLosses acc;
    acc.epoch = epoch;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      const Tensor xs = source.sample(cfg.batch, rng);
      const Tensor xt = target.sample(cfg.batch, rng);
      opt_g.zero_grad();
      Tensor g_rec, g_adv;

      // source -> target -> source
      const Tensor fake_t = set.T_t.forward(xs);
      const double cyc_s = l1_with_grad(set.T_s.forward(fake_t), xs, lambda, g_rec);
      Tensor g_fake_t = set.T_s.backward(g_rec);
      const double gan_t = generator_term(cfg.gan, set.D_t.forward(fake_t), g_adv);
      nn::add_inplace(g_fake_t, set.D_t.backward(g_adv));
      set.T_t.backward(g_fake_t);

      // target -> source -> target
      const Tensor fake_s = set.T_s.forward(xt);
      const double cyc_t = l1_with_grad(set.T_t.forward(fake_s), xt, lambda, g_rec);
      Tensor g_fake_s = set.T_t.backward(g_rec);
      const double gan_s = generator_term(cfg.gan, set.D_s.forward(fake_s), g_adv);
      nn::add_inplace(g_fake_s, set.D_s.backward(g_adv));
      set.T_s.backward(g_fake_s);
      opt_g.step();

      const double disc_t = discriminator_step(set.D_t, opt_dt, cfg.gan, xt, fake_t);
      const double disc_s = discriminator_step(set.D_s, opt_ds, cfg.gan, xs, fake_s);

      for (double v : {gan_s, gan_t, cyc_s, cyc_t, disc_s, disc_t})
        if (!std::isfinite(v))
          throw NumericError("cycle GAN loss became non-finite at epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step) + "; last finite " + describe(last_finite));
      acc.gan_s += gan_s;
      acc.gan_t += gan_t;
      acc.cycle += cyc_s + cyc_t;
      acc.disc_s += disc_s;
      acc.disc_t += disc_t;
    }
    const double n = cfg.steps_per_epoch;
    acc.gan_s /= n, acc.gan_t /= n, acc.cycle /= n, acc.disc_s /= n, acc.disc_t /= n;
    set.history.push_back(acc);
    last_finite = acc;
    if (epoch == set.auxiliary_epoch) set.T_at = set.T_t;
    if (on_epoch) on_epoch(acc);
  }
  return set;
}

// ---------------------------------------------------------------------------------------------

namespace {

nlohmann::json arch_json(const TranslatorArch& a) { return {{"ngf", a.ngf}, {"residual_blocks", a.residual_blocks}}; }
nlohmann::json arch_json(const DiscriminatorArch& a) { return {{"ndf", a.ndf}}; }

}  // namespace

void TranslatorSet::save(const std::filesystem::path& dir) const {
  save_component(dir, "T_s", final_epoch, T_s.parameters(), arch_json(T_s.arch()));
  save_component(dir, "T_t", final_epoch, T_t.parameters(), arch_json(T_t.arch()));
  save_component(dir, "T_at", auxiliary_epoch, T_at.parameters(), arch_json(T_at.arch()));
  save_component(dir, "D_s", final_epoch, D_s.parameters(), arch_json(D_s.arch()));
  save_component(dir, "D_t", final_epoch, D_t.parameters(), arch_json(D_t.arch()));
}

TranslatorSet TranslatorSet::load(const std::filesystem::path& dir) {
  auto translator = [&](const std::string& name, int& epoch) {
    const auto a = read_component_manifest(dir, name).at("arch");
    TranslatorNet net(name, {a.at("ngf").get<int>(), a.at("residual_blocks").get<int>()}, 0);
    epoch = load_component(dir, name, net.parameters());
    return net;
  };
  auto discriminator = [&](const std::string& name) {
    const auto a = read_component_manifest(dir, name).at("arch");
    DiscriminatorNet net(name, {a.at("ndf").get<int>()}, 0);
    load_component(dir, name, net.parameters());
    return net;
  };
  TranslatorSet set;
  int unused = 0;
  set.T_s = translator("T_s", set.final_epoch);
  set.T_t = translator("T_t", unused);
  set.T_at = translator("T_at", set.auxiliary_epoch);
  set.D_s = discriminator("D_s");
  set.D_t = discriminator("D_t");
  if (!(set.T_at.arch() == set.T_t.arch())) throw IncompatibilityError("T_at and T_t architectures differ");
  return set;
}

// ---------------------------------------------------------------------------------------------

Volume3D translate_volume(const SliceTranslator& t, const Volume3D& v) {
  const Dims3 d = v.dims();
  const Dims3 padded{d.depth, (d.height + 3) / 4 * 4, (d.width + 3) / 4 * 4};
  const Volume3D src = padded == d ? v : data::reflect_pad(v, padded);
  const std::size_t plane = static_cast<std::size_t>(padded.height) * padded.width;
  Volume3D out(d, v.spacing());
  constexpr int kChunk = 8;
  for (int z0 = 0; z0 < d.depth; z0 += kChunk) {
    const int n = std::min(kChunk, d.depth - z0);
    Tensor slices({n, 1, 1, padded.height, padded.width});
    std::copy(src.values().begin() + static_cast<std::ptrdiff_t>(z0 * plane),
              src.values().begin() + static_cast<std::ptrdiff_t>((z0 + n) * plane), slices.data());
    const Tensor res = t.translate(slices);
    if (!(res.shape() == slices.shape())) throw ShapeError("translator changed the slice shape");
    for (int k = 0; k < n; ++k)
      for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x)
          out.at(z0 + k, y, x) = res.sample(k)[static_cast<std::size_t>(y) * padded.width + x];
  }
  return out;
}

CddaResult cdda_augment(const std::vector<LabeledCase>& source, const SliceTranslator& T_s,
                        const SliceTranslator& T_t, const SliceTranslator& T_at) {
  CddaResult out;
  for (const auto& c : source) {
    if (!c.label) throw ValidationError("cross-domain augmentation needs labelled cases; '" + c.case_id + "' has none");
    require_same_dims(c.image.dims(), c.label->dims(), c.case_id);
    Volume3D s2t = translate_volume(T_t, c.image);
    Volume3D s2at = translate_volume(T_at, c.image);
    Volume3D sp = translate_volume(T_s, s2t);
    Volume3D spp = translate_volume(T_s, s2at);
    out.source_like.push_back({c.case_id, c.image, c.label});
    out.source_like.push_back({c.case_id + "_sp", std::move(sp), c.label});
    out.source_like.push_back({c.case_id + "_spp", std::move(spp), c.label});
    out.target_like.push_back({c.case_id + "_s2t", std::move(s2t), c.label});
    out.target_like.push_back({c.case_id + "_s2at", std::move(s2at), c.label});
  }
  return out;
}

}  // namespace fpl::translate
