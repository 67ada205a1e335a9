#include <cmath>

#include "doctest.h"
#include "fpl/core/error.hpp"
#include "fpl/core/losses.hpp"
#include "fpl/dualnorm/dual_bn.hpp"
#include "fpl/dualnorm/segnet.hpp"
#include "fpl/nn/adam.hpp"
#include "gradcheck.hpp"
#include "temp_dir.hpp"

using namespace fpl;
using namespace fpl::dualnorm;
using nn::Tensor;

namespace {

std::vector<std::vector<float>> snapshot(const DualBatchNorm& bn, DomainTag d) {
  const auto& b = bn.branch(d);
  return {b.gamma.value, b.beta.value, b.running_mean.value, b.running_var.value};
}

std::vector<std::vector<float>> snapshot(const DualDomainSegNet& net, bool (*keep)(nn::ParamRole)) {
  std::vector<std::vector<float>> out;
  for (const auto* p : net.parameters())
    if (keep(p->role)) out.push_back(p->value);
  return out;
}

bool is_target_branch(nn::ParamRole r) {
  using R = nn::ParamRole;
  return r == R::gamma_target || r == R::beta_target || r == R::running_mean_target || r == R::running_var_target;
}
bool is_source_branch(nn::ParamRole r) {
  using R = nn::ParamRole;
  return r == R::gamma_source || r == R::beta_source || r == R::running_mean_source || r == R::running_var_source;
}

SegNetConfig small_config(float dropout = 0.3f) {
  SegNetConfig c;
  c.base_width = 4;
  c.levels = 3;
  c.flat_levels = 1;
  c.dropout = dropout;
  return c;
}

// One optimisation step of soft Dice on a random labelled batch.
void train_step(DualDomainSegNet& net, nn::Adam& opt, Rng& rng, DomainTag d, const Tensor& x) {
  opt.zero_grad();
  const Tensor p = net.forward(x, d, Mode::train, &rng);
  const auto& s = p.shape();
  Tensor grad(s);
  for (int n = 0; n < s.n; ++n) {
    std::vector<float> target(s.sample_size(), 0.0f);
    for (std::size_t i = 0; i < s.spatial(); ++i) target[(x.sample(n)[i] > 0 ? 1 : 0) * s.spatial() + i] = 1.0f;
    std::vector<float> g(s.sample_size());
    soft_dice<float>({p.sample(n), s.sample_size()}, target, s.c, g);
    for (std::size_t i = 0; i < g.size(); ++i) grad.sample(n)[i] = g[i] / static_cast<float>(s.n);
  }
  net.backward(grad);
  opt.step();
}

}  // namespace

TEST_CASE("dual-BN examples") {
  DualBatchNorm bn("bn", 2);
  Tensor constant({2, 2, 2, 2, 2}, 3.0f);
  const Tensor zeros = bn.forward(constant, DomainTag::source, Mode::train);
  for (float v : zeros.values()) CHECK(v == 0.0f);
  bn.branch(DomainTag::source).beta.value = {0.5f, -1.0f};
  const Tensor out = bn.forward(constant, DomainTag::source, Mode::train);
  for (int n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < 8; ++i) CHECK(out.channel(n, 0)[i] == 0.5f);
    for (std::size_t i = 0; i < 8; ++i) CHECK(out.channel(n, 1)[i] == -1.0f);
  }

  DualBatchNorm fresh("bn", 2);
  Rng rng(1);
  const Tensor x = random_tensor(rng, {2, 2, 2, 3, 3});
  for (auto d : {DomainTag::source, DomainTag::target}) {
    const Tensor y = fresh.infer(x, d);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-5));
  }

  DualBatchNorm ema("bn", 1);
  ema.forward(Tensor({2, 1, 2, 2, 2}, 2.0f), DomainTag::source, Mode::train);
  CHECK(ema.branch(DomainTag::source).running_mean.value[0] == doctest::Approx(0.2));
  CHECK(ema.branch(DomainTag::target).running_mean.value[0] == 0.0f);

  CHECK_THROWS_AS(ema.forward(Tensor({1, 1, 2, 2, 2}), DomainTag::source, Mode::train), ValidationError);
  CHECK_NOTHROW(ema.forward(Tensor({1, 1, 2, 2, 2}), DomainTag::source, Mode::eval));
}

TEST_CASE("dual-BN running mean follows the closed-form EMA") {
  for (float mu : {2.0f, -0.7f, 13.0f}) {
    DualBatchNorm bn("bn", 1);
    const Tensor batch({2, 1, 2, 2, 2}, mu);
    double worst = 0.0;
    for (int k = 1; k <= 100; ++k) {
      bn.forward(batch, DomainTag::target, Mode::train);
      const double expect = mu * (1.0 - std::pow(0.9, k));
      worst = std::max(worst, std::abs(bn.branch(DomainTag::target).running_mean.value[0] - expect));
    }
    CHECK(worst < 1e-6 * std::max(1.0, std::abs(static_cast<double>(mu)) / 2.0));
  }
}

TEST_CASE("dual-BN gradients match finite differences") {
  Rng rng(2);
  for (auto mode : {Mode::train, Mode::eval}) {
    DualBatchNorm bn("bn", 2);
    bn.branch(DomainTag::target).gamma.value = {1.5f, 0.7f};
    bn.branch(DomainTag::target).running_var.value = {2.0f, 0.5f};
    // Train-mode forwards move the running statistics; eval-mode checks need them fixed.
    check_layer_grads(rng, {3, 2, 1, 3, 3},
                      [&](const Tensor& x) { return bn.forward(x, DomainTag::target, mode); },
                      [&](const Tensor& g) { return bn.backward(g); },
                      [&](std::vector<nn::Parameter*>& p) {
                        auto& b = bn.branch(DomainTag::target);
                        p = {&b.gamma, &b.beta};
                      });
    CHECK(snapshot(bn, DomainTag::source) == snapshot(DualBatchNorm("bn", 2), DomainTag::source));
  }
}

TEST_CASE("segnet output is a distribution and routing is observable") {
  DualDomainSegNet net(small_config(), 3);
  Rng rng(4);
  const Tensor x = random_tensor(rng, {2, 1, 8, 8, 8});
  for (int i = 0; i < 3; ++i) net.forward(x, DomainTag::source, Mode::train, &rng);
  const Tensor ps = net.predict(x, DomainTag::source);
  const Tensor pt = net.predict(x, DomainTag::target);
  for (int n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 512; ++i)
      CHECK(std::abs(ps.channel(n, 0)[i] + ps.channel(n, 1)[i] - 1.0) < 1e-5);
  CHECK_FALSE(ps == pt);
  CHECK(net.predict(x, DomainTag::source) == ps);
}

TEST_CASE("segnet rejects indivisible input and names the axis") {
  DualDomainSegNet net(small_config(), 3);
  try {
    net.predict(Tensor({1, 1, 8, 6, 8}), DomainTag::source);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("height") != std::string::npos);
  }
}

TEST_CASE("segnet gradient matches finite differences") {
  SegNetConfig cfg = small_config(0.0f);
  cfg.levels = 2;
  cfg.base_width = 2;
  DualDomainSegNet net(cfg, 5);
  Rng rng(6);
  const Tensor x = random_tensor(rng, {2, 1, 2, 4, 4});
  const Tensor r = random_tensor(rng, {2, 2, 2, 4, 4});
  for (auto* p : net.parameters()) p->zero_grad();
  net.forward(x, DomainTag::source, Mode::train);
  net.backward(r);
  // Perturbing a parameter also moves the running statistics; they do not enter train-mode outputs.
  int checked = 0, bad = 0;
  for (auto* p : net.parameters()) {
    if (nn::is_buffer(p->role)) continue;
    for (std::size_t i = 0; i < p->size(); i += 3) {
      const float keep = p->value[i];
      const float h = 5e-4f;  // below the spacing of ReLU/max-pool kinks
      p->value[i] = keep + h;
      const double up = project(net.forward(x, DomainTag::source, Mode::train), r);
      p->value[i] = keep - h;
      const double down = project(net.forward(x, DomainTag::source, Mode::train), r);
      p->value[i] = keep;
      ++checked;
      if (!close(p->grad[i], (up - down) / (2 * h), 5e-2)) ++bad;
    }
  }
  CHECK(checked > 20);
  CHECK(bad <= checked / 20);
}

TEST_CASE("statistics isolation and shared-weight coupling") {
  DualDomainSegNet net(small_config(), 7);
  const auto target0 = snapshot(net, is_target_branch);
  const auto source0 = snapshot(net, is_source_branch);
  nn::Adam opt(net.parameters(), {1e-2});
  Rng rng(8);
  const Tensor xs = random_tensor(rng, {2, 1, 8, 8, 8});
  const Tensor before_t = net.predict(xs, DomainTag::target);
  for (int i = 0; i < 3; ++i) train_step(net, opt, rng, DomainTag::source, xs);
  CHECK(snapshot(net, is_target_branch) == target0);
  CHECK_FALSE(snapshot(net, is_source_branch) == source0);
  CHECK_FALSE(net.predict(xs, DomainTag::target) == before_t);

  DualDomainSegNet other(small_config(), 7);
  nn::Adam opt2(other.parameters(), {1e-2});
  for (int i = 0; i < 3; ++i) train_step(other, opt2, rng, DomainTag::target, xs);
  CHECK(snapshot(other, is_source_branch) == source0);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir;
  DualDomainSegNet net(small_config(), 9);
  Rng rng(10);
  const Tensor x = random_tensor(rng, {2, 1, 8, 8, 8});
  net.forward(x, DomainTag::target, Mode::train, &rng);
  net.save(dir / "g");
  const auto back = DualDomainSegNet::load(dir / "g");
  CHECK(back.config() == net.config());
  CHECK(back.predict(x, DomainTag::target) == net.predict(x, DomainTag::target));
  const auto m = CheckpointManifest::read(dir / "g");
  CHECK(m.bn_sites == net.bn_sites());
  CHECK(m.bn_sites.size() == 10);
}

TEST_CASE("MC dropout") {
  DualDomainSegNet net(small_config(), 11);
  Rng rng(12);
  Volume3D v({8, 8, 8});
  for (auto& x : v.values()) x = static_cast<float>(rng.normal());
  CHECK_THROWS_AS(mc_dropout_predict(net, v, DomainTag::target, 1, 0), ValidationError);
  const auto a = mc_dropout_predict(net, v, DomainTag::target, 5, 42);
  const auto b = mc_dropout_predict(net, v, DomainTag::target, 5, 42);
  CHECK(a.size() == 5);
  CHECK(a == b);
  CHECK_FALSE(a[0] == a[1]);

  DualDomainSegNet plain(small_config(0.0f), 11);
  const auto c = mc_dropout_predict(plain, v, DomainTag::target, 3, 42);
  CHECK(c[0] == c[1]);
  CHECK(c[1] == c[2]);
  CHECK(c[0] == segnet_forward(plain, v, DomainTag::target));
}
