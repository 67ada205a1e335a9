#include <doctest.h>

#include <fstream>
#include <iterator>

#include "fpl/core/error.hpp"
#include "fpl/core/losses.hpp"
#include "fpl/jointtrain/segmentor.hpp"
#include "fpl/nn/adam.hpp"
#include "gradcheck.hpp"
#include "temp_dir.hpp"
#include "toy_data.hpp"

using namespace fpl;
using namespace fpl::jointtrain;
using dualnorm::DualDomainSegNet;
using nn::ParamRole;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

bool is_source_side(ParamRole r) {
  return r == ParamRole::shared || r == ParamRole::gamma_source || r == ParamRole::beta_source ||
         r == ParamRole::running_mean_source || r == ParamRole::running_var_source;
}

std::vector<std::vector<float>> values(DualDomainSegNet& n, bool (*keep)(ParamRole)) {
  std::vector<std::vector<float>> out;
  for (auto* p : n.parameters())
    if (keep(p->role)) out.push_back(p->value);
  return out;
}

/// Pseudo-label records built straight from labels with a constant weight.
std::vector<pseudolabel::PseudoLabelRecord> records_for(const std::vector<translate::LabeledCase>& cases, float a) {
  std::vector<pseudolabel::PseudoLabelRecord> out;
  for (const auto& c : cases) {
    pseudolabel::PseudoLabelRecord r;
    r.case_id = c.case_id;
    r.pseudo_label = *c.label;
    r.consensus = WeightMap(c.image.dims(), {}, 1.0f);
    r.weight = WeightMap(c.image.dims(), {}, a);
    r.w = a;
    out.push_back(std::move(r));
  }
  return out;
}

struct Toy {
  std::vector<translate::LabeledCase> source, target;
  Toy(std::uint64_t seed, int n, fpl::Dims3 dims) {
    Rng rng(seed);
    for (int i = 0; i < n; ++i) source.push_back(toy::sphere_case("s" + std::to_string(i), rng, dims));
    for (int i = 0; i < n; ++i) target.push_back(toy::sphere_case("t" + std::to_string(i), rng, dims, -1.0f));
  }
};

JointTrainConfig quick(int epochs, fpl::Dims3 patch = {8, 8, 8}) {
  JointTrainConfig c;
  c.train.epochs = epochs;
  c.train.steps_per_epoch = 3;
  c.train.patch = patch;
  c.train.seed = 21;
  return c;
}

}  // namespace

TEST_CASE("segmentor initialisation copies the generator") {
  TempDir dir;
  DualDomainSegNet G(toy::small_net(), 3);
  Toy toy(1, 2, {8, 8, 8});
  JointTrainConfig cfg = quick(1);
  train_source_only(G, toy.source, cfg);  // move running stats away from init
  G.save(dir / "G");
  const std::string bytes = slurp(dir / "G.bin");

  DualDomainSegNet S = init_segmentor_from_generator(dir / "G", toy::small_net());
  const DualDomainSegNet S2 = init_segmentor_from_generator(G, toy::small_net());
  Rng rng(2);
  const auto x = random_tensor(rng, {2, 1, 8, 8, 8});
  for (auto d : {DomainTag::source, DomainTag::target}) {
    CHECK(S.predict(x, d) == G.predict(x, d));
    CHECK(S2.predict(x, d) == G.predict(x, d));
  }

  train_final_segmentor(S, toy.source, toy.target, records_for(toy.target, 1.0f), cfg);
  CHECK(slurp(dir / "G.bin") == bytes);
  CHECK_FALSE(S.predict(x, DomainTag::target) == G.predict(x, DomainTag::target));

  auto other = toy::small_net();
  other.num_classes = 3;
  other.base_width = 8;
  try {
    init_segmentor_from_generator(dir / "G", other);
    FAIL("expected IncompatibilityError");
  } catch (const IncompatibilityError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("num_classes") != std::string::npos);
    CHECK(msg.find("base_width") != std::string::npos);
  }
  CHECK_THROWS_AS(init_segmentor_from_generator(G, other), IncompatibilityError);
}

TEST_CASE("joint loss is the sum of its two terms") {
  Toy toy(3, 3, {8, 8, 8});
  DualDomainSegNet S(toy::small_net(), 4);
  auto recs = records_for(toy.target, 0.7f);
  const auto logs = train_final_segmentor(S, toy.source, toy.target, recs, quick(3));
  REQUIRE(logs.size() == 3u);
  for (const auto& l : logs) {
    REQUIRE(l.stream_loss.size() == 2u);
    CHECK(std::abs(l.total - (l.stream_loss[0] + l.stream_loss[1])) <= 1e-7);
  }
}

TEST_CASE("zero weight maps reduce joint training to source-only training") {
  Toy toy(5, 3, {8, 8, 8});
  DualDomainSegNet joint(toy::small_net(), 6), plain(toy::small_net(), 6);
  const auto cfg = quick(3);
  const auto logs = train_final_segmentor(joint, toy.source, toy.target, records_for(toy.target, 0.0f), cfg);
  for (const auto& l : logs) CHECK(l.stream_loss[1] == 1.0);
  train_source_only(plain, toy.source, cfg);
  CHECK(values(joint, is_source_side) == values(plain, is_source_side));
}

TEST_CASE("voxels with zero weight pass no gradient") {
  Rng rng(7);
  const int C = 2;
  const std::size_t n = 64;  // 4^3
  std::vector<double> p(C * n), y(C * n, 0.0), a(n), g(C * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = rng.uniform(0.05, 0.95);
    p[i] = 1 - f, p[n + i] = f;
    y[(rng.bernoulli(0.4) ? n : 0) + i] = 1.0;
    a[i] = rng.bernoulli(0.5) ? 0.0 : rng.uniform(0.2, 1.0);
  }
  weighted_dice<double>(p, y, a, C, g);
  const double h = 1e-5;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < C; ++c) {
      auto q = p;
      q[c * n + i] += h;
      const double up = weighted_dice<double>(q, y, a, C);
      q[c * n + i] -= 2 * h;
      const double down = weighted_dice<double>(q, y, a, C);
      const double fd = (up - down) / (2 * h);
      if (a[i] == 0.0) {
        CHECK(g[c * n + i] == 0.0);
        CHECK(up == down);
      } else {
        CHECK(fd == doctest::Approx(g[c * n + i]).epsilon(1e-4));
      }
    }
}

TEST_CASE("missing pseudo-label record") {
  Toy toy(8, 2, {8, 8, 8});
  DualDomainSegNet S(toy::small_net(), 1);
  auto recs = records_for(toy.target, 1.0f);
  recs.pop_back();
  try {
    train_final_segmentor(S, toy.source, toy.target, recs, quick(1));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("t1") != std::string::npos);
  }
}

TEST_CASE("target inference ignores the source branch") {
  Toy toy(9, 3, {8, 8, 8});
  DualDomainSegNet S(toy::small_net(), 2);
  train_final_segmentor(S, toy.source, toy.target, records_for(toy.target, 1.0f), quick(2));
  const dualnorm::Tiling tiling{{8, 8, 8}};
  Rng rng(10);
  Volume3D x({12, 16, 16});
  for (auto& v : x.values()) v = static_cast<float>(rng.normal());
  const auto before = dualnorm::predict_tiled(S, x, DomainTag::target, tiling);
  for (auto* p : S.parameters())
    if (p->role != ParamRole::shared && is_source_side(p->role)) std::fill(p->value.begin(), p->value.end(), 0.0f);
  CHECK(dualnorm::predict_tiled(S, x, DomainTag::target, tiling) == before);
  CHECK(infer(S, x, tiling) == infer(S, x, tiling));
  CHECK(infer(S, x, tiling).dims() == x.dims());
}

TEST_CASE("tiled inference agrees with whole-volume inference on a trained net") {
  Toy toy(11, 6, {16, 16, 16});
  DualDomainSegNet S(toy::small_net(0.1f), 3);
  auto cfg = quick(40);
  cfg.train.lr = 3e-3;
  train_source_only(S, toy.source, cfg);
  const dualnorm::Tiling tiling{{8, 8, 8}};
  Rng rng(12);
  std::size_t agree = 0, total = 0;
  for (int i = 0; i < 3; ++i) {
    const auto c = toy::sphere_case("e" + std::to_string(i), rng, {16, 16, 16});
    const auto tiled = infer(S, c.image, tiling, DomainTag::source);
    const auto whole = dualnorm::argmax_labels(dualnorm::predict_volume(S, c.image, DomainTag::source));
    for (std::size_t v = 0; v < tiled.size(); ++v) agree += tiled[v] == whole[v];
    total += tiled.size();
  }
  const double frac = static_cast<double>(agree) / static_cast<double>(total);
  MESSAGE("tiled/whole agreement " << frac);
  CHECK(frac >= 0.99);
}

TEST_CASE("unit weight maps give the unweighted pseudo-label loss") {
  Toy toy(13, 3, {8, 8, 8});
  DualDomainSegNet a(toy::small_net(), 5), b(toy::small_net(), 5);
  const auto cfg = quick(2);
  const auto recs = records_for(toy.target, 1.0f);
  const auto weighted = train_final_segmentor(a, toy.source, toy.target, recs, cfg);
  dualnorm::TrainStream src{"source", DomainTag::source, {}}, tgt{"target", DomainTag::target, {}};
  for (const auto& c : toy.source) src.cases.push_back({&c.image, &*c.label, nullptr});
  for (std::size_t i = 0; i < toy.target.size(); ++i)
    tgt.cases.push_back({&toy.target[i].image, &recs[i].pseudo_label, nullptr});
  const auto plain = dualnorm::train_segnet(b, {src, tgt}, cfg.train);
  for (std::size_t e = 0; e < plain.size(); ++e)
    CHECK(weighted[e].stream_loss[1] == doctest::Approx(plain[e].stream_loss[1]).epsilon(1e-5));
}
