#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "fpl/core/error.hpp"
#include "fpl/pseudolabel/filter.hpp"
#include "fpl/pseudolabel/generator.hpp"
#include "fpl/pseudolabel/records.hpp"
#include "fpl/translate/networks.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"
#include "toy_data.hpp"

using namespace fpl;
using namespace fpl::pseudolabel;
namespace fs = std::filesystem;

namespace {

const Dims3 kOne{1, 1, 1};

ProbabilityMap binary(std::vector<float> fg, Dims3 dims) {
  ProbabilityMap m(dims, 2);
  for (std::size_t i = 0; i < fg.size(); ++i) {
    m.at(1, i) = fg[i];
    m.at(0, i) = 1.0f - fg[i];
  }
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb || fa.empty()) return false;
  for (const auto& f : fa)
    if (slurp(a / f) != slurp(b / f)) return false;
  return true;
}

using toy::small_net;
using toy::sphere_case;

struct Shrinking final : translate::SliceTranslator {
  nn::Tensor translate(const nn::Tensor&) const override { return nn::Tensor({1, 1, 1, 4, 4}); }
};

}  // namespace

TEST_CASE("mean probability") {
  const auto a = binary({0.2f}, kOne), b = binary({0.8f}, kOne);
  const std::vector<ProbabilityMap> two{a, b};
  CHECK(mean_probability(two).at(1, 0) == doctest::Approx(0.5));
  const std::vector<ProbabilityMap> same{a, a, a};
  CHECK(mean_probability(same) == a);

  Rng rng(1);
  const auto cohort = oracle::random_cohort(rng, 1, 3, 5, {4, 4, 4}, 0.0);
  const auto pbar = mean_probability(cohort[0].mc);
  for (std::size_t i = 0; i < pbar.voxels(); ++i)
    CHECK(pbar.at(0, i) + pbar.at(1, i) + pbar.at(2, i) == doctest::Approx(1.0).epsilon(1e-5));

  const std::vector<ProbabilityMap> bad{a, binary({0.1f, 0.2f}, {1, 1, 2})};
  CHECK_THROWS_AS(mean_probability(bad), ShapeError);
  CHECK_THROWS_AS(mean_probability(std::vector<ProbabilityMap>{a}), ValidationError);
}

TEST_CASE("variance map") {
  const std::vector<ProbabilityMap> flip{binary({0.0f}, kOne), binary({1.0f}, kOne)};
  CHECK(variance_map(flip)[0] == doctest::Approx(0.25));
  const std::vector<ProbabilityMap> same{binary({0.3f}, kOne), binary({0.3f}, kOne)};
  CHECK(variance_map(same)[0] == 0.0f);

  // doubling the spread around the mean quadruples the variance
  const std::vector<ProbabilityMap> narrow{binary({0.4f}, kOne), binary({0.6f}, kOne)};
  const std::vector<ProbabilityMap> wide{binary({0.3f}, kOne), binary({0.7f}, kOne)};
  CHECK(variance_map(wide)[0] == doctest::Approx(4.0 * variance_map(narrow)[0]).epsilon(1e-5));
}

TEST_CASE("raw image uncertainty sums the variance map") {
  WeightMap V({1, 1, 3});
  CHECK(image_uncertainty_raw(V) == 0.0);
  V[0] = 0.25f;
  V[2] = 0.25f;
  CHECK(image_uncertainty_raw(V) == 0.5);
  WeightMap V2 = V;
  for (auto& x : V2.values()) x *= 2;
  CHECK(image_uncertainty_raw(V2) == 2 * image_uncertainty_raw(V));
}

TEST_CASE("uncertain region size") {
  CHECK(uncertain_region_size(binary({0.0f, 1.0f, 1.0f}, {1, 1, 3}), 0.2) == 0);
  const auto half = binary({0.5f}, kOne);
  CHECK(entropy_map(half)[0] == doctest::Approx(1.0));
  CHECK(uncertain_region_size(half, 0.2) == 1);
  // strictly greater: one-hot voxels have entropy exactly 0 and are not counted at e = 0
  CHECK(uncertain_region_size(binary({1.0f}, kOne), 0.0) == 0);
  CHECK(FilterConfig{}.e == 0.2);
  CHECK(FilterConfig{}.K == 5);

  // three classes, uniform: normalised entropy 1
  ProbabilityMap u3(kOne, 3, 1.0f / 3.0f);
  CHECK(entropy_map(u3)[0] == doctest::Approx(1.0));
}

TEST_CASE("image uncertainty and weights") {
  const std::vector<double> v{0.5, 0.8, 0.3};
  const std::vector<long> eta{2, 2, 0};
  const auto u = image_uncertainty(v, eta);
  CHECK(u[0] == 0.25);
  CHECK(u[1] == 0.4);
  CHECK(u[2] == 0.4);  // falls back to the cohort maximum ratio

  const auto none = image_uncertainty(v, std::vector<long>{0, 0, 0});
  CHECK(none == std::vector<double>{0, 0, 0});
  CHECK(image_weights(none) == std::vector<double>{1, 1, 1});

  const auto w = image_weights(std::vector<double>{0.1, 0.5, 0.3});
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 0.0);
  CHECK(w[2] == doctest::Approx(0.5));
  CHECK(image_weights(std::vector<double>{0.7}) == std::vector<double>{1.0});
}

TEST_CASE("consensus map") {
  Rng rng(3);
  const auto a = oracle::random_labels(rng, {4, 4, 4}, 2, 0.0);
  LabelMap comp = a;
  for (auto& x : comp.values()) x = 1 - x;
  const auto all = consensus_map(a, a);
  CHECK(std::all_of(all.values().begin(), all.values().end(), [](float x) { return x == 1.0f; }));
  const auto none = consensus_map(a, comp);
  CHECK(std::all_of(none.values().begin(), none.values().end(), [](float x) { return x == 0.0f; }));
  const auto b = oracle::random_labels(rng, {4, 4, 4}, 2, 0.0);
  CHECK(consensus_map(a, b) == consensus_map(b, a));
  CHECK_THROWS_AS(consensus_map(a, LabelMap({4, 4, 5}, 2)), ShapeError);
}

TEST_CASE("cohort filter matches the naive oracle") {
  Rng rng(2024);
  int certain_cases = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int C = trial % 2 ? 3 : 2;
    const int n = rng.uniform_int(1, 8);
    const auto cohort = oracle::random_cohort(rng, n, C, 5, {8, 8, 8});
    const auto got = filter_cohort(cohort, {});
    const auto want = oracle::filter(cohort, 0.2);
    REQUIRE(got.size() == cohort.size());
    for (std::size_t j = 0; j < got.size(); ++j) {
      CHECK(std::abs(got[j].v - want.v[j]) <= 1e-6);
      CHECK(got[j].eta == want.eta[j]);
      CHECK(std::abs(got[j].u - want.u[j]) <= 1e-6);
      CHECK(std::abs(got[j].w - want.w[j]) <= 1e-6);
      certain_cases += got[j].eta == 0;
      for (std::size_t i = 0; i < want.M[j].size(); ++i) {
        REQUIRE(std::abs(got[j].consensus[i] - want.M[j][i]) <= 1e-6);
        REQUIRE(std::abs(got[j].weight[i] - want.A[j][i]) <= 1e-6);
      }
    }
  }
  CHECK(certain_cases > 0);  // the eta = 0 branch was exercised
}

TEST_CASE("cohort filter invariants") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cohort = oracle::random_cohort(rng, rng.uniform_int(2, 6), 2, 5, {6, 6, 6});
    const auto recs = filter_cohort(cohort, {});
    double lo = 1, hi = 0, u_lo = 1e9, u_hi = -1;
    for (const auto& r : recs) {
      CHECK(r.w >= 0.0);
      CHECK(r.w <= 1.0);
      lo = std::min(lo, r.w), hi = std::max(hi, r.w);
      u_lo = std::min(u_lo, r.u), u_hi = std::max(u_hi, r.u);
      CHECK(r.pseudo_label == dualnorm::argmax_labels(r.pbar));
      for (std::size_t i = 0; i < r.weight.size(); ++i) {
        CHECK((r.consensus[i] == 0.0f || r.consensus[i] == 1.0f));
        CHECK(r.weight[i] == static_cast<float>(r.consensus[i] * r.w));
      }
    }
    if (u_hi > u_lo) {
      CHECK(lo == 0.0);
      CHECK(hi == 1.0);
    }
  }
}

TEST_CASE("singleton cohort gets full weight") {
  Rng rng(5);
  const auto cohort = oracle::random_cohort(rng, 1, 2, 5, {4, 4, 4}, 0.0);
  const auto r = filter_cohort(cohort, {});
  REQUIRE(r[0].eta > 0);
  CHECK(r[0].w == 1.0);
}

TEST_CASE("extra MC spread raises v and never raises w") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto cohort = oracle::random_cohort(rng, 5, 2, 5, {6, 6, 6}, 0.0);
    const auto before = filter_cohort(cohort, {});
    // stretch case 0's passes away from their mean: same P-bar, larger spread
    auto& mc = cohort[0].mc;
    const auto pbar = mean_probability(mc);
    for (std::size_t i = 0; i < pbar.voxels(); ++i) {
      const double m = pbar.at(1, i);
      double room = std::numeric_limits<double>::infinity();
      for (const auto& p : mc) {
        const double d = p.at(1, i) - m;
        if (d > 0) room = std::min(room, (1.0 - m) / d);
        if (d < 0) room = std::min(room, m / -d);
      }
      if (room <= 1.0) continue;  // saturated voxel: leave it alone
      const double s = std::min(1.5, room);
      for (auto& p : mc) {
        const double q = m + s * (p.at(1, i) - m);
        p.at(1, i) = static_cast<float>(q);
        p.at(0, i) = static_cast<float>(1.0 - q);
      }
    }
    const auto after = filter_cohort(cohort, {});
    CHECK(after[0].v > before[0].v);
    if (after[0].eta == before[0].eta) {
      CHECK(after[0].u > before[0].u);
      CHECK(after[0].w <= before[0].w);
    }
  }
}

TEST_CASE("filter config validation") {
  CHECK_THROWS_AS((FilterConfig{1, 0.2}.validate()), ValidationError);
  CHECK_THROWS_AS((FilterConfig{5, 1.0}.validate()), ValidationError);
  CHECK_THROWS_AS((FilterConfig{5, -0.1}.validate()), ValidationError);
  Rng rng(1);
  const auto cohort = oracle::random_cohort(rng, 2, 2, 3, {4, 4, 4});
  try {
    filter_cohort(cohort, {});
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("case0") != std::string::npos);
  }
}

TEST_CASE("records round trip and are byte-stable") {
  Rng rng(8);
  const auto cohort = oracle::random_cohort(rng, 3, 3, 5, {4, 5, 6});
  const auto recs = filter_cohort(cohort, {});
  TempDir a, b;
  save_cohort(recs, a.path());
  save_cohort(filter_cohort(cohort, {}), b.path());
  CHECK(same_tree(a.path(), b.path()));
  CHECK(fs::exists(a / "case1.plrec" / "meta.json"));
  CHECK(fs::exists(a / "case1.plrec" / "pseudo_label.raw"));

  const auto back = load_cohort(a.path(), {"case0", "case1", "case2"});
  for (std::size_t j = 0; j < recs.size(); ++j) {
    CHECK(back[j].case_id == recs[j].case_id);
    CHECK(back[j].pseudo_label == recs[j].pseudo_label);
    CHECK(back[j].pbar == recs[j].pbar);
    CHECK(back[j].weight == recs[j].weight);
    CHECK(back[j].consensus == recs[j].consensus);
    CHECK(back[j].v == recs[j].v);
    CHECK(back[j].eta == recs[j].eta);
    CHECK(back[j].u == recs[j].u);
    CHECK(back[j].w == recs[j].w);
    CHECK(back[j].K == 5);
  }
  CHECK_THROWS_AS(load_cohort(a.path(), {"case0", "nope"}), ValidationError);
}

TEST_CASE("tiled prediction") {
  CHECK(dualnorm::tile_starts(32, 16, 0.5) == std::vector<int>{0, 8, 16});
  CHECK(dualnorm::tile_starts(32, 16, 0.25) == std::vector<int>{0, 12, 16});
  CHECK(dualnorm::tile_starts(16, 16, 0.25) == std::vector<int>{0});
  CHECK(dualnorm::tile_starts(10, 16, 0.25) == std::vector<int>{0});

  dualnorm::DualDomainSegNet net(small_net(), 4);
  Rng rng(6);
  Volume3D v({8, 8, 8});
  for (auto& x : v.values()) x = static_cast<float>(rng.normal());
  const dualnorm::Tiling t{{8, 8, 8}};
  // a volume of exactly one patch is a single forward pass
  CHECK(dualnorm::predict_tiled(net, v, DomainTag::target, t) == dualnorm::segnet_forward(net, v, DomainTag::target));

  Volume3D odd({6, 13, 9});
  for (auto& x : odd.values()) x = static_cast<float>(rng.normal());
  const auto p = dualnorm::predict_tiled(net, odd, DomainTag::source, t);
  CHECK(p.dims() == odd.dims());
  for (std::size_t i = 0; i < p.voxels(); ++i) REQUIRE(p.at(0, i) + p.at(1, i) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(p == dualnorm::predict_tiled(net, odd, DomainTag::source, t));
}

TEST_CASE("generator training and record building") {
  Rng rng(11);
  const Dims3 dims{12, 12, 12};
  std::vector<translate::LabeledCase> ss, st, target;
  for (int i = 0; i < 4; ++i) ss.push_back(sphere_case("s" + std::to_string(i), rng, dims));
  for (int i = 0; i < 4; ++i) st.push_back(sphere_case("t" + std::to_string(i), rng, dims, -1.0f));
  for (int i = 0; i < 3; ++i) {
    auto c = sphere_case("x" + std::to_string(i), rng, dims, -1.0f);
    c.label.reset();
    target.push_back(std::move(c));
  }

  GeneratorConfig cfg;
  cfg.net = small_net(0.2f);
  cfg.train.epochs = 60;
  cfg.train.lr = 3e-3;
  cfg.train.steps_per_epoch = 4;
  cfg.train.patch = dims;
  cfg.train.seed = 5;
  std::vector<dualnorm::EpochLog> logs;
  const auto G = train_generator(ss, st, cfg, &logs);
  REQUIRE(logs.size() == 60u);
  for (const auto& l : logs) {
    REQUIRE(l.stream_loss.size() == 2);
    CHECK(l.total == l.stream_loss[0] + l.stream_loss[1]);
  }
  MESSAGE("generator loss first/last: " << logs.front().total << " " << logs.back().total);
  CHECK(logs.back().total < 0.1);
  CHECK(logs.back().total < logs.front().total);

  const dualnorm::Tiling tiling{{8, 8, 8}};
  const translate::IdentityTranslator id;
  const FilterConfig fc;
  const auto recs = build_records(target, G, id, fc, tiling, 77);
  REQUIRE(recs.size() == 3);
  for (const auto& r : recs) {
    CHECK(r.pseudo_label.dims() == dims);
    CHECK(r.K == 5);
  }
  TempDir a, b;
  save_cohort(recs, a.path());
  save_cohort(build_records(target, G, id, fc, tiling, 77), b.path());
  CHECK(same_tree(a.path(), b.path()));

  // consensus passes are deterministic and use both branches
  const auto M = consensus_map(G, id, target[0].image, tiling);
  CHECK(M == recs[0].consensus);

  try {
    build_records(target, G, Shrinking{}, fc, tiling, 77);
    FAIL("expected failure");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("x0") != std::string::npos);
  }
}

TEST_CASE("training without target data leaves the target branch at init") {
  Rng rng(12);
  std::vector<translate::LabeledCase> ss;
  for (int i = 0; i < 2; ++i) ss.push_back(sphere_case("s" + std::to_string(i), rng, {8, 8, 8}));
  dualnorm::DualDomainSegNet net(small_net(), 1);
  dualnorm::TrainStream s{"s", DomainTag::source, {}};
  for (const auto& c : ss) s.cases.push_back({&c.image, &*c.label, nullptr});
  dualnorm::TrainConfig tc;
  tc.epochs = 2;
  tc.steps_per_epoch = 2;
  tc.patch = {8, 8, 8};
  dualnorm::train_segnet(net, {s}, tc);
  auto target_branch = [](dualnorm::DualDomainSegNet& n) {
    std::vector<std::vector<float>> out;
    for (auto* p : n.parameters())
      if (p->role == nn::ParamRole::gamma_target || p->role == nn::ParamRole::beta_target ||
          p->role == nn::ParamRole::running_mean_target || p->role == nn::ParamRole::running_var_target)
        out.push_back(p->value);
    return out;
  };
  dualnorm::DualDomainSegNet fresh(small_net(), 1);
  CHECK_FALSE(target_branch(net).empty());
  CHECK(target_branch(net) == target_branch(fresh));
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  Rng rng(13);
  auto c = sphere_case("s0", rng, {8, 8, 8});
  for (auto& x : c.image.values()) x = std::numeric_limits<float>::quiet_NaN();
  GeneratorConfig cfg;
  cfg.net = small_net();
  cfg.train.epochs = 1;
  cfg.train.patch = {8, 8, 8};
  try {
    train_generator({c}, {c}, cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}
