#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "fpl/core/error.hpp"
#include "fpl/core/rng.hpp"
#include "fpl/data/dataset.hpp"
#include "fpl/data/preprocess.hpp"
#include "fpl/data/synthetic.hpp"
#include "fpl/data/volume_io.hpp"
#include "temp_dir.hpp"

using namespace fpl;
using namespace fpl::data;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

Volume3D random_volume(Rng& rng, Dims3 d) {
  Volume3D v(d, {1.5, 0.75, 0.75});
  for (auto& x : v.values()) x = static_cast<float>(rng.normal(3.0, 2.0));
  return v;
}

}  // namespace

TEST_CASE("volume round trip is byte-identical") {
  TempDir dir;
  Rng rng(1);
  const auto v = random_volume(rng, {8, 8, 8});
  write_volume(v, dir / "a");
  const auto back = read_volume(dir / "a.json");
  CHECK(back == v);
  write_volume(back, dir / "b.raw");
  CHECK(slurp(dir / "a.raw") == slurp(dir / "b.raw"));
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));

  LabelMap y({3, 4, 5}, 3);
  y[7] = 2;
  write_labels(y, dir / "y");
  CHECK(read_labels(dir / "y", 3) == y);
  CHECK_THROWS_AS(read_labels(dir / "y", 2), ValidationError);
}

TEST_CASE("volume reader rejects malformed files") {
  TempDir dir;
  Volume3D v({2, 2, 2});
  write_volume(v, dir / "v");
  const auto header = slurp(dir / "v.json");

  auto payload = slurp(dir / "v.raw");
  spit(dir / "v.raw", payload.substr(0, 31));
  CHECK_THROWS_AS(read_volume(dir / "v"), TruncationError);
  spit(dir / "v.raw", payload);

  auto be = header;
  be.replace(be.find("little"), 6, "big");
  spit(dir / "v.json", be);
  CHECK_THROWS_AS(read_volume(dir / "v"), UnsupportedEncodingError);

  spit(dir / "v.json", "{\"dims\": [2,2,2], oops}");
  try {
    read_volume(dir / "v");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset() > 0);
  }
  CHECK_THROWS_AS(read_volume(dir / "missing"), IoError);
}

TEST_CASE("crop_to_roi") {
  Rng rng(2);
  const auto v = random_volume(rng, {9, 9, 9});
  const auto full = crop_to_roi(v, {{0, 0, 0}, {9, 9, 9}}, 0);
  CHECK(full.grid == v);

  const auto c = crop_to_roi(v, {{4, 4, 4}, {5, 5, 5}}, 2);
  CHECK(c.grid.dims() == Dims3{5, 5, 5});
  CHECK(c.offset == Index3{2, 2, 2});
  CHECK(c.grid.at(0, 0, 0) == v.at(2, 2, 2));
  CHECK(c.grid.spacing() == v.spacing());

  const auto edge = crop_to_roi(v, {{0, 0, 7}, {2, 2, 9}}, 4);
  CHECK(edge.offset == Index3{0, 0, 3});
  CHECK(edge.grid.dims() == Dims3{6, 6, 6});
  CHECK_THROWS_AS(crop_to_roi(v, {{3, 3, 3}, {3, 5, 5}}, 1), ValidationError);

  Volume3D blank(v.dims(), v.spacing());
  embed(c.grid, c.offset, blank);
  for (int z = 2; z < 7; ++z) CHECK(blank.at(z, 4, 5) == v.at(z, 4, 5));
  CHECK(blank.at(0, 0, 0) == 0.0f);
}

TEST_CASE("znorm") {
  Volume3D constant({4, 4, 4}, {}, 3.0f);
  const auto zeros = znorm(constant);
  for (float x : zeros.values()) CHECK(x == 0.0f);

  Volume3D two({2, 2, 2});
  for (std::size_t i = 0; i < two.size(); ++i) two[i] = i % 2 ? 2.0f : 0.0f;
  const auto n = znorm(two);
  for (std::size_t i = 0; i < n.size(); ++i) CHECK(n[i] == doctest::Approx(i % 2 ? 1.0 : -1.0));

  Rng rng(3);
  const auto v = znorm(random_volume(rng, {10, 11, 12}));
  double mean = 0, sq = 0;
  for (float x : v.values()) mean += x;
  mean /= static_cast<double>(v.size());
  for (float x : v.values()) sq += (x - mean) * (x - mean);
  CHECK(std::abs(mean) < 1e-5);
  CHECK(std::abs(std::sqrt(sq / static_cast<double>(v.size())) - 1.0) < 1e-4);
  const auto twice = znorm(v);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(twice[i] - v[i]) < 1e-5);
}

TEST_CASE("trim_slices") {
  Volume3D v({60, 2, 2});
  CHECK(trim_slices(v, 0, 0) == v);
  CHECK(trim_slices(v, 20, 20).dims().depth == 20);
  CHECK_THROWS_AS(trim_slices(Volume3D({30, 2, 2}), 20, 20), ValidationError);
}

TEST_CASE("reflect_pad mirrors without repeating the edge") {
  Volume3D v({1, 1, 3});
  v[0] = 1, v[1] = 2, v[2] = 3;
  const auto p = reflect_pad(v, {1, 1, 6});
  const float expect[] = {1, 2, 3, 2, 1, 2};
  for (int i = 0; i < 6; ++i) CHECK(p[static_cast<std::size_t>(i)] == expect[i]);
}

TEST_CASE("sample_patch") {
  Rng rng(4);
  const auto v = random_volume(rng, {8, 8, 8});
  const auto whole = sample_patch(v, nullptr, v.dims(), rng);
  CHECK(whole.image == v);

  Rng a(9), b(9);
  CHECK(sample_patch(v, nullptr, {4, 4, 4}, a).image == sample_patch(v, nullptr, {4, 4, 4}, b).image);

  Volume3D big({20, 20, 20});
  LabelMap y(big.dims(), 2);
  y.at(3, 17, 9) = 1;
  int hits = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = sample_patch(big, &y, {6, 6, 6}, rng);
    REQUIRE(s.label);
    hits += s.label->count(1) == 1;
  }
  CHECK(hits >= 400);

  const auto padded = sample_patch(Volume3D({4, 4, 4}), nullptr, {6, 6, 6}, rng);
  CHECK(padded.image.dims() == Dims3{6, 6, 6});
}

TEST_CASE("synthetic generator") {
  TempDir dir;
  SyntheticSpec spec;
  spec.num_source_train = 3;
  spec.num_target_train = 3;
  spec.num_target_val = 1;
  spec.num_target_test = 2;
  const auto index = generate_synthetic(spec, dir / "a");
  generate_synthetic(spec, dir / "b");
  CHECK(index.records.size() == 9);
  for (const auto& entry : fs::recursive_directory_iterator(dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir / "a");
    CHECK(slurp(entry.path()) == slurp(dir / "b" / rel));
  }

  index.validate();
  index.validate_unsupervised_contract();
  for (const auto* r : index.select(DomainTag::target, Split::train)) CHECK_FALSE(r->label);
  for (const auto* r : index.select(DomainTag::source, Split::train)) CHECK(r->label);
  const auto reloaded = DatasetIndex::load(dir / "a" / "index.json");
  CHECK(reloaded.records.size() == index.records.size());
  CHECK(volume_exists(reloaded.records.front().volume));

  auto none = spec;
  none.lesions_min = none.lesions_max = 0;
  CHECK(synthesize_case(none, DomainTag::source, "x").label.count(1) == 0);

  auto tiny = spec;
  tiny.dims = {12, 32, 32};
  CHECK_THROWS_AS(tiny.validate(), ValidationError);
  auto fat = spec;
  fat.radius_max = 14;
  CHECK_THROWS_AS(fat.validate(), ValidationError);
}

TEST_CASE("synthetic foreground fraction regression") {
  SyntheticSpec spec;
  double fraction = 0.0;
  for (int i = 0; i < 32; ++i) {
    const auto c = synthesize_case(spec, DomainTag::source, "src_train_" + std::to_string(i));
    fraction += static_cast<double>(c.label.count(1)) / static_cast<double>(c.label.size());
  }
  fraction /= 32.0;
  MESSAGE("mean foreground fraction " << fraction);
  CHECK(fraction >= 0.002);
  CHECK(fraction <= 0.04);
}

TEST_CASE("dataset index contract") {
  DatasetIndex index;
  index.records.push_back({"a", "a", std::nullopt, DomainTag::source, Split::train});
  CHECK_THROWS_AS(index.validate_unsupervised_contract(), ValidationError);
  index.records[0].label = "a_label";
  index.records.push_back({"a", "b", std::nullopt, DomainTag::target, Split::train});
  CHECK_THROWS_AS(index.validate(), ValidationError);
  index.records[1].case_id = "b";
  index.validate();
  index.records[1].label = "b_label";
  CHECK_THROWS_AS(index.validate_unsupervised_contract(), ValidationError);
}
