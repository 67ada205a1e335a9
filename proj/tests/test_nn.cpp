#include <cmath>
#include <functional>

#include "doctest.h"
#include "fpl/core/error.hpp"
#include "fpl/nn/adam.hpp"
#include "fpl/nn/layers.hpp"
#include "gradcheck.hpp"

using namespace fpl;
using namespace fpl::nn;

TEST_CASE("conv3d matches a direct convolution") {
  Rng rng(1);
  ConvSpec spec{2, 3, {3, 1, 3}, {1, 2, 1}, {1, 0, 1}, true};
  Conv3d conv("c", spec, rng);
  for (auto& b : conv.bias().value) b = static_cast<float>(rng.normal());
  const Tensor x = random_tensor(rng, {2, 2, 3, 5, 4});
  const Tensor y = conv.infer(x);
  REQUIRE(y.shape() == Shape{2, 3, 3, 3, 4});
  const auto& w = conv.weight().value;
  for (int n = 0; n < 2; ++n)
    for (int co = 0; co < 3; ++co)
      for (int oz = 0; oz < 3; ++oz)
        for (int oy = 0; oy < 3; ++oy)
          for (int ox = 0; ox < 4; ++ox) {
            double acc = conv.bias().value[static_cast<std::size_t>(co)];
            for (int ci = 0; ci < 2; ++ci)
              for (int a = 0; a < 3; ++a)
                for (int c = 0; c < 3; ++c) {
                  const int iz = oz - 1 + a, iy = oy * 2, ix = ox - 1 + c;
                  if (iz < 0 || iz >= 3 || ix < 0 || ix >= 4) continue;
                  acc += w[static_cast<std::size_t>(((co * 2 + ci) * 3 + a) * 3 + c)] *
                         x.channel(n, ci)[(iz * 5 + iy) * 4 + ix];
                }
            CHECK(y.channel(n, co)[(oz * 3 + oy) * 4 + ox] == doctest::Approx(acc).epsilon(1e-5));
          }
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(2);
  SUBCASE("conv") {
    Conv3d conv("c", {2, 3, {3, 3, 3}, {2, 1, 2}, {1, 1, 1}, true}, rng);
    check_layer_grads(rng, {2, 2, 4, 3, 4}, [&](const Tensor& x) { return conv.forward(x); },
                      [&](const Tensor& g) { return conv.backward(g); },
                      [&](std::vector<Parameter*>& p) { conv.collect(p); });
  }
  SUBCASE("pointwise conv") {
    Conv3d conv("c", {3, 2, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, true}, rng);
    check_layer_grads(rng, {2, 3, 2, 3, 2}, [&](const Tensor& x) { return conv.forward(x); },
                      [&](const Tensor& g) { return conv.backward(g); },
                      [&](std::vector<Parameter*>& p) { conv.collect(p); });
  }
  SUBCASE("upconv") {
    UpConv3d up("u", 3, 2, {1, 2, 2}, rng);
    check_layer_grads(rng, {2, 3, 2, 2, 3}, [&](const Tensor& x) { return up.forward(x); },
                      [&](const Tensor& g) { return up.backward(g); },
                      [&](std::vector<Parameter*>& p) { up.collect(p); });
  }
  SUBCASE("instance norm") {
    InstanceNorm in("n", 2);
    check_layer_grads(rng, {2, 2, 1, 4, 4}, [&](const Tensor& x) { return in.forward(x); },
                      [&](const Tensor& g) { return in.backward(g); },
                      [&](std::vector<Parameter*>& p) { in.collect(p); });
  }
  SUBCASE("max pool") {
    MaxPool3d pool({2, 2, 2});
    check_layer_grads(rng, {1, 2, 4, 4, 4}, [&](const Tensor& x) { return pool.forward(x); },
                      [&](const Tensor& g) { return pool.backward(g); }, [](std::vector<Parameter*>&) {});
  }
  SUBCASE("leaky relu") {
    LeakyRelu act(0.1f);
    check_layer_grads(rng, {1, 2, 3, 3, 3}, [&](const Tensor& x) { return act.forward(x); },
                      [&](const Tensor& g) { return act.backward(g); }, [](std::vector<Parameter*>&) {});
  }
  SUBCASE("softmax") {
    Tensor probs;
    check_layer_grads(rng, {2, 3, 1, 2, 3}, [&](const Tensor& x) { return probs = softmax_channels(x); },
                      [&](const Tensor& g) { return softmax_backward(probs, g); }, [](std::vector<Parameter*>&) {});
  }
}

TEST_CASE("softmax sums to one") {
  Rng rng(3);
  const Tensor p = softmax_channels(random_tensor(rng, {2, 4, 2, 3, 3}, 10.0));
  for (int n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 18; ++i) {
      double s = 0;
      for (int c = 0; c < 4; ++c) s += p.channel(n, c)[i];
      CHECK(std::abs(s - 1.0) < 1e-5);
    }
}

TEST_CASE("dropout") {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {1, 1, 8, 8, 8});
  Dropout off(0.0f), on(0.5f);
  CHECK(off.infer(x, &rng) == x);
  CHECK(on.infer(x, nullptr) == x);
  Rng a(7), b(7);
  CHECK(on.infer(x, &a) == on.infer(x, &b));
  const Tensor y = on.forward(x, &rng);
  int zeros = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0f) ++zeros;
    else CHECK(y[i] == doctest::Approx(2.0 * x[i]));
  }
  CHECK(zeros > 180);
  CHECK(zeros < 330);
}

TEST_CASE("adam skips untouched parameters") {
  Parameter a("a", {3}, ParamRole::shared, 1.0f), b("b", {3}, ParamRole::gamma_target, 1.0f);
  Adam opt({&a, &b}, {0.1});
  for (auto& g : a.grad) g = 1.0f;
  a.touched = true;
  opt.step();
  CHECK(a.value[0] == doctest::Approx(0.9));
  CHECK(b.value[0] == 1.0f);
  opt.zero_grad();
  CHECK(a.grad[0] == 0.0f);
  CHECK_FALSE(a.touched);
}

TEST_CASE("adam minimises a quadratic") {
  Parameter p("p", {2}, ParamRole::shared, 5.0f);
  Adam opt({&p}, {0.1});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    p.grad[0] = 2 * (p.value[0] - 1.0f);
    p.grad[1] = 2 * (p.value[1] + 2.0f);
    p.touched = true;
    opt.step();
  }
  CHECK(p.value[0] == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(p.value[1] == doctest::Approx(-2.0).epsilon(1e-2));
}

TEST_CASE("parameter blobs round trip and detect truncation") {
  Parameter a("a", {2, 3}, ParamRole::shared, 1.5f), b("b", {4}, ParamRole::running_var_source, 2.0f);
  CHECK(b.grad.empty());
  const auto path = std::filesystem::temp_directory_path() / "fpl_blob_test.bin";
  std::vector<const Parameter*> out{&a, &b};
  write_blob(out, path);
  Parameter c("a", {2, 3}, ParamRole::shared), d("b", {4}, ParamRole::running_var_source);
  std::vector<Parameter*> in{&c, &d};
  read_blob(in, path);
  CHECK(c.value == a.value);
  CHECK(d.value == b.value);
  Parameter e("e", {5}, ParamRole::shared);
  std::vector<Parameter*> wrong{&c, &e};
  CHECK_THROWS_AS(read_blob(wrong, path), TruncationError);
  std::filesystem::remove(path);
}
