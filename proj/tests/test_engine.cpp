#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <numeric>

#include "echosynth/engine/ops.hpp"
#include "echosynth/engine/rng.hpp"

using namespace echosynth::engine;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, float stddev = 1.0f) {
  Rng rng(seed);
  return Tensor::randn(std::move(s), rng, stddev);
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a.data()[i]) * b.data()[i];
  return acc;
}

}  // namespace

TEST_CASE("conv3d identity-scale kernel") {
  Tensor x = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 1, 1, 1}, 2.0f);
  Tensor y = conv3d(x, w, nullptr, {1, 1, 1}, {0, 0, 0}, nullptr);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3, 3});
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 2.0f);
}

TEST_CASE("conv3d full-kernel sum") {
  std::vector<float> vals(8);
  std::iota(vals.begin(), vals.end(), 1.0f);
  Tensor x = Tensor::from_vector({1, 1, 2, 2, 2}, vals);
  Tensor w = Tensor::full({1, 1, 2, 2, 2}, 1.0f);
  Tensor y = conv3d(x, w, nullptr, {1, 1, 1}, {0, 0, 0}, nullptr);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1, 1});
  REQUIRE(y.item() == 36.0f);
}

TEST_CASE("conv3d zero padding gives partial sums at corners") {
  Tensor x = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
  Tensor y = conv3d(x, w, nullptr, {1, 1, 1}, {1, 1, 1}, nullptr);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3, 3});
  auto at = [&](int d, int h, int ww) { return y.data()[(d * 3 + h) * 3 + ww]; };
  REQUIRE(at(1, 1, 1) == 27.0f);  // fully inside
  REQUIRE(at(0, 0, 0) == 8.0f);   // 2x2x2 corner overlap
  REQUIRE(at(0, 1, 1) == 18.0f);  // 2x3x3 face overlap
}

TEST_CASE("conv3d bias and channel mixing") {
  Tensor x = Tensor::full({1, 2, 2, 2, 2}, 1.0f);
  Tensor w = Tensor::full({3, 2, 1, 1, 1}, 1.0f);
  Tensor b = Tensor::from_vector({3}, {0.0f, 10.0f, -1.0f});
  Tensor y = conv3d(x, w, &b, {1, 1, 1}, {0, 0, 0}, nullptr);
  REQUIRE(y.shape() == Shape{1, 3, 2, 2, 2});
  REQUIRE(y.data()[0] == 2.0f);
  REQUIRE(y.data()[8] == 12.0f);
  REQUIRE(y.data()[16] == 1.0f);
}

TEST_CASE("conv3d shape formula over a randomized grid") {
  Rng rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    const int k = 1 + rng.uniform_int(4);
    const int s = 1 + rng.uniform_int(3);
    const int p = rng.uniform_int(3);
    const int in = k + rng.uniform_int(6);  // guarantees at least one valid position with p >= 0
    Tensor x = random_tensor({1, 1, in, in, in}, 1000 + trial);
    Tensor w = random_tensor({2, 1, k, k, k}, 2000 + trial);
    const int expect = (in + 2 * p - k) / s + 1;
    if (expect < 1) continue;
    Tensor y = conv3d(x, w, nullptr, {s, s, s}, {p, p, p}, nullptr);
    REQUIRE(y.dim(2) == expect);
    REQUIRE(y.dim(3) == expect);
    REQUIRE(y.dim(4) == expect);
  }
}

TEST_CASE("conv3d rejects bad arguments") {
  Tensor x = Tensor::full({1, 2, 4, 4, 4}, 1.0f);
  Tensor w_bad_cin = Tensor::full({1, 3, 3, 3, 3}, 1.0f);
  REQUIRE_THROWS_AS(conv3d(x, w_bad_cin, nullptr, {1, 1, 1}, {0, 0, 0}, nullptr),
                    std::invalid_argument);
  Tensor w_big = Tensor::full({1, 2, 5, 5, 5}, 1.0f);
  REQUIRE_THROWS_AS(conv3d(x, w_big, nullptr, {1, 1, 1}, {0, 0, 0}, nullptr),
                    std::invalid_argument);
  Tensor w = Tensor::full({1, 2, 3, 3, 3}, 1.0f);
  REQUIRE_THROWS_AS(conv3d(x, w, nullptr, {0, 1, 1}, {0, 0, 0}, nullptr), std::invalid_argument);
}

TEST_CASE("conv_transpose3d broadcasts a single voxel") {
  Tensor x = Tensor::full({1, 1, 1, 1, 1}, 3.5f);
  Tensor w = Tensor::full({1, 1, 2, 2, 2}, 1.0f);
  Tensor y = conv_transpose3d(x, w, nullptr, {2, 2, 2}, {0, 0, 0}, nullptr);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2, 2});
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 3.5f);
}

TEST_CASE("conv_transpose3d stride-2 overlap-add pattern") {
  // 1D analogue along the last axis: length-2 ones input, length-3 ones
  // kernel, stride 2 -> [1,1,2,1,1].
  Tensor x = Tensor::full({1, 1, 1, 1, 2}, 1.0f);
  Tensor w = Tensor::full({1, 1, 1, 1, 3}, 1.0f);
  Tensor y = conv_transpose3d(x, w, nullptr, {1, 1, 2}, {0, 0, 0}, nullptr);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1, 5});
  const float expect[5] = {1.0f, 1.0f, 2.0f, 1.0f, 1.0f};
  for (int i = 0; i < 5; ++i) REQUIRE(y.data()[i] == expect[i]);
}

TEST_CASE("conv_transpose3d shape formula and rejection") {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int k = 1 + rng.uniform_int(4);
    const int s = 1 + rng.uniform_int(3);
    const int p = rng.uniform_int(2);
    const int in = 1 + rng.uniform_int(5);
    const int expect = (in - 1) * s - 2 * p + k;
    Tensor x = random_tensor({1, 2, in, in, in}, trial);
    Tensor w = random_tensor({2, 1, k, k, k}, 100 + trial);
    if (expect < 1) {
      REQUIRE_THROWS_AS(conv_transpose3d(x, w, nullptr, {s, s, s}, {p, p, p}, nullptr),
                        std::invalid_argument);
      continue;
    }
    Tensor y = conv_transpose3d(x, w, nullptr, {s, s, s}, {p, p, p}, nullptr);
    REQUIRE(y.dim(1) == 1);
    REQUIRE(y.dim(2) == expect);
  }
}

TEST_CASE("conv_transpose3d is the adjoint of conv3d") {
  // <conv3d(x, w), y> == <x, conv_transpose3d(y, w)> with the same weight
  // buffer, whose leading two axes swap roles between the ops.
  struct Geom { int cin, cout, in, k, s, p; };
  // geometries where (in + 2p - k) divides the stride exactly, so the
  // transposed output recovers the original extent
  const Geom geoms[] = {{2, 3, 6, 3, 1, 1}, {1, 2, 6, 4, 2, 1}, {3, 1, 4, 2, 2, 0}, {2, 2, 8, 3, 3, 2}};
  int idx = 0;
  for (const auto& g : geoms) {
    Tensor x = random_tensor({2, g.cin, g.in, g.in, g.in}, 10 + idx);
    Tensor w = random_tensor({g.cout, g.cin, g.k, g.k, g.k}, 20 + idx);
    Tensor cx = conv3d(x, w, nullptr, {g.s, g.s, g.s}, {g.p, g.p, g.p}, nullptr);
    Tensor y = random_tensor(cx.shape(), 30 + idx);
    Tensor cy = conv_transpose3d(y, w, nullptr, {g.s, g.s, g.s}, {g.p, g.p, g.p}, nullptr);
    REQUIRE(cy.shape() == x.shape());
    const double lhs = dot(cx, y), rhs = dot(x, cy);
    REQUIRE(std::fabs(lhs - rhs) <= 1e-4 * (std::fabs(lhs) + std::fabs(rhs) + 1e-6));
    ++idx;
  }
}

TEST_CASE("upsample_trilinear align-corners ramp") {
  Tensor x = Tensor::from_vector({1, 1, 1, 1, 2}, {0.0f, 1.0f});
  Tensor y = upsample_trilinear(x, 2, nullptr);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2, 4});
  // Size-1 axes stay constant; the last axis carries the ramp.
  const float expect[4] = {0.0f, 1.0f / 3.0f, 2.0f / 3.0f, 1.0f};
  for (int d = 0; d < 2; ++d)
    for (int h = 0; h < 2; ++h)
      for (int w = 0; w < 4; ++w)
        REQUIRE(y.data()[(d * 2 + h) * 4 + w] == Catch::Approx(expect[w]).margin(1e-7));
}

TEST_CASE("upsample_trilinear corners map exactly and factor 1 is identity") {
  Tensor x = random_tensor({1, 2, 2, 3, 2}, 5);
  Tensor y = upsample_trilinear(x, 3, nullptr);
  REQUIRE(y.shape() == Shape{1, 2, 6, 9, 6});
  // corner voxels
  auto in_at = [&](int c, int d, int h, int w) {
    return x.data()[((c * 2 + d) * 3 + h) * 2 + w];
  };
  auto out_at = [&](int c, int d, int h, int w) {
    return y.data()[((c * 6 + d) * 9 + h) * 6 + w];
  };
  for (int c = 0; c < 2; ++c) {
    REQUIRE(out_at(c, 0, 0, 0) == in_at(c, 0, 0, 0));
    REQUIRE(out_at(c, 5, 8, 5) == in_at(c, 1, 2, 1));
    REQUIRE(out_at(c, 0, 8, 5) == in_at(c, 0, 2, 1));
  }
  Tensor same = upsample_trilinear(x, 1, nullptr);
  REQUIRE(same.shape() == x.shape());
  REQUIRE(std::memcmp(same.data(), x.data(), sizeof(float) * x.numel()) == 0);
  REQUIRE_THROWS_AS(upsample_trilinear(x, 0, nullptr), std::invalid_argument);
}

TEST_CASE("activation table") {
  Tensor x = Tensor::from_vector({1, 1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
  Tensor r = activation(x, Act::relu, 0.0f, nullptr);
  REQUIRE(r.data()[0] == 0.0f);
  REQUIRE(r.data()[1] == 0.0f);
  REQUIRE(r.data()[2] == 2.0f);
  Tensor l = activation(x, Act::leaky_relu, 0.2f, nullptr);
  REQUIRE(l.data()[0] == Catch::Approx(-0.2f));
  REQUIRE(l.data()[2] == 2.0f);
  Tensor t = activation(x, Act::tanh, 0.0f, nullptr);
  REQUIRE(t.data()[1] == 0.0f);
  REQUIRE(t.data()[2] == Catch::Approx(std::tanh(2.0f)));
  Tensor s = activation(x, Act::sigmoid, 0.0f, nullptr);
  REQUIRE(s.data()[1] == 0.5f);
  Tensor sat = activation(Tensor::from_vector({1, 1, 1, 1, 2}, {20.0f, -20.0f}), Act::tanh, 0.0f, nullptr);
  REQUIRE(sat.data()[0] == Catch::Approx(1.0f).margin(1e-6));
  REQUIRE(sat.data()[1] == Catch::Approx(-1.0f).margin(1e-6));
}

TEST_CASE("instance_norm3d normalizes per sample and channel") {
  Tensor x = random_tensor({2, 3, 4, 4, 2}, 42, 3.0f);
  // shift channels so means differ
  for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] += static_cast<float>(i % 3);
  Tensor gamma = Tensor::full({3}, 1.0f);
  Tensor beta = Tensor::zeros({3});
  Tensor y = instance_norm3d(x, gamma, beta, 1e-5f, nullptr);
  const std::int64_t M = 4 * 4 * 2;
  for (int nc = 0; nc < 6; ++nc) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t i = 0; i < M; ++i) mean += y.data()[nc * M + i];
    mean /= M;
    for (std::int64_t i = 0; i < M; ++i) {
      const double d = y.data()[nc * M + i] - mean;
      var += d * d;
    }
    var /= M;
    REQUIRE(std::fabs(mean) < 1e-5);
    REQUIRE(std::fabs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("instance_norm3d affine and guards") {
  Tensor x = Tensor::full({1, 1, 2, 2, 2}, 5.0f);  // constant block
  Tensor gamma = Tensor::full({1}, 2.0f);
  Tensor beta = Tensor::full({1}, 3.0f);
  Tensor y = instance_norm3d(x, gamma, beta, 1e-5f, nullptr);
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 3.0f);
  REQUIRE_THROWS_AS(instance_norm3d(x, gamma, beta, 0.0f, nullptr), std::invalid_argument);
  Tensor tiny = Tensor::full({1, 1, 1, 1, 1}, 1.0f);
  REQUIRE_THROWS_AS(instance_norm3d(tiny, gamma, beta, 1e-5f, nullptr), std::invalid_argument);
}

TEST_CASE("concat_channels layout") {
  Tensor a = Tensor::full({2, 1, 1, 1, 2}, 1.0f);
  Tensor b = Tensor::full({2, 2, 1, 1, 2}, 2.0f);
  Tensor y = concat_channels(a, b, nullptr);
  REQUIRE(y.shape() == Shape{2, 3, 1, 1, 2});
  const float expect[12] = {1, 1, 2, 2, 2, 2, 1, 1, 2, 2, 2, 2};
  for (int i = 0; i < 12; ++i) REQUIRE(y.data()[i] == expect[i]);
}

TEST_CASE("bce_with_logits_mean at zero logits is ln 2") {
  Tensor z = Tensor::zeros({1, 1, 1, 2, 2});
  REQUIRE(bce_with_logits_mean(z, 1.0f, nullptr).item() == Catch::Approx(std::log(2.0)).epsilon(1e-6));
  REQUIRE(bce_with_logits_mean(z, 0.0f, nullptr).item() == Catch::Approx(std::log(2.0)).epsilon(1e-6));
  Tensor bad = Tensor::from_vector({2}, {1.0f, std::numeric_limits<float>::infinity()});
  REQUIRE_THROWS_AS(bce_with_logits_mean(bad, 1.0f, nullptr), std::runtime_error);
}

TEST_CASE("reductions") {
  Tensor x = Tensor::from_vector({4}, {1.0f, 2.0f, 3.0f, 4.0f});
  REQUIRE(sum(x, nullptr).item() == 10.0f);
  REQUIRE(mean(x, nullptr).item() == 2.5f);
  Tensor y = Tensor::from_vector({4}, {2.0f, 2.0f, 2.0f, 8.0f});
  REQUIRE(mean_abs_diff(x, y, nullptr).item() == Catch::Approx((1 + 0 + 1 + 4) / 4.0));
}

TEST_CASE("ops are bit-deterministic across reruns") {
  Tensor x = random_tensor({1, 2, 6, 6, 6}, 77);
  Tensor w = random_tensor({3, 2, 3, 3, 3}, 78);
  Tensor y1 = conv3d(x, w, nullptr, {2, 2, 2}, {1, 1, 1}, nullptr);
  Tensor y2 = conv3d(x, w, nullptr, {2, 2, 2}, {1, 1, 1}, nullptr);
  REQUIRE(std::memcmp(y1.data(), y2.data(), sizeof(float) * y1.numel()) == 0);
  Tensor u1 = upsample_trilinear(x, 2, nullptr);
  Tensor u2 = upsample_trilinear(x, 2, nullptr);
  REQUIRE(std::memcmp(u1.data(), u2.data(), sizeof(float) * u1.numel()) == 0);
}
