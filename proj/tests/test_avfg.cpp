#include "camvr/avfg.hpp"
#include "camvr/gradcheck.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace camvr;
using namespace camvr::avfg;

namespace {

ModelDims small(std::size_t hidden, std::size_t dm) {
  ModelDims d;
  d.c_hidden = hidden;
  d.d_mem = dm;
  d.grid_h = d.grid_w = 4;
  return d;
}

AvfgParams zeroed(AvfgParams p) {
  p.for_each([](const std::string &, Tensor &t) {
    for (auto &v : t.data())
      v = 0.0;
  });
  return p;
}

} // namespace

TEST_CASE("pool_context") {
  CHECK(pool_context(Tensor::row({1, 2, 3})) == Tensor::row({1, 2, 3}));
  CHECK(pool_context(Tensor::matrix({{1, 3}, {3, 1}})) == Tensor::row({2, 2}));
  std::mt19937_64 rng(1);
  const Tensor c = oracle::random({5, 4}, rng);
  const Tensor p = pool_context(c);
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
      s += c.at(i, j);
    CHECK(p[j] == doctest::Approx(s / 5.0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(pool_context(Tensor()), ContractError);
}

TEST_CASE("resolutions") {
  CHECK(resolution_for(Granularity::global, 6, 6) == Resolution{1, 1});
  CHECK(resolution_for(Granularity::coarse, 6, 6) == Resolution{3, 3});
  CHECK(resolution_for(Granularity::native, 6, 6) == Resolution{6, 6});
  CHECK_THROWS_AS(resolution_for(Granularity::coarse, 5, 6), ConfigError);
  std::mt19937_64 rng(2);
  auto p = init_params(small(2, 3), Granularity::native, rng);
  const Tensor v = oracle::random({4, 4, 8}, rng), c = oracle::random({1, 3}, rng);
  CHECK_THROWS_AS(gen_attention_map(v, c, p, {3, 3}), ConfigError);
  CHECK_THROWS_AS(gen_attention_map(v, c, p, {2, 4}), ConfigError);
  CHECK_THROWS_AS(gen_attention_map(v, c, p, {0, 0}), ConfigError);
}

TEST_CASE("attention map examples") {
  std::mt19937_64 rng(3);
  auto p = zeroed(init_params(small(2, 3), Granularity::native, rng));
  const Tensor v = oracle::random({4, 4, 8}, rng), c = oracle::random({1, 3}, rng);
  auto m = gen_attention_map(v, c, p, {4, 4});
  CHECK(m.A == Tensor({4, 4, 1}, 0.5));
  const Tensor half = modulate(v, m);
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(half[i] == 0.5 * v[i]);

  // spatially constant input gives a constant map on interior cells
  auto q = init_params(small(2, 3), Granularity::native, rng);
  Tensor flat({6, 6, 8});
  const Tensor cell = oracle::random({1, 8}, rng);
  for (std::size_t i = 0; i < 36; ++i)
    for (std::size_t k = 0; k < 8; ++k)
      flat[i * 8 + k] = cell[k];
  auto mc = gen_attention_map(flat, c, q, {6, 6});
  const double centre = mc.A[2 * 6 + 2];
  for (std::size_t r = 2; r < 4; ++r)
    for (std::size_t col = 2; col < 4; ++col)
      CHECK(mc.A[r * 6 + col] == doctest::Approx(centre).epsilon(1e-14));
}

TEST_CASE("attention map against conv and sigmoid oracle") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = init_params(small(2, 3), Granularity::native, rng);
    for (auto *t : {&p.conv1_k, &p.conv2_k})
      for (auto &v : t->data())
        v = double(int(rng() % 5) - 2);
    p.conv1_b = Tensor::row({0.5, -1.0});
    p.conv2_b = Tensor::scalar(0.25);
    const Tensor v = oracle::random({4, 4, 8}, rng), c = oracle::random({1, 3}, rng);
    Tensor in({4, 4, 11});
    for (std::size_t i = 0; i < 16; ++i) {
      for (std::size_t k = 0; k < 8; ++k)
        in[i * 11 + k] = v[i * 8 + k];
      for (std::size_t k = 0; k < 3; ++k)
        in[i * 11 + 8 + k] = c[k];
    }
    Tensor h = oracle::conv2d(in, p.conv1_k);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t k = 0; k < 2; ++k)
        h[i * 2 + k] = std::tanh(h[i * 2 + k] + p.conv1_b[k]);
    const Tensor o = oracle::conv2d(h, p.conv2_k);
    auto m = gen_attention_map(v, c, p, {4, 4});
    for (std::size_t i = 0; i < 16; ++i) {
      REQUIRE(std::abs(m.A[i] - oracle::sigmoid(o[i] + 0.25)) <= 1e-15);
      REQUIRE(m.A[i] > 0.0);
      REQUIRE(m.A[i] < 1.0);
    }
  }
}

TEST_CASE("coarse maps are upsampled by nearest neighbour") {
  std::mt19937_64 rng(5);
  auto p = init_params(small(3, 2), Granularity::coarse, rng);
  const Tensor v = oracle::random({4, 4, 8}, rng), c = oracle::random({1, 2}, rng);
  auto m = gen_attention_map(v, c, p, {2, 2});
  CHECK(m.A.shape() == Shape{2, 2, 1});
  CHECK(m.upsampled.shape() == Shape{4, 4, 1});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t col = 0; col < 4; ++col)
      CHECK(m.upsampled[r * 4 + col] == m.A[(r / 2) * 2 + col / 2]);
  CHECK_THROWS_AS(modulate(v, m.A), DimensionError);
}

TEST_CASE("modulate properties") {
  std::mt19937_64 rng(6);
  const Tensor X = oracle::random({3, 3, 4}, rng), Y = oracle::random({3, 3, 4}, rng);
  CHECK(modulate(X, Tensor({3, 3, 1}, 1.0)) == X);
  CHECK(modulate(X, Tensor({3, 3, 1}, 0.0)) == Tensor({3, 3, 4}, 0.0));
  const Tensor A = oracle::random({3, 3, 1}, rng, 0.01, 0.99);
  const Tensor mx = modulate(X, A), my = modulate(Y, A);
  Tensor comb({3, 3, 4});
  for (std::size_t i = 0; i < comb.size(); ++i)
    comb[i] = 2.0 * X[i] - 0.5 * Y[i];
  const Tensor mc = modulate(comb, A);
  double nx = 0.0, nm = 0.0;
  for (std::size_t i = 0; i < comb.size(); ++i) {
    CHECK(mc[i] == doctest::Approx(2.0 * mx[i] - 0.5 * my[i]).epsilon(1e-14));
    CHECK(std::abs(mx[i]) <= std::abs(X[i]));
    nx += X[i] * X[i];
    nm += mx[i] * mx[i];
  }
  CHECK(nm <= nx);
}

TEST_CASE("global weighting") {
  std::mt19937_64 rng(7);
  auto p = init_params(small(2, 3), Granularity::global, rng);
  CHECK(p.conv1_k.empty());
  const Tensor v = oracle::random({4, 4, 8}, rng), c = oracle::random({1, 3}, rng);
  const Tensor z = global_weighting(v, c, zeroed(p));
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(z[i] == 0.5 * v[i]);
  CHECK(global_weighting(v, c, p) == global_weighting(v, c, p));

  double logit = p.global_b[0];
  for (std::size_t k = 0; k < 3; ++k)
    logit += c[k] * p.global_w[k];
  for (std::size_t k = 0; k < 8; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 16; ++i)
      mean += v[i * 8 + k];
    logit += mean / 16.0 * p.global_w[3 + k];
  }
  const double s = oracle::sigmoid(logit);
  const Tensor g = global_weighting(v, c, p);
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(g[i] == doctest::Approx(s * v[i]).epsilon(1e-13));
}

TEST_CASE("pool, map and modulate pass gradcheck") {
  for (auto g : {Granularity::native, Granularity::coarse}) {
    std::mt19937_64 rng(8);
    auto p = init_params(small(2, 3), g, rng);
    const Tensor R = oracle::random({4, 4, 8}, rng);
    const auto res = resolution_for(g, 4, 4);
    auto f = [&](Tape &t, const std::vector<Var> &v) {
      AvfgWeights<Var> w;
      w.conv1_k = v[0];
      w.conv1_b = v[1];
      w.conv2_k = v[2];
      w.conv2_b = v[3];
      auto m = gen_attention_map(v[4], pool_context(v[5]), w, res);
      return ops::sum(ops::mul(modulate(v[4], m.upsampled), t.constant(R)));
    };
    auto rep = gradcheck(f, {p.conv1_k, p.conv1_b, p.conv2_k, p.conv2_b,
                             oracle::random({4, 4, 8}, rng), oracle::random({3, 3}, rng)});
    CHECK(rep.max_rel_error < 1e-4);
  }
}
