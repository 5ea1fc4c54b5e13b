#include "camvr/gradcheck.hpp"
#include "camvr/integrator.hpp"
#include "camvr/ops.hpp"
#include "camvr/train.hpp"
#include "camvr/weights.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace camvr;

namespace {

ModelConfig tiny(bool vcmu = true, bool avfg = true) {
  ModelConfig c;
  c.dims.n_slots = 3;
  c.dims.d_mem = c.dims.d_enc = c.dims.d_vis = c.dims.d_txt = 6;
  c.dims.d_dec = 8;
  c.dims.c_hidden = 3;
  c.flags.use_vcmu = vcmu;
  c.flags.use_avfg = avfg;
  return complete_config(c);
}

task::Episode episode(std::uint64_t seed) { return task::gen_episode(task::TaskConfig{}, seed); }

oracle::Mat add_row(oracle::Mat m, const Tensor &b) {
  for (auto &r : m)
    for (std::size_t j = 0; j < r.size(); ++j)
      r[j] += b[j];
  return m;
}

// Attention block, tanh feed-forward, mean pool, head; written from the math.
std::vector<double> decode_oracle(const Tensor &x, const DecoderWeights<Tensor> &w) {
  using namespace oracle;
  const Mat X = to_mat(x);
  const Mat q = matmul(X, to_mat(w.wq)), k = matmul(X, to_mat(w.wk)), v = matmul(X, to_mat(w.wv));
  Mat s = matmul(q, transpose(k));
  const double scale = 1.0 / std::sqrt(double(X[0].size()));
  for (auto &r : s)
    for (auto &e : r)
      e *= scale;
  const Mat att = matmul(matmul(softmax_rows(s), v), to_mat(w.wo));
  Mat h = X;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h[0].size(); ++j)
      h[i][j] += att[i][j];
  Mat f = add_row(matmul(h, to_mat(w.ff_w1)), w.ff_b1);
  for (auto &r : f)
    for (auto &e : r)
      e = std::tanh(e);
  const Mat f2 = add_row(matmul(f, to_mat(w.ff_w2)), w.ff_b2);
  Mat pooled(1, std::vector<double>(h[0].size(), 0.0));
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h[0].size(); ++j)
      pooled[0][j] += (h[i][j] + f2[i][j]) / double(h.size());
  return add_row(matmul(pooled, to_mat(w.head_w)), w.head_b)[0];
}

} // namespace

TEST_CASE("streams and decoder input") {
  for (bool vcmu : {false, true}) {
    auto p = init_model(tiny(vcmu), 1);
    Tape tape;
    auto w = bind<ModelWeights>(tape, p.weights);
    std::mt19937_64 rng(1);
    Var grid = tape.constant(oracle::random({6, 6, 8}, rng));
    Var tokens = tape.constant(oracle::random({4, 6}, rng));
    Var ctx = vcmu ? tape.constant(oracle::random({4, 6}, rng)) : Var();
    auto s = project_streams(grid, tokens, ctx, w.proj);
    auto in = build_decoder_input(s);
    CHECK(in.visual_rows == 36);
    CHECK(in.text_rows == 4);
    CHECK(in.has_context == vcmu);
    CHECK(in.context_rows == (vcmu ? 4u : 0u));
    CHECK(in.rows.value().rows() == (vcmu ? 44u : 40u));
    CHECK(in.rows.value().cols() == 8);

    // visual rows carry the per-cell bias
    const Tensor &g = grid.value();
    for (std::size_t c = 0; c < 36; ++c)
      for (std::size_t j = 0; j < 8; ++j) {
        double e = p.weights.proj.cell_bias.at(c, j);
        for (std::size_t k = 0; k < 8; ++k)
          e += g[c * 8 + k] * p.weights.proj.v.at(k, j);
        CHECK(in.rows.value().at(c, j) == doctest::Approx(e).epsilon(1e-13));
      }
    CHECK_THROWS_AS(project_streams(tokens, tokens, ctx, w.proj), DimensionError);
  }
}

TEST_CASE("decoder against oracle") {
  std::mt19937_64 rng(2);
  auto p = init_model(tiny(), 2);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = oracle::random({7, 8}, rng);
    Tape tape;
    auto w = bind<DecoderWeights>(tape, p.weights.decoder);
    auto d = decode(tape.constant(x), w);
    const auto ref = decode_oracle(x, p.weights.decoder);
    REQUIRE(d.logits.value().size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
      REQUIRE(std::abs(d.logits.value()[i] - ref[i]) <= 1e-12);
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c)
        s += d.attention.value().at(r, c);
      REQUIRE(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("decoder examples") {
  auto p = init_model(tiny(), 3);
  p.weights.decoder.for_each([](const std::string &, Tensor &t) {
    for (auto &v : t.data())
      v = 0.0;
  });
  std::mt19937_64 rng(3);
  Tape tape;
  auto w = bind<DecoderWeights>(tape, p.weights.decoder);
  auto d = decode(tape.constant(oracle::random({5, 8}, rng)), w);
  const std::size_t V = p.config.dims.answer_vocab;
  CHECK(d.logits.value() == Tensor({1, V}, 0.0));
  CHECK(turn_loss(d.logits.value(), 0) == doctest::Approx(std::log(double(V))).epsilon(1e-14));
  for (std::size_t r = 0; r < 5; ++r)
    CHECK(d.attention.value().at(r, 2) == doctest::Approx(0.2).epsilon(1e-15));

  // duplicating every row leaves mean-pooled logits unchanged
  auto q = init_model(tiny(), 4);
  const Tensor x = oracle::random({3, 8}, rng);
  Tensor xx({6, 8});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      xx.at(r, c) = x.at(r % 3, c);
  Tape t2;
  auto w2 = bind<DecoderWeights>(t2, q.weights.decoder);
  const Tensor a = decode(t2.constant(x), w2).logits.value();
  const Tensor b = decode(t2.constant(xx), w2).logits.value();
  CHECK(max_abs_diff(a, b) <= 1e-13);
  CHECK_THROWS_AS(decode(t2.constant(oracle::random({2, 2, 8}, rng)), w2), DimensionError);
}

TEST_CASE("predict ties go to the lowest id") {
  CHECK(predict(Tensor::row({0.1, 0.5, 0.5, 0.2})) == 1);
  CHECK(predict(Tensor::row({1, 1, 1})) == 0);
  CHECK(predict(Tensor::row({-3, -1, -2})) == 1);
}

TEST_CASE("value-level forward turn") {
  for (bool vcmu : {false, true})
    for (bool av : {false, true}) {
      auto p = init_model(tiny(vcmu, av), 5);
      const auto ep = episode(11);
      auto m = init_memory(p);
      CHECK(m.M.shape() == Shape{3, 6});
      for (const auto &turn : ep.turns) {
        auto r = forward_turn(turn, m, p);
        auto again = forward_turn(turn, m, p);
        CHECK(r.logits == again.logits);
        CHECK(r.logits.shape() == Shape{1, p.config.dims.answer_vocab});
        CHECK(r.context.shape() == Shape{turn.query_tokens.size(), 6});
        CHECK(r.retrieved.has_value() == vcmu);
        CHECK(r.map.has_value() == av);
        CHECK(r.memory.turn_index == turn.turn);
        if (!vcmu) {
          CHECK(r.memory.M == m.M);
          CHECK(r.context == Tensor::zeros({turn.query_tokens.size(), 6}));
        }
        if (!av)
          CHECK(r.modulated == turn.visual);
        CHECK_THROWS_AS(forward_turn(turn, r.memory, p), ContractError);
        m = r.memory;
      }
    }
}

TEST_CASE("forward turn input checks") {
  auto p = init_model(tiny(), 6);
  auto turn = episode(12).turns[0];
  auto bad = turn;
  bad.visual = Tensor({5, 6, 8});
  CHECK_THROWS_AS(forward_turn(bad, init_memory(p), p), DimensionError);
  bad = turn;
  bad.query_tokens.clear();
  CHECK_THROWS_AS(forward_turn(bad, init_memory(p), p), ContractError);
}

TEST_CASE("gradients flow back through memory to earlier turns") {
  auto p = init_model(tiny(), 7);
  const auto ep = episode(13);
  Tape tape;
  auto w = bind<ModelWeights>(tape, p.weights);
  auto tr = run_episode(tape, p.config, w, ep);
  // loss on turn 2 only, gradient w.r.t. turn-1 memory
  Var loss2 = turn_loss(tr.turns[1].logits, ep.turns[1].target_answer_id);
  tape.backward(loss2);
  const Tensor g = tape.grad(tr.turns[0].memory);
  double n = 0.0;
  for (double v : g.data())
    n += std::abs(v);
  CHECK(n > 0.0);
  CHECK(tape.grad(w.vcmu.encoder.fuse_w).all_finite());
  double ne = 0.0;
  for (double v : tape.grad(w.vcmu.encoder.fuse_w).data())
    ne += std::abs(v);
  CHECK(ne > 0.0);

  // and nothing reaches the first turn's logits from the second turn's loss
  CHECK(tape.grad(tr.turns[0].logits) == Tensor::zeros(tr.turns[0].logits.shape()));
}

TEST_CASE("episode gradients match finite differences") {
  auto p = init_model(tiny(), 8);
  const auto ep = episode(14);
  Gradients g;
  const double loss = episode_gradients(p, ep, g);
  CHECK(std::isfinite(loss));
  auto blocks = p.blocks();
  REQUIRE(g.size() == blocks.size());
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = rng() % blocks[b]->size();
      const double orig = (*blocks[b])[i];
      Gradients dummy;
      (*blocks[b])[i] = orig + 1e-5;
      const double up = episode_gradients(p, ep, dummy);
      (*blocks[b])[i] = orig - 1e-5;
      const double down = episode_gradients(p, ep, dummy);
      (*blocks[b])[i] = orig;
      worst = std::max(worst, relative_error(g[b][i], (up - down) / 2e-5));
    }
  CHECK(worst < 1e-4);
}

TEST_CASE("training") {
  const auto ep = episode(15);
  SUBCASE("zero learning rate leaves parameters unchanged") {
    auto p = init_model(tiny(), 9);
    const auto before = p.weights;
    TrainConfig tc;
    tc.steps = 5;
    tc.batch_size = 2;
    tc.learning_rate = 0.0;
    train({ep, episode(16)}, p, tc);
    p.weights.for_each([&](const std::string &n, const Tensor &t) {
      before.for_each([&](const std::string &m, const Tensor &u) {
        if (n == m)
          CHECK(t == u);
      });
    });
  }
  SUBCASE("a single episode is memorised") {
    auto p = init_model(tiny(), 10);
    TrainConfig tc;
    tc.steps = 500;
    tc.batch_size = 1;
    tc.learning_rate = 1e-2;
    auto r = train({ep}, p, tc);
    CHECK(r.loss_curve.size() == 500);
    CHECK(r.loss_curve.back() < 0.1);
    CHECK(r.loss_curve.back() < r.loss_curve.front());
  }
  SUBCASE("training is deterministic") {
    auto a = init_model(tiny(), 11), b = init_model(tiny(), 11);
    TrainConfig tc;
    tc.steps = 10;
    tc.batch_size = 3;
    std::vector<task::Episode> eps{ep, episode(17), episode(18), episode(19)};
    auto ra = train(eps, a, tc);
    auto rb = train(eps, b, tc);
    CHECK(ra.loss_curve == rb.loss_curve);
    auto ba = a.blocks();
    auto bb = b.blocks();
    for (std::size_t i = 0; i < ba.size(); ++i)
      CHECK(*ba[i] == *bb[i]);
  }
}

TEST_CASE("parameter accounting") {
  for (bool vcmu : {false, true})
    for (bool av : {false, true})
      for (auto g : {Granularity::global, Granularity::coarse, Granularity::native})
        for (auto mi : {MemoryInit::zeros, MemoryInit::learnable})
          for (std::size_t slots : {1u, 4u, 16u})
            for (std::size_t dm : {8u, 32u}) {
              ModelConfig c;
              c.dims.n_slots = slots;
              c.dims.d_mem = dm;
              c.flags = {vcmu, av, g, mi};
              auto p = init_model(c, 1);
              std::size_t total = 0;
              for (const auto &row : parameter_accounting(p)) {
                CHECK(row.formula == row.tally);
                total += row.tally;
              }
              CHECK(total == count_parameters<ModelWeights>(p.weights));
            }
  ModelConfig c;
  auto p = init_model(c, 1);
  for (const auto &row : parameter_accounting(p)) {
    if (row.component == "vcmu.gate")
      CHECK(row.tally == 4160);
    if (row.component == "vcmu.retrieval")
      CHECK(row.tally == 3072);
  }
  CHECK_THROWS_AS(formula_count(c, "bogus"), ContractError);
}
