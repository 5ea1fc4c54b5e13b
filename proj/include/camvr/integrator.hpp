#pragma once

// Multi-stream integration and the per-turn pipeline:
//   encode -> memory update -> retrieval -> spatial focus -> project -> decode.

#include "camvr/avfg.hpp"
#include "camvr/config.hpp"
#include "camvr/taskgen.hpp"
#include "camvr/vcmu.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace camvr {

template <class T> struct EmbeddingWeights {
  T tokens; // query_vocab x D_t

  template <class S, class F> static void visit_fields(S &s, F &f) { f("tokens", s.tokens); }
  template <class F> void for_each(F &&f) { visit_fields(*this, f); }
  template <class F> void for_each(F &&f) const { visit_fields(*this, f); }
};

template <class T> struct ProjectionWeights {
  T v;         // D_raw x D_dec
  T cell_bias; // (H*W) x D_dec, per-cell bias of the visual projection
  T t;         // D_t x D_dec
  T c;         // D_m x D_dec, only with the memory unit

  template <class S, class F> static void visit_fields(S &s, F &f) {
    f("v", s.v);
    f("cell_bias", s.cell_bias);
    f("t", s.t);
    f("c", s.c);
  }
  template <class F> void for_each(F &&f) { visit_fields(*this, f); }
  template <class F> void for_each(F &&f) const { visit_fields(*this, f); }
};

// Single-head self-attention block with residuals, a two-layer tanh
// feed-forward, mean pooling and a linear answer head.
template <class T> struct DecoderWeights {
  T wq, wk, wv, wo;       // D_dec x D_dec
  T ff_w1, ff_b1;         // D_dec x D_ff, 1 x D_ff
  T ff_w2, ff_b2;         // D_ff x D_dec, 1 x D_dec
  T head_w, head_b;       // D_dec x |answers|, 1 x |answers|

  template <class S, class F> static void visit_fields(S &s, F &f) {
    f("attn.wq", s.wq);
    f("attn.wk", s.wk);
    f("attn.wv", s.wv);
    f("attn.wo", s.wo);
    f("ffn.w1", s.ff_w1);
    f("ffn.b1", s.ff_b1);
    f("ffn.w2", s.ff_w2);
    f("ffn.b2", s.ff_b2);
    f("head.w", s.head_w);
    f("head.b", s.head_b);
  }
  template <class F> void for_each(F &&f) { visit_fields(*this, f); }
  template <class F> void for_each(F &&f) const { visit_fields(*this, f); }
};

template <class T> struct ModelWeights {
  EmbeddingWeights<T> embed;
  vcmu::VcmuWeights<T> vcmu;
  avfg::AvfgWeights<T> avfg;
  ProjectionWeights<T> proj;
  DecoderWeights<T> decoder;

  template <class S, class F> static void visit_fields(S &s, F &f) {
    s.embed.for_each([&](const std::string &n, auto &v) { f("embed." + n, v); });
    s.vcmu.for_each([&](const std::string &n, auto &v) { f("vcmu." + n, v); });
    s.avfg.for_each([&](const std::string &n, auto &v) { f("avfg." + n, v); });
    s.proj.for_each([&](const std::string &n, auto &v) { f("proj." + n, v); });
    s.decoder.for_each([&](const std::string &n, auto &v) { f("decoder." + n, v); });
  }
  template <class F> void for_each(F &&f) { visit_fields(*this, f); }
  template <class F> void for_each(F &&f) const { visit_fields(*this, f); }
};

struct ModelParams {
  ModelConfig config;
  ModelWeights<Tensor> weights;

  // Enabled parameter blocks in canonical order.
  std::vector<std::string> block_names() const;
  std::vector<Tensor *> blocks();
  std::vector<const Tensor *> blocks() const;
};

// Fills query_vocab / answer_vocab from the grid when unset.
ModelConfig complete_config(ModelConfig config);
ModelParams init_model(const ModelConfig &config, std::uint64_t seed);

// ---------------------------------------------------------------- accounting

struct ComponentCount {
  std::string component;
  std::size_t formula = 0; // closed form from dimensions
  std::size_t tally = 0;   // summed tensor sizes
};

// Components: embed, vcmu.encoder, vcmu.gate, vcmu.retrieval, vcmu.memory,
// avfg, proj, decoder. Disabled components report zero.
std::vector<ComponentCount> parameter_accounting(const ModelParams &params);
std::size_t formula_count(const ModelConfig &config, const std::string &component);
const std::vector<std::string> &component_names();

// ---------------------------------------------------------------- streams

struct Streams {
  Var visual;  // (H*W) x D_dec
  Var text;    // N_t x D_dec
  Var context; // N_t x D_dec, invalid without memory
};

Streams project_streams(const Var &modulated, const Var &tokens, const Var &context,
                        const ProjectionWeights<Var> &w);

struct DecoderInput {
  Var rows; // visual rows, then text rows, then context rows
  std::size_t visual_rows = 0, text_rows = 0, context_rows = 0;
  bool has_context = false;
};

DecoderInput build_decoder_input(const Streams &streams);

struct DecoderTrace {
  Var logits;    // 1 x |answers|
  Var attention; // rows x rows
};

DecoderTrace decode(const Var &input, const DecoderWeights<Var> &w);

Var turn_loss(const Var &logits, std::size_t target);
double turn_loss(const Tensor &logits, std::size_t target);

// Argmax, ties to the lowest id.
std::size_t predict(const Tensor &logits);

// ---------------------------------------------------------------- pipeline

struct TurnTrace {
  Var tokens;     // T, N_t x D_t
  Var memory;     // memory after this turn
  Var context;    // C, invalid without memory
  Var retrieval_attention;
  Var map;        // H' x W' x 1, invalid without focus guidance
  Var map_full;   // H x W x 1
  Var visual;     // V_raw
  Var modulated;  // V_mod
  Var decoder_attention;
  Var logits;
  avfg::Resolution resolution;
};

Var initial_memory(Tape &tape, const ModelConfig &config, const ModelWeights<Var> &w);

TurnTrace forward_turn(Tape &tape, const ModelConfig &config, const ModelWeights<Var> &w,
                       const task::TurnInput &turn, const Var &memory);

struct EpisodeTrace {
  std::vector<TurnTrace> turns;
  Var loss; // summed per-turn cross-entropy
};

EpisodeTrace run_episode(Tape &tape, const ModelConfig &config, const ModelWeights<Var> &w,
                         const task::Episode &episode);

struct TurnResult {
  Tensor logits;
  vcmu::MemoryState memory;
  std::optional<avfg::AttentionMap> map;
  std::optional<vcmu::RetrievedContext> retrieved;
  Tensor context;   // N_t x D_m, zeros without memory
  Tensor modulated; // H x W x D_raw
};

// Requires memory.turn_index == turn.turn - 1.
TurnResult forward_turn(const task::TurnInput &turn, const vcmu::MemoryState &memory,
                        const ModelParams &params);

vcmu::MemoryState init_memory(const ModelParams &params);

} // namespace camvr
