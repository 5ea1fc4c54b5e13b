#include "camvr/integrator.hpp"

#include "camvr/init.hpp"

#include <cmath>

namespace camvr {

// ---------------------------------------------------------------- params

std::vector<std::string> ModelParams::block_names() const {
  std::vector<std::string> names;
  weights.for_each([&](const std::string &n, const Tensor &t) {
    if (!t.empty())
      names.push_back(n);
  });
  return names;
}

std::vector<Tensor *> ModelParams::blocks() {
  std::vector<Tensor *> out;
  weights.for_each([&](const std::string &, Tensor &t) {
    if (!t.empty())
      out.push_back(&t);
  });
  return out;
}

std::vector<const Tensor *> ModelParams::blocks() const {
  std::vector<const Tensor *> out;
  weights.for_each([&](const std::string &, const Tensor &t) {
    if (!t.empty())
      out.push_back(&t);
  });
  return out;
}

ModelConfig complete_config(ModelConfig config) {
  if (config.dims.query_vocab == 0)
    config.dims.query_vocab = task::query_vocabulary().size();
  if (config.dims.answer_vocab == 0)
    config.dims.answer_vocab = task::AnswerVocab(config.dims.grid_h, config.dims.grid_w).size();
  return config;
}

ModelParams init_model(const ModelConfig &cfg_in, std::uint64_t seed) {
  ModelParams p;
  p.config = complete_config(cfg_in);
  p.config.validate();
  const auto &d = p.config.dims;
  const auto &f = p.config.flags;
  std::mt19937_64 rng(seed);

  p.weights.embed.tokens = uniform({d.query_vocab, d.d_txt}, 1.0, rng);
  if (f.use_vcmu)
    p.weights.vcmu = vcmu::init_params(d, f.memory_init, rng);
  if (f.use_avfg)
    p.weights.avfg = avfg::init_params(d, f.granularity, rng);

  auto &pr = p.weights.proj;
  pr.v = glorot(d.d_raw, d.d_dec, rng);
  pr.cell_bias = uniform({d.cells(), d.d_dec}, 1.0, rng);
  pr.t = glorot(d.d_txt, d.d_dec, rng);
  if (f.use_vcmu)
    pr.c = glorot(d.d_mem, d.d_dec, rng);

  auto &dec = p.weights.decoder;
  dec.wq = glorot(d.d_dec, d.d_dec, rng);
  dec.wk = glorot(d.d_dec, d.d_dec, rng);
  dec.wv = glorot(d.d_dec, d.d_dec, rng);
  dec.wo = glorot(d.d_dec, d.d_dec, rng);
  dec.ff_w1 = glorot(d.d_dec, d.d_ff(), rng);
  dec.ff_b1 = Tensor::zeros({1, d.d_ff()});
  dec.ff_w2 = glorot(d.d_ff(), d.d_dec, rng);
  dec.ff_b2 = Tensor::zeros({1, d.d_dec});
  dec.head_w = glorot(d.d_dec, d.answer_vocab, rng);
  dec.head_b = Tensor::zeros({1, d.answer_vocab});
  return p;
}

// ---------------------------------------------------------------- accounting

const std::vector<std::string> &component_names() {
  static const std::vector<std::string> names = {
      "embed", "vcmu.encoder", "vcmu.gate", "vcmu.retrieval", "vcmu.memory",
      "avfg",  "proj",         "decoder"};
  return names;
}

std::size_t formula_count(const ModelConfig &cfg, const std::string &component) {
  const auto &d = cfg.dims;
  const auto &f = cfg.flags;
  const std::size_t De = d.d_enc, Dm = d.d_mem, Dt = d.d_txt, Dv = d.d_vis, Dr = d.d_raw;
  const std::size_t D = d.d_dec, F = d.d_ff(), V = d.answer_vocab;
  if (component == "embed")
    return d.query_vocab * Dt;
  if (component == "vcmu.encoder")
    return f.use_vcmu ? Dr * Dv + (Dv * De + De) + (Dt * De + De) + (2 * De * De + De) : 0;
  if (component == "vcmu.gate")
    return f.use_vcmu ? 2 * ((De + Dm) * Dm + Dm) : 0;
  if (component == "vcmu.retrieval")
    return f.use_vcmu ? Dt * Dm + 2 * Dm * Dm : 0;
  if (component == "vcmu.memory")
    return f.use_vcmu && f.memory_init == MemoryInit::learnable ? d.n_slots * Dm : 0;
  if (component == "avfg") {
    if (!f.use_avfg)
      return 0;
    if (f.granularity == Granularity::global)
      return Dm + Dr + 1;
    return 9 * (Dr + Dm) * d.c_hidden + d.c_hidden + 9 * d.c_hidden + 1;
  }
  if (component == "proj")
    return Dr * D + d.cells() * D + Dt * D + (f.use_vcmu ? Dm * D : 0);
  if (component == "decoder")
    return 4 * D * D + (D * F + F) + (F * D + D) + (D * V + V);
  throw ContractError("unknown component '" + component + "'");
}

std::vector<ComponentCount> parameter_accounting(const ModelParams &params) {
  std::vector<ComponentCount> out;
  for (const auto &c : component_names())
    out.push_back({c, formula_count(params.config, c), 0});
  params.weights.for_each([&](const std::string &name, const Tensor &t) {
    for (auto &row : out)
      if (name.compare(0, row.component.size() + 1, row.component + ".") == 0)
        row.tally += t.size();
  });
  return out;
}

// ---------------------------------------------------------------- streams

Streams project_streams(const Var &modulated, const Var &tokens, const Var &context,
                        const ProjectionWeights<Var> &w) {
  using namespace ops;
  const Tensor &v = modulated.value();
  if (v.rank() != 3)
    throw DimensionError("project_streams: visual grid must be H x W x D, got " +
                         to_string(v.shape()));
  const std::size_t cells = v.dim(0) * v.dim(1);
  Streams s;
  Var flat = reshape(modulated, {cells, v.dim(2)});
  s.visual = w.cell_bias.valid() ? add(matmul(flat, w.v), w.cell_bias) : matmul(flat, w.v);
  s.text = matmul(tokens, w.t);
  if (context.valid())
    s.context = matmul(context, w.c);
  return s;
}

DecoderInput build_decoder_input(const Streams &s) {
  DecoderInput in;
  in.visual_rows = s.visual.value().rows();
  in.text_rows = s.text.value().rows();
  in.has_context = s.context.valid();
  std::vector<Var> parts{s.visual, s.text};
  if (in.has_context) {
    in.context_rows = s.context.value().rows();
    parts.push_back(s.context);
  }
  in.rows = ops::concat_rows(parts);
  return in;
}

DecoderTrace decode(const Var &x, const DecoderWeights<Var> &w) {
  using namespace ops;
  if (x.value().rank() != 2)
    throw DimensionError("decode: input must be rows x D_dec, got " + to_string(x.shape()));
  const double inv_sqrt_d = 1.0 / std::sqrt(double(x.value().cols()));
  Var q = matmul(x, w.wq);
  Var k = matmul(x, w.wk);
  Var v = matmul(x, w.wv);
  Var attention = softmax_rows(scale(matmul_nt(q, k), inv_sqrt_d));
  Var h = add(x, matmul(matmul(attention, v), w.wo));
  Var ff = add_rows(matmul(tanh(add_rows(matmul(h, w.ff_w1), w.ff_b1)), w.ff_w2), w.ff_b2);
  Var y = add(h, ff);
  Var logits = add(matmul(mean_rows(y), w.head_w), w.head_b);
  return {logits, attention};
}

Var turn_loss(const Var &logits, std::size_t target) { return ops::cross_entropy(logits, target); }

double turn_loss(const Tensor &logits, std::size_t target) {
  Tape tape;
  return turn_loss(tape.constant(logits), target).value()[0];
}

std::size_t predict(const Tensor &logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best])
      best = i;
  return best;
}

// ---------------------------------------------------------------- pipeline

Var initial_memory(Tape &tape, const ModelConfig &cfg, const ModelWeights<Var> &w) {
  if (cfg.flags.use_vcmu && cfg.flags.memory_init == MemoryInit::learnable)
    return w.vcmu.memory0;
  return tape.constant(Tensor::zeros({cfg.dims.n_slots, cfg.dims.d_mem}));
}

TurnTrace forward_turn(Tape &tape, const ModelConfig &cfg, const ModelWeights<Var> &w,
                       const task::TurnInput &turn, const Var &memory) {
  using namespace ops;
  const auto &d = cfg.dims;
  const auto &f = cfg.flags;
  const Tensor &raw = turn.visual;
  if (raw.rank() != 3 || raw.dim(0) != d.grid_h || raw.dim(1) != d.grid_w || raw.dim(2) != d.d_raw)
    throw DimensionError("forward_turn: visual grid " + to_string(raw.shape()) +
                         " does not match the model's " + std::to_string(d.grid_h) + "x" +
                         std::to_string(d.grid_w) + "x" + std::to_string(d.d_raw));
  if (turn.query_tokens.empty())
    throw ContractError("forward_turn: empty query");

  TurnTrace tr;
  tr.visual = tape.constant(raw);
  tr.tokens = gather_rows(w.embed.tokens, turn.query_tokens);

  // memory update precedes retrieval, so C_t reads M_t
  if (f.use_vcmu) {
    Var rows = reshape(tr.visual, {d.cells(), d.d_raw});
    Var encoded = vcmu::encode_context(rows, tr.tokens, w.vcmu.encoder);
    tr.memory = vcmu::gated_update(encoded, memory, w.vcmu.gate).next;
    auto r = vcmu::retrieve(tr.tokens, tr.memory, w.vcmu.retrieval);
    tr.context = r.context;
    tr.retrieval_attention = r.attention;
  } else {
    tr.memory = memory;
  }

  if (f.use_avfg) {
    Var pooled = f.use_vcmu ? avfg::pool_context(tr.context)
                            : tape.constant(Tensor::zeros({1, d.d_mem}));
    tr.resolution = avfg::resolution_for(f.granularity, d.grid_h, d.grid_w);
    if (f.granularity == Granularity::global) {
      auto g = avfg::global_weighting(tr.visual, pooled, w.avfg);
      tr.modulated = g.modulated;
      tr.map = g.weight;
      tr.map_full = g.weight;
    } else {
      auto m = avfg::gen_attention_map(tr.visual, pooled, w.avfg, tr.resolution);
      tr.map = m.map;
      tr.map_full = m.upsampled;
      tr.modulated = avfg::modulate(tr.visual, m.upsampled);
    }
  } else {
    tr.modulated = tr.visual;
  }

  Streams s = project_streams(tr.modulated, tr.tokens, tr.context, w.proj);
  DecoderInput in = build_decoder_input(s);
  auto dec = decode(in.rows, w.decoder);
  tr.logits = dec.logits;
  tr.decoder_attention = dec.attention;
  return tr;
}

EpisodeTrace run_episode(Tape &tape, const ModelConfig &cfg, const ModelWeights<Var> &w,
                         const task::Episode &episode) {
  EpisodeTrace out;
  Var memory = initial_memory(tape, cfg, w);
  std::vector<Var> losses;
  for (const auto &turn : episode.turns) {
    out.turns.push_back(forward_turn(tape, cfg, w, turn, memory));
    memory = out.turns.back().memory;
    losses.push_back(turn_loss(out.turns.back().logits, turn.target_answer_id));
  }
  out.loss = ops::sum(ops::concat_rows(losses));
  return out;
}

vcmu::MemoryState init_memory(const ModelParams &params) {
  const auto &d = params.config.dims;
  return vcmu::init_memory(d.n_slots, d.d_mem,
                           params.config.flags.use_vcmu ? params.config.flags.memory_init
                                                        : MemoryInit::zeros,
                           params.weights.vcmu.memory0);
}

TurnResult forward_turn(const task::TurnInput &turn, const vcmu::MemoryState &memory,
                        const ModelParams &params) {
  if (memory.turn_index + 1 != turn.turn)
    throw ContractError("forward_turn: memory has seen " + std::to_string(memory.turn_index) +
                        " turns but this is turn " + std::to_string(turn.turn));
  Tape tape;
  auto w = bind<ModelWeights>(tape, params.weights);
  auto tr = forward_turn(tape, params.config, w, turn, tape.constant(memory.M));
  TurnResult r;
  r.logits = tr.logits.value();
  r.memory = {tr.memory.value(), memory.turn_index + 1};
  r.modulated = tr.modulated.value();
  if (tr.context.valid()) {
    r.retrieved = vcmu::RetrievedContext{tr.context.value(), tr.retrieval_attention.value()};
    r.context = tr.context.value();
  } else {
    r.context = Tensor::zeros({turn.query_tokens.size(), params.config.dims.d_mem});
  }
  if (tr.map.valid())
    r.map = avfg::AttentionMap{tr.map.value(), tr.resolution, tr.map_full.value()};
  return r;
}

} // namespace camvr
