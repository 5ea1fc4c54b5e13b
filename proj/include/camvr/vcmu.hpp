#pragma once

// Visual-textual context memory: per-turn encoding, gated slot update and
// scaled dot-product retrieval over the memory matrix.

#include "camvr/config.hpp"
#include "camvr/ops.hpp"
#include "camvr/weights.hpp"

#include <random>

namespace camvr::vcmu {

template <class T> struct EncoderWeights {
  T proj_v;  // D_raw x D_v, shared visual projection
  T a_v, b_v; // D_v x D_e, 1 x D_e
  T a_t, b_t; // D_t x D_e, 1 x D_e
  T fuse_w, fuse_b; // 2 D_e x D_e, 1 x D_e

  template <class S, class F> static void visit_fields(S &s, F &f) {
    f("proj_v", s.proj_v);
    f("a_v", s.a_v);
    f("b_v", s.b_v);
    f("a_t", s.a_t);
    f("b_t", s.b_t);
    f("fuse_w", s.fuse_w);
    f("fuse_b", s.fuse_b);
  }
  template <class F> void for_each(F &&f) { visit_fields(*this, f); }
  template <class F> void for_each(F &&f) const { visit_fields(*this, f); }
};

template <class T> struct GateWeights {
  T w_g, b_g; // (D_e + D_m) x D_m, 1 x D_m
  T w_m, b_m;

  template <class S, class F> static void visit_fields(S &s, F &f) {
    f("w_g", s.w_g);
    f("b_g", s.b_g);
    f("w_m", s.w_m);
    f("b_m", s.b_m);
  }
  template <class F> void for_each(F &&f) { visit_fields(*this, f); }
  template <class F> void for_each(F &&f) const { visit_fields(*this, f); }
};

template <class T> struct RetrievalWeights {
  T w_q; // D_t x D_m
  T w_k; // D_m x D_m
  T w_v; // D_m x D_m

  template <class S, class F> static void visit_fields(S &s, F &f) {
    f("w_q", s.w_q);
    f("w_k", s.w_k);
    f("w_v", s.w_v);
  }
  template <class F> void for_each(F &&f) { visit_fields(*this, f); }
  template <class F> void for_each(F &&f) const { visit_fields(*this, f); }
};

template <class T> struct VcmuWeights {
  EncoderWeights<T> encoder;
  GateWeights<T> gate;
  RetrievalWeights<T> retrieval;
  T memory0; // N_m x D_m, learnable initial memory only

  template <class S, class F> static void visit_fields(S &s, F &f) {
    s.encoder.for_each([&](const std::string &n, auto &v) { f("encoder." + n, v); });
    s.gate.for_each([&](const std::string &n, auto &v) { f("gate." + n, v); });
    s.retrieval.for_each([&](const std::string &n, auto &v) { f("retrieval." + n, v); });
    f("memory.m0", s.memory0);
  }
  template <class F> void for_each(F &&f) { visit_fields(*this, f); }
  template <class F> void for_each(F &&f) const { visit_fields(*this, f); }
};

using VcmuParams = VcmuWeights<Tensor>;

struct MemoryState {
  Tensor M; // N_m x D_m
  std::size_t turn_index = 0;
};

struct RetrievedContext {
  Tensor C;         // N_t x D_m
  Tensor attention; // N_t x N_m
};

// Tape-level results, exposing intermediates for tests and audits.
struct GateTrace {
  Var gate;      // g, N_m x D_m
  Var candidate; // m~, N_m x D_m
  Var next;      // M_next
};

struct RetrievalTrace {
  Var context;   // C
  Var attention; // alpha
};

VcmuParams init_params(const ModelDims &dims, MemoryInit mode, std::mt19937_64 &rng);

MemoryState init_memory(std::size_t n_slots, std::size_t dim, MemoryInit mode,
                        const Tensor &learned = {});

// visual_rows: N_v x D_raw raw cell features, tokens: N_t x D_t. Returns 1 x D_e.
Var encode_context(const Var &visual_rows, const Var &tokens, const EncoderWeights<Var> &w);
GateTrace gated_update(const Var &encoded, const Var &memory, const GateWeights<Var> &w);
RetrievalTrace retrieve(const Var &tokens, const Var &memory, const RetrievalWeights<Var> &w);

// Value-level conveniences over a private tape.
Tensor encode_context(const Tensor &visual_rows, const Tensor &tokens,
                      const EncoderWeights<Tensor> &w);
Tensor gated_update(const Tensor &encoded, const Tensor &memory, const GateWeights<Tensor> &w);
RetrievedContext retrieve(const Tensor &tokens, const Tensor &memory,
                          const RetrievalWeights<Tensor> &w);

} // namespace camvr::vcmu
