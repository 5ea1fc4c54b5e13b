#include "camvr/vcmu.hpp"

#include "camvr/init.hpp"

#include <cmath>

namespace camvr::vcmu {

VcmuParams init_params(const ModelDims &d, MemoryInit mode, std::mt19937_64 &rng) {
  VcmuParams p;
  p.encoder.proj_v = glorot(d.d_raw, d.d_vis, rng);
  p.encoder.a_v = glorot(d.d_vis, d.d_enc, rng);
  p.encoder.b_v = Tensor::zeros({1, d.d_enc});
  p.encoder.a_t = glorot(d.d_txt, d.d_enc, rng);
  p.encoder.b_t = Tensor::zeros({1, d.d_enc});
  p.encoder.fuse_w = glorot(2 * d.d_enc, d.d_enc, rng);
  p.encoder.fuse_b = Tensor::zeros({1, d.d_enc});

  p.gate.w_g = glorot(d.d_enc + d.d_mem, d.d_mem, rng);
  p.gate.b_g = Tensor::zeros({1, d.d_mem});
  p.gate.w_m = glorot(d.d_enc + d.d_mem, d.d_mem, rng);
  p.gate.b_m = Tensor::zeros({1, d.d_mem});

  p.retrieval.w_q = glorot(d.d_txt, d.d_mem, rng);
  p.retrieval.w_k = glorot(d.d_mem, d.d_mem, rng);
  p.retrieval.w_v = glorot(d.d_mem, d.d_mem, rng);

  if (mode == MemoryInit::learnable)
    p.memory0 = uniform({d.n_slots, d.d_mem}, 0.5, rng);
  return p;
}

MemoryState init_memory(std::size_t n_slots, std::size_t dim, MemoryInit mode,
                        const Tensor &learned) {
  if (n_slots == 0 || dim == 0)
    throw ConfigError("init_memory: n_slots and dim must be positive, got " +
                      std::to_string(n_slots) + " x " + std::to_string(dim));
  if (mode == MemoryInit::zeros)
    return {Tensor::zeros({n_slots, dim}), 0};
  if (learned.shape() != Shape{n_slots, dim})
    throw DimensionError("init_memory: learnable M0 has shape " + to_string(learned.shape()) +
                         ", expected " + to_string(Shape{n_slots, dim}));
  return {learned, 0};
}

Var encode_context(const Var &visual_rows, const Var &tokens, const EncoderWeights<Var> &w) {
  using namespace ops;
  // mean and linear map commute, so pooling first is the cheaper order
  Var v_pooled = matmul(mean_rows(visual_rows), w.proj_v);
  Var v = tanh(add(matmul(v_pooled, w.a_v), w.b_v));
  Var t = tanh(add(matmul(mean_rows(tokens), w.a_t), w.b_t));
  return add(matmul(concat_cols(v, t), w.fuse_w), w.fuse_b);
}

GateTrace gated_update(const Var &encoded, const Var &memory, const GateWeights<Var> &w) {
  using namespace ops;
  if (encoded.value().rank() != 2 || encoded.value().rows() != 1)
    throw DimensionError("gated_update: encoded context must be a single row, got " +
                         to_string(encoded.shape()));
  const std::size_t slots = memory.value().rows();
  Var z = concat_cols(broadcast_rows(encoded, slots), memory);
  Var gate = sigmoid(add_rows(matmul(z, w.w_g), w.b_g));
  Var candidate = tanh(add_rows(matmul(z, w.w_m), w.b_m));
  Var next = add(mul(affine(gate, -1.0, 1.0), memory), mul(gate, candidate));
  return {gate, candidate, next};
}

RetrievalTrace retrieve(const Var &tokens, const Var &memory, const RetrievalWeights<Var> &w) {
  using namespace ops;
  const double inv_sqrt_d = 1.0 / std::sqrt(double(memory.value().cols()));
  Var q = matmul(tokens, w.w_q);
  Var k = matmul(memory, w.w_k);
  Var v = matmul(memory, w.w_v);
  Var alpha = softmax_rows(scale(matmul_nt(q, k), inv_sqrt_d));
  return {matmul(alpha, v), alpha};
}

Tensor encode_context(const Tensor &visual_rows, const Tensor &tokens,
                      const EncoderWeights<Tensor> &w) {
  Tape tape;
  return encode_context(tape.constant(visual_rows), tape.constant(tokens),
                        bind<EncoderWeights>(tape, w))
      .value();
}

Tensor gated_update(const Tensor &encoded, const Tensor &memory, const GateWeights<Tensor> &w) {
  Tape tape;
  return gated_update(tape.constant(encoded), tape.constant(memory), bind<GateWeights>(tape, w))
      .next.value();
}

RetrievedContext retrieve(const Tensor &tokens, const Tensor &memory,
                          const RetrievalWeights<Tensor> &w) {
  Tape tape;
  auto r = retrieve(tape.constant(tokens), tape.constant(memory),
                    bind<RetrievalWeights>(tape, w));
  return {r.context.value(), r.attention.value()};
}

} // namespace camvr::vcmu
