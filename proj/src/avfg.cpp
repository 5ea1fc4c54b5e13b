#include "camvr/avfg.hpp"

#include "camvr/init.hpp"

#include <cmath>

namespace camvr::avfg {

Resolution resolution_for(Granularity g, std::size_t grid_h, std::size_t grid_w) {
  switch (g) {
  case Granularity::global:
    return {1, 1};
  case Granularity::coarse:
    if (grid_h % 2 || grid_w % 2)
      throw ConfigError("granularity: coarse maps need an even grid, got " +
                        std::to_string(grid_h) + "x" + std::to_string(grid_w));
    return {grid_h / 2, grid_w / 2};
  case Granularity::native:
    break;
  }
  return {grid_h, grid_w};
}

AvfgParams init_params(const ModelDims &d, Granularity g, std::mt19937_64 &rng) {
  AvfgParams p;
  if (g == Granularity::global) {
    p.global_w = glorot(d.d_mem + d.d_raw, 1, rng);
    p.global_b = Tensor::zeros({1, 1});
    return p;
  }
  const std::size_t cin = d.d_raw + d.d_mem;
  p.conv1_k = uniform({3, 3, cin, d.c_hidden}, std::sqrt(6.0 / double(9 * (cin + d.c_hidden))),
                      rng);
  p.conv1_b = Tensor::zeros({1, d.c_hidden});
  p.conv2_k = uniform({3, 3, d.c_hidden, 1}, std::sqrt(6.0 / double(9 * (d.c_hidden + 1))), rng);
  // start near pass-through (sigmoid(2) ~ 0.88) so early training sees the grid
  p.conv2_b = Tensor::scalar(2.0);
  return p;
}

Var pool_context(const Var &context) {
  if (context.value().empty())
    throw ContractError("pool_context: context has no rows");
  return ops::mean_rows(context);
}

MapTrace gen_attention_map(const Var &visual, const Var &pooled, const AvfgWeights<Var> &w,
                           Resolution res) {
  using namespace ops;
  const Tensor &v = visual.value();
  if (v.rank() != 3)
    throw DimensionError("gen_attention_map: visual grid must be H x W x D, got " +
                         to_string(v.shape()));
  const std::size_t H = v.dim(0), W = v.dim(1), D = v.dim(2);
  if (res.height == 0 || res.width == 0 || H % res.height || W % res.width ||
      H / res.height != W / res.width)
    throw ConfigError("gen_attention_map: unsupported resolution " + std::to_string(res.height) +
                      "x" + std::to_string(res.width) + " for a " + std::to_string(H) + "x" +
                      std::to_string(W) + " grid");
  if (!pooled.value().all_finite())
    throw ContractError("gen_attention_map: pooled context is not finite");
  const std::size_t f = H / res.height;
  const std::size_t cells = res.height * res.width;

  Var grid = f > 1 ? avg_pool2d(visual, f) : visual;
  Var rows = concat_cols(reshape(grid, {cells, D}), broadcast_rows(pooled, cells));
  Var in = reshape(rows, {res.height, res.width, rows.value().cols()});
  const std::size_t hidden = w.conv1_k.value().dim(3);
  Var h1 = tanh(add_rows(reshape(conv2d(in, w.conv1_k), {cells, hidden}), w.conv1_b));
  Var logits = add_rows(reshape(conv2d(reshape(h1, {res.height, res.width, hidden}), w.conv2_k),
                                {cells, 1}),
                        w.conv2_b);
  Var map = reshape(sigmoid(logits), {res.height, res.width, 1});
  return {map, f > 1 ? upsample_nearest(map, f) : map, res};
}

Var modulate(const Var &visual, const Var &map) {
  const Tensor &v = visual.value();
  const Tensor &a = map.value();
  if (v.rank() != 3 || a.rank() != 3 || a.dim(0) != v.dim(0) || a.dim(1) != v.dim(1) ||
      a.dim(2) != 1)
    throw DimensionError("modulate: map " + to_string(a.shape()) + " does not cover grid " +
                         to_string(v.shape()));
  const std::size_t cells = v.dim(0) * v.dim(1);
  Var out = ops::scale_rows(ops::reshape(visual, {cells, v.dim(2)}),
                            ops::reshape(map, {cells, 1}));
  return ops::reshape(out, v.shape());
}

GlobalTrace global_weighting(const Var &visual, const Var &pooled, const AvfgWeights<Var> &w) {
  using namespace ops;
  const Tensor &v = visual.value();
  if (v.rank() != 3)
    throw DimensionError("global_weighting: visual grid must be H x W x D, got " +
                         to_string(v.shape()));
  const std::size_t cells = v.dim(0) * v.dim(1);
  Var flat = reshape(visual, {cells, v.dim(2)});
  Var features = concat_cols(pooled, mean_rows(flat));
  Var s = sigmoid(add(matmul(features, w.global_w), w.global_b));
  Var out = scale_rows(flat, broadcast_rows(s, cells));
  return {reshape(out, v.shape()), reshape(s, {1, 1, 1})};
}

Tensor pool_context(const Tensor &context) {
  if (context.empty())
    throw ContractError("pool_context: context has no rows");
  Tape tape;
  return pool_context(tape.constant(context)).value();
}

AttentionMap gen_attention_map(const Tensor &visual, const Tensor &pooled, const AvfgParams &w,
                               Resolution resolution) {
  Tape tape;
  auto tr = gen_attention_map(tape.constant(visual), tape.constant(pooled),
                              bind<AvfgWeights>(tape, w), resolution);
  return {tr.map.value(), tr.resolution, tr.upsampled.value()};
}

Tensor modulate(const Tensor &visual, const Tensor &map) {
  Tape tape;
  return modulate(tape.constant(visual), tape.constant(map)).value();
}

Tensor modulate(const Tensor &visual, const AttentionMap &map) {
  return modulate(visual, map.upsampled);
}

Tensor global_weighting(const Tensor &visual, const Tensor &pooled, const AvfgParams &w) {
  Tape tape;
  return global_weighting(tape.constant(visual), tape.constant(pooled),
                          bind<AvfgWeights>(tape, w))
      .modulated.value();
}

} // namespace camvr::avfg
