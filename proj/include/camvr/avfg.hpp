#pragma once

// Context-driven spatial focus: pools retrieved context, turns it into a
// sigmoid attention map over the visual grid and scales each cell by it.

#include "camvr/config.hpp"
#include "camvr/ops.hpp"
#include "camvr/weights.hpp"

#include <random>

namespace camvr::avfg {

template <class T> struct AvfgWeights {
  T conv1_k, conv1_b; // 3 x 3 x (D_raw + D_m) x C_h, 1 x C_h
  T conv2_k, conv2_b; // 3 x 3 x C_h x 1, 1 x 1
  T global_w, global_b; // (D_m + D_raw) x 1, 1 x 1; global granularity only

  template <class S, class F> static void visit_fields(S &s, F &f) {
    f("conv1.k", s.conv1_k);
    f("conv1.b", s.conv1_b);
    f("conv2.k", s.conv2_k);
    f("conv2.b", s.conv2_b);
    f("global.w", s.global_w);
    f("global.b", s.global_b);
  }
  template <class F> void for_each(F &&f) { visit_fields(*this, f); }
  template <class F> void for_each(F &&f) const { visit_fields(*this, f); }
};

using AvfgParams = AvfgWeights<Tensor>;

struct Resolution {
  std::size_t height = 0, width = 0;
  friend bool operator==(const Resolution &, const Resolution &) = default;
};

// Map resolution used for a granularity on an H x W grid.
Resolution resolution_for(Granularity g, std::size_t grid_h, std::size_t grid_w);

struct AttentionMap {
  Tensor A;           // H' x W' x 1, entries in (0, 1)
  Resolution resolution;
  Tensor upsampled;   // H x W x 1 nearest-neighbour expansion of A
};

struct MapTrace {
  Var map;       // H' x W' x 1
  Var upsampled; // H x W x 1
  Resolution resolution;
};

AvfgParams init_params(const ModelDims &dims, Granularity g, std::mt19937_64 &rng);

Var pool_context(const Var &context);

// visual: H x W x D_raw grid, pooled: 1 x D_m. Throws ConfigError unless the
// resolution is the native grid or an exact integer coarsening of it.
MapTrace gen_attention_map(const Var &visual, const Var &pooled, const AvfgWeights<Var> &w,
                           Resolution resolution);
Var modulate(const Var &visual, const Var &map);

// Single scalar weight for the whole grid. Returns the modulated grid and the
// 1 x 1 x 1 map.
struct GlobalTrace {
  Var modulated;
  Var weight;
};
GlobalTrace global_weighting(const Var &visual, const Var &pooled, const AvfgWeights<Var> &w);

Tensor pool_context(const Tensor &context);
AttentionMap gen_attention_map(const Tensor &visual, const Tensor &pooled, const AvfgParams &w,
                               Resolution resolution);
Tensor modulate(const Tensor &visual, const AttentionMap &map);
Tensor modulate(const Tensor &visual, const Tensor &map);
Tensor global_weighting(const Tensor &visual, const Tensor &pooled, const AvfgParams &w);

} // namespace camvr::avfg
