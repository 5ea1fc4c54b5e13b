#pragma once

// Binary checkpoint, all integers uint32 little-endian:
//   "CAMVR1"
//   N_m D_m D_e D_v D_t D_raw D_dec C_h |answers|
//   flags (bit0 memory unit, bit1 focus guidance, bit2 learnable M0,
//          bits3-4 granularity: 0 global, 1 coarse, 2 native)
//   grid_h grid_w |query vocab|
//   block count, then per block:
//     name length, name bytes, rank, extents..., row-major float64 LE values

#include "camvr/integrator.hpp"

#include <filesystem>
#include <iosfwd>

namespace camvr {

void write_checkpoint(std::ostream &out, const ModelParams &params);
ModelParams read_checkpoint(std::istream &in);

void save_checkpoint(const std::filesystem::path &path, const ModelParams &params);
ModelParams load_checkpoint(const std::filesystem::path &path);

} // namespace camvr
