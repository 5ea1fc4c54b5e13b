#pragma once

#include <cstddef>
#include <string>

namespace camvr {

enum class Granularity { global, coarse, native };
enum class MemoryInit { zeros, learnable };

std::string to_string(Granularity g);
std::string to_string(MemoryInit m);
Granularity parse_granularity(const std::string &s);
MemoryInit parse_memory_init(const std::string &s);

struct ModelDims {
  std::size_t n_slots = 16;  // N_m
  std::size_t d_mem = 32;    // D_m
  std::size_t d_enc = 32;    // D_e
  std::size_t d_vis = 32;    // D_v
  std::size_t d_txt = 32;    // D_t
  std::size_t d_raw = 8;     // D_raw
  std::size_t d_dec = 32;    // D_dec
  std::size_t c_hidden = 8;  // C_h
  std::size_t grid_h = 6;
  std::size_t grid_w = 6;
  std::size_t query_vocab = 0;
  std::size_t answer_vocab = 0;

  std::size_t cells() const { return grid_h * grid_w; }
  std::size_t d_ff() const { return 2 * d_dec; }

  friend bool operator==(const ModelDims &, const ModelDims &) = default;
};

struct ModelFlags {
  bool use_vcmu = true;
  bool use_avfg = true;
  Granularity granularity = Granularity::native;
  MemoryInit memory_init = MemoryInit::zeros;

  friend bool operator==(const ModelFlags &, const ModelFlags &) = default;
};

struct ModelConfig {
  ModelDims dims;
  ModelFlags flags;

  // Throws ConfigError naming the first invalid field.
  void validate() const;

  friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

} // namespace camvr
