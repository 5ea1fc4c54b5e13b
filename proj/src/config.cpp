#include "camvr/config.hpp"

#include "camvr/tensor.hpp"

namespace camvr {

std::string to_string(Granularity g) {
  switch (g) {
  case Granularity::global:
    return "global";
  case Granularity::coarse:
    return "coarse";
  case Granularity::native:
    return "native";
  }
  return "?";
}

std::string to_string(MemoryInit m) { return m == MemoryInit::zeros ? "zeros" : "learnable"; }

Granularity parse_granularity(const std::string &s) {
  if (s == "global")
    return Granularity::global;
  if (s == "coarse")
    return Granularity::coarse;
  if (s == "native")
    return Granularity::native;
  throw ConfigError("granularity: expected global, coarse or native, got '" + s + "'");
}

MemoryInit parse_memory_init(const std::string &s) {
  if (s == "zeros")
    return MemoryInit::zeros;
  if (s == "learnable")
    return MemoryInit::learnable;
  throw ConfigError("memory_init: expected zeros or learnable, got '" + s + "'");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char *key) {
    if (v == 0)
      throw ConfigError(std::string(key) + ": must be positive");
  };
  positive(dims.n_slots, "mem_slots");
  positive(dims.d_mem, "d_mem");
  positive(dims.d_enc, "d_enc");
  positive(dims.d_vis, "d_vis");
  positive(dims.d_txt, "d_txt");
  positive(dims.d_raw, "d_raw");
  positive(dims.d_dec, "d_dec");
  positive(dims.c_hidden, "c_hidden");
  positive(dims.grid_h, "grid_h");
  positive(dims.grid_w, "grid_w");
  positive(dims.query_vocab, "query_vocab");
  positive(dims.answer_vocab, "answer_vocab");
  if (flags.use_avfg && flags.granularity == Granularity::coarse &&
      (dims.grid_h % 2 || dims.grid_w % 2))
    throw ConfigError("granularity: coarse maps need an even grid");
}

} // namespace camvr
