#pragma once

#include "camvr/tensor.hpp"

#include <cmath>
#include <random>

namespace camvr {

inline Tensor uniform(Shape shape, double bound, std::mt19937_64 &rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto &v : t.data())
    v = dist(rng);
  return t;
}

// Glorot-uniform for a fan_in x fan_out matrix.
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64 &rng) {
  return uniform({fan_in, fan_out}, std::sqrt(6.0 / double(fan_in + fan_out)), rng);
}

} // namespace camvr
