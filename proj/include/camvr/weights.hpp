#pragma once

// Weight groups are templates over their element type: W<Tensor> holds the
// parameters, W<Var> the same parameters bound onto a tape. Each group lists
// its fields once in visit_fields; an empty Tensor marks a disabled block.

#include "camvr/tape.hpp"

#include <string>
#include <vector>

namespace camvr {

template <template <class> class W> W<Var> bind(Tape &tape, const W<Tensor> &params) {
  std::vector<const Tensor *> src;
  params.for_each([&](const std::string &, const Tensor &t) { src.push_back(&t); });
  W<Var> out;
  std::size_t i = 0;
  out.for_each([&](const std::string &, Var &v) {
    const Tensor &t = *src[i++];
    if (!t.empty())
      v = tape.variable(t);
  });
  return out;
}

// Bound variables of the enabled blocks, in visit order.
template <template <class> class W> std::vector<Var> enabled_vars(const W<Var> &vars) {
  std::vector<Var> out;
  vars.for_each([&](const std::string &, const Var &v) {
    if (v.valid())
      out.push_back(v);
  });
  return out;
}

template <template <class> class W> std::size_t count_parameters(const W<Tensor> &params) {
  std::size_t n = 0;
  params.for_each([&](const std::string &, const Tensor &t) { n += t.size(); });
  return n;
}

} // namespace camvr
