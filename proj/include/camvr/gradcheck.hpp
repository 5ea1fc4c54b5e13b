#pragma once

#include "camvr/tape.hpp"

#include <functional>
#include <string>
#include <vector>

namespace camvr {

// Builds a scalar on `tape` from variables bound to the given parameters.
using ScalarFn = std::function<Var(Tape &, const std::vector<Var> &)>;

struct GradcheckBlock {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::vector<GradcheckBlock> blocks;
};

// Compares tape gradients with central differences (f(p+eps) - f(p-eps)) / 2eps
// element by element. Relative error uses max(|analytic|, |numeric|, 1e-8) as
// denominator.
GradcheckReport gradcheck(const ScalarFn &f, std::vector<Tensor> params,
                          const std::vector<std::string> &names = {}, double eps = 1e-5);

double relative_error(double analytic, double numeric);

} // namespace camvr
