#include "camvr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace camvr {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

static double evaluate(const ScalarFn &f, const std::vector<Tensor> &params) {
  Tape tape;
  auto vars = bind_variables(tape, params);
  Var out = f(tape, vars);
  if (out.value().size() != 1)
    throw ContractError("gradcheck: function must return a scalar, got " +
                        to_string(out.shape()));
  return out.value()[0];
}

GradcheckReport gradcheck(const ScalarFn &f, std::vector<Tensor> params,
                          const std::vector<std::string> &names, double eps) {
  Gradients analytic;
  {
    Tape tape;
    auto vars = bind_variables(tape, params);
    Var out = f(tape, vars);
    tape.backward(out);
    analytic = collect_gradients(tape, vars);
  }

  GradcheckReport report;
  for (std::size_t b = 0; b < params.size(); ++b) {
    GradcheckBlock block;
    block.name = b < names.size() ? names[b] : "param" + std::to_string(b);
    block.elements = params[b].size();
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double orig = params[b][i];
      params[b][i] = orig + eps;
      const double up = evaluate(f, params);
      params[b][i] = orig - eps;
      const double down = evaluate(f, params);
      params[b][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      block.max_rel_error = std::max(block.max_rel_error, relative_error(analytic[b][i], numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
    report.blocks.push_back(std::move(block));
  }
  return report;
}

} // namespace camvr
