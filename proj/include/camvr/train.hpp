#pragma once

#include "camvr/integrator.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace camvr {

struct TrainConfig {
  std::size_t steps = 2000;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0; // global gradient norm cap, 0 disables
  std::uint64_t seed = 1;
};

struct TrainResult {
  std::vector<double> loss_curve; // mean episode loss per step
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Loss of one episode and its gradient w.r.t. every enabled block, backpropagated
// through all turns including the memory recurrence.
double episode_gradients(const ModelParams &params, const task::Episode &episode,
                         Gradients &grads);

class Adam {
public:
  Adam(const ModelParams &params, const TrainConfig &config);
  void step(ModelParams &params, const Gradients &grads);

private:
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

// Minibatch training with episodes drawn from shuffled passes over `episodes`.
// Throws DivergenceError when the loss stops being finite.
TrainResult train(const std::vector<task::Episode> &episodes, ModelParams &params,
                  const TrainConfig &config);

} // namespace camvr
