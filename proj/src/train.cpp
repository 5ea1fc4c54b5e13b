#include "camvr/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace camvr {

double episode_gradients(const ModelParams &params, const task::Episode &episode,
                         Gradients &grads) {
  Tape tape;
  auto w = bind<ModelWeights>(tape, params.weights);
  auto trace = run_episode(tape, params.config, w, episode);
  tape.backward(trace.loss);
  grads = collect_gradients(tape, enabled_vars<ModelWeights>(w));
  return trace.loss.value()[0];
}

Adam::Adam(const ModelParams &params, const TrainConfig &config) : cfg_(config) {
  for (const Tensor *t : params.blocks()) {
    m_.push_back(Tensor::zeros(t->shape()));
    v_.push_back(Tensor::zeros(t->shape()));
  }
}

void Adam::step(ModelParams &params, const Gradients &grads) {
  auto blocks = params.blocks();
  if (blocks.size() != grads.size())
    throw ContractError("Adam: gradient set does not match parameter blocks");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    Tensor &p = *blocks[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grads[b][i];
      m_[b][i] = cfg_.beta1 * m_[b][i] + (1.0 - cfg_.beta1) * g;
      v_[b][i] = cfg_.beta2 * v_[b][i] + (1.0 - cfg_.beta2) * g * g;
      p[i] -= cfg_.learning_rate * (m_[b][i] / c1) / (std::sqrt(v_[b][i] / c2) + cfg_.epsilon);
    }
  }
}

TrainResult train(const std::vector<task::Episode> &episodes, ModelParams &params,
                  const TrainConfig &cfg) {
  if (episodes.empty())
    throw ContractError("train: no training episodes");
  if (cfg.batch_size == 0)
    throw ConfigError("batch_size: must be positive");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(episodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  Adam adam(params, cfg);
  TrainResult result;
  const std::size_t B = cfg.batch_size;
  std::vector<Gradients> per_episode(B);
  std::vector<double> losses(B);
  std::vector<std::size_t> batch(B);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto &idx : batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx = order[cursor++];
    }

    // episodes are independent; gradients are reduced in batch order below
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(B); ++i)
      losses[std::size_t(i)] =
          episode_gradients(params, episodes[batch[std::size_t(i)]], per_episode[std::size_t(i)]);

    Gradients total = per_episode[0];
    for (std::size_t i = 1; i < B; ++i)
      for (std::size_t b = 0; b < total.size(); ++b)
        for (std::size_t k = 0; k < total[b].size(); ++k)
          total[b][k] += per_episode[i][b][k];
    double norm2 = 0.0;
    for (auto &g : total)
      for (auto &x : g.data()) {
        x /= double(B);
        norm2 += x * x;
      }
    double loss = 0.0;
    for (double l : losses)
      loss += l;
    loss /= double(B);
    if (!std::isfinite(loss) || !std::isfinite(norm2))
      throw DivergenceError("training diverged at step " + std::to_string(step) +
                            ": loss=" + std::to_string(loss) +
                            " grad_norm^2=" + std::to_string(norm2));
    if (cfg.clip_norm > 0.0 && norm2 > cfg.clip_norm * cfg.clip_norm) {
      const double s = cfg.clip_norm / std::sqrt(norm2);
      for (auto &g : total)
        for (auto &x : g.data())
          x *= s;
    }
    if (cfg.learning_rate != 0.0)
      adam.step(params, total);
    result.loss_curve.push_back(loss);
  }
  return result;
}

} // namespace camvr
