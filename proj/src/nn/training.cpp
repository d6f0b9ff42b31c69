#include "ddv/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ddv/error.hpp"

namespace ddv::nn {

std::vector<double> fit(std::vector<ParamBlock*> blocks, std::size_t samples, const FitConfig& config,
                        std::uint64_t seed, const BatchObjective& batch_objective, const FullObjective& full_objective,
                        const FullObjective& validation) {
  if (samples == 0) throw PreconditionError("no training samples");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");

  std::mt19937_64 rng(seed);
  std::vector<MomentumSgd> optimisers;
  std::vector<ParamBlock> grads;
  for (auto* b : blocks) {
    optimisers.emplace_back(*b, config.learning_rate, config.momentum);
    grads.push_back(b->zeros_like());
  }

  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});

  double previous = full_objective();
  if (!std::isfinite(previous)) throw TrainingError("non-finite initial loss", 0);

  std::vector<double> history;
  history.reserve(config.epochs);
  double best_validation = validation ? validation() : 0.0;
  std::size_t best_epoch = 0;
  std::vector<ParamBlock> best;
  if (validation)
    for (auto* b : blocks) best.push_back(*b);
  double lr = config.learning_rate;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<ParamBlock> snapshot;
    for (auto* b : blocks) snapshot.push_back(*b);

    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < samples; start += config.batch_size) {
      const std::size_t stop = std::min(samples, start + config.batch_size);
      for (auto& g : grads) g.set_zero();
      const double loss = batch_objective(std::span<const std::size_t>(order).subspan(start, stop - start), grads);
      if (!std::isfinite(loss)) throw TrainingError("non-finite batch loss", static_cast<int>(epoch));
      double norm2 = 0.0;
      for (const auto& g : grads) {
        if (!g.all_finite()) throw TrainingError("non-finite gradient", static_cast<int>(epoch));
        norm2 += g.squared_norm();
      }
      if (config.clip_norm > 0.0 && norm2 > config.clip_norm * config.clip_norm) {
        for (auto& g : grads) g.scale(config.clip_norm / std::sqrt(norm2));
      }
      for (std::size_t i = 0; i < blocks.size(); ++i) optimisers[i].step(*blocks[i], grads[i]);
    }

    const double loss = full_objective();
    if (!std::isfinite(loss)) throw TrainingError("training diverged", static_cast<int>(epoch));
    if (loss > previous) {
      for (std::size_t i = 0; i < blocks.size(); ++i) *blocks[i] = snapshot[i];
      lr *= 0.5;
      for (auto& o : optimisers) {
        o.reset();
        o.set_learning_rate(lr);
      }
      history.push_back(previous);
    } else {
      previous = loss;
      history.push_back(loss);
      if (validation) {
        const double v = validation();
        if (v < best_validation) {
          best_validation = v;
          best_epoch = epoch;
          for (std::size_t i = 0; i < blocks.size(); ++i) best[i] = *blocks[i];
        }
      }
    }
  }
  if (validation) {
    for (std::size_t i = 0; i < blocks.size(); ++i) *blocks[i] = best[i];
    history.resize(best_epoch);
  }
  return history;
}

}  // namespace ddv::nn
