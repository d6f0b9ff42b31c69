#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ddv/nn.hpp"

namespace ddv::nn {

struct FitConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  // Mini-batch gradients whose global L2 norm exceeds this are rescaled to
  // it; 0 disables clipping.
  double clip_norm = 5.0;
};

// Mean loss over a mini-batch; accumulates the mean gradient into grads
// (one block per trained block, already zeroed).
using BatchObjective = std::function<double(std::span<const std::size_t> batch, std::vector<ParamBlock>& grads)>;
using FullObjective = std::function<double()>;

// Mini-batch momentum SGD over `samples` items. After every epoch the full
// training loss is evaluated; an epoch that raises it is rolled back and the
// learning rate halved, so the returned per-epoch history never increases.
// Throws TrainingError on a non-finite loss or gradient.
//
// With a validation objective the parameters of the epoch with the lowest
// validation loss (the initial parameters included) are restored at the end
// and the history is cut at that epoch.
std::vector<double> fit(std::vector<ParamBlock*> blocks, std::size_t samples, const FitConfig& config,
                        std::uint64_t seed, const BatchObjective& batch_objective, const FullObjective& full_objective,
                        const FullObjective& validation = {});

}  // namespace ddv::nn
