#pragma once

#include "knlab/model.hpp"

namespace knlab {

struct TrainSettings {
  int steps = 800;
  int batch = 16;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  int log_every = 50;
};

struct TrainStats {
  std::vector<std::pair<int, double>> loss_curve;  // (step, batch loss)
  double final_loss = 0.0;
};

// Adam training on tokenized sentences. Causal models learn next-token
// prediction; bidirectional models learn masked-token prediction with one
// random position hidden per sample. Deterministic for a fixed seed and
// independent of the worker count.
TrainStats train(Transformer& model, const std::vector<std::vector<int>>& corpus,
                 const TrainSettings& settings);

}  // namespace knlab
