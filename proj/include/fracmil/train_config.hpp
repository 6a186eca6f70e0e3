#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "fracmil/core_types.hpp"
#include "fracmil/nn.hpp"

namespace fracmil {

// Optimizer schedule shared by every trainer: Adam with a step-down of the
// learning rate when the monitored validation loss plateaus.
struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double learning_rate = 3e-3;
  int plateau_patience = 3;
  double plateau_factor = 0.1;
  std::uint64_t seed = 1;
  bool horizontal_flip = false;
  nn::AdamConfig adam;

  void validate() const;

  // 100 epochs, batch 8, lr 1e-5, x0.1 on plateau. Only sensible with a
  // pretrained high-capacity backbone; desk-scale defaults differ.
  static TrainConfig paper_scale();
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  // NaN when no validation data was supplied (train loss is monitored).
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double learning_rate = 0.0;
};

using TrainHistory = std::vector<EpochStats>;

// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
inline constexpr double kBceEps = 1e-7;
double bce(double p, bool label);
// d bce / d p; zero where the clamp is active.
double bce_grad(double p, bool label);

}  // namespace fracmil
