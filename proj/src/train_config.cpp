#include "fracmil/train_config.hpp"

#include <algorithm>
#include <cmath>

namespace fracmil {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be > 0");
  if (plateau_patience < 1) throw ConfigError("TrainConfig: plateau_patience must be >= 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
    throw ConfigError("TrainConfig: plateau_factor must lie in (0,1)");
  }
}

TrainConfig TrainConfig::paper_scale() {
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-5;
  cfg.plateau_factor = 0.1;
  return cfg;
}

double bce(double p, bool label) {
  const double c = std::clamp(p, kBceEps, 1.0 - kBceEps);
  return label ? -std::log(c) : -std::log1p(-c);
}

double bce_grad(double p, bool label) {
  if (p <= kBceEps || p >= 1.0 - kBceEps) return 0.0;
  return label ? -1.0 / p : 1.0 / (1.0 - p);
}

}  // namespace fracmil
