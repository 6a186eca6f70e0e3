#pragma once
// Shared minibatch loop: seeded shuffling, gradient averaging, Adam and the
// plateau learning-rate schedule. Internal to the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string_view>
#include <vector>

#include "fracmil/nn.hpp"
#include "fracmil/rng.hpp"
#include "fracmil/train_config.hpp"

namespace fracmil::detail {

// setup(epoch) -> number of items this epoch
// step(item, epoch, grads) -> loss of that item; accumulates into grads
// validate() -> optional validation loss
template <class Setup, class Step, class Validate>
TrainHistory run_training(const std::vector<nn::Network*>& nets, const TrainConfig& cfg,
                          std::string_view tag, Setup&& setup, Step&& step,
                          Validate&& validate) {
  cfg.validate();
  std::vector<nn::Adam> adams;
  std::vector<nn::Gradients> grads;
  for (auto* net : nets) {
    adams.emplace_back(*net, cfg.adam);
    grads.push_back(net->make_gradients());
  }

  TrainHistory history;
  double lr = cfg.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::size_t n = setup(epoch);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = keyed_rng(cfg.seed, tag, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      for (auto& g : grads) g.zero();
      for (std::size_t k = start; k < end; ++k) total += step(order[k], epoch, grads);
      const float inv = 1.0f / static_cast<float>(end - start);
      for (std::size_t i = 0; i < nets.size(); ++i) {
        grads[i].scale(inv);
        adams[i].step(*nets[i], grads[i], lr);
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = n ? total / static_cast<double>(n) : 0.0;
    stats.learning_rate = lr;
    const std::optional<double> val = validate();
    if (val) stats.val_loss = *val;
    const double monitored = val ? *val : stats.train_loss;
    if (monitored < best - 1e-4 * std::abs(best) || !std::isfinite(best)) {
      best = monitored;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.plateau_patience) {
      lr *= cfg.plateau_factor;
      bad_epochs = 0;
    }
    history.push_back(stats);
  }
  return history;
}

}  // namespace fracmil::detail
