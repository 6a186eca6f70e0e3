#pragma once
// Single-stage baselines that pool the last feature map (GAP or per-channel
// LSE) and classify the pooled vector with a linear layer and sigmoid.

#include <cstdint>
#include <filesystem>
#include <span>

#include "fracmil/core_types.hpp"
#include "fracmil/nn.hpp"
#include "fracmil/stage1.hpp"
#include "fracmil/train_config.hpp"

namespace fracmil {

enum class FeaturePooling { kGap, kLse };

struct GlobalClassifierOptions {
  BackboneConfig backbone = default_stage1_backbone();
  FeaturePooling pooling = FeaturePooling::kGap;
  double r = 10.0;
};

class GlobalClassifier {
 public:
  GlobalClassifier() = default;
  GlobalClassifier(GlobalClassifierOptions options, std::uint64_t seed);

  double predict(const GrayscaleImage& image) const;
  const GlobalClassifierOptions& options() const { return options_; }
  nn::Network& network() { return net_; }
  const nn::Network& network() const { return net_; }

  void save(const std::filesystem::path& dir) const;
  static GlobalClassifier load(const std::filesystem::path& dir);

 private:
  GlobalClassifierOptions options_;
  std::uint64_t seed_ = 0;
  nn::Network net_;
};

struct GlobalTrainResult {
  GlobalClassifier model;
  TrainHistory history;
};

GlobalTrainResult train_global_classifier(std::span<const LabeledImage> train,
                                          const TrainConfig& cfg,
                                          const GlobalClassifierOptions& options,
                                          std::span<const LabeledImage> validation = {});

}  // namespace fracmil
