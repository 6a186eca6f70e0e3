#pragma once
// Stage 2: a smaller conv classifier over mined ROI crops. One sigmoid node
// scores fracture; an optional second node scores hip (vs pelvic) and is
// trained only on probable-positive ROIs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include "fracmil/core_types.hpp"
#include "fracmil/nn.hpp"
#include "fracmil/roi_mining.hpp"
#include "fracmil/stage1.hpp"
#include "fracmil/train_config.hpp"

namespace fracmil {

BackboneConfig default_stage2_backbone();

struct Stage2Options {
  BackboneConfig backbone = default_stage2_backbone();
  bool subtype_head = true;
};

struct RoiScores {
  double p_fracture = 0.5;
  std::optional<double> p_subtype;  // probability of hip
};

class Stage2Model {
 public:
  Stage2Model() = default;
  Stage2Model(Stage2Options options, int roi_size, std::uint64_t seed);

  RoiScores classify_roi(const GrayscaleImage& crop) const;

  int roi_size() const { return roi_size_; }
  bool has_subtype_head() const { return options_.subtype_head; }
  const Stage2Options& options() const { return options_; }
  std::size_t backbone_parameter_count() const { return trunk_.parameter_count(); }

  nn::Network& trunk() { return trunk_; }
  nn::Network& fracture_head() { return fracture_head_; }
  nn::Network& subtype_head() { return subtype_head_; }
  const nn::Network& trunk() const { return trunk_; }
  const nn::Network& fracture_head() const { return fracture_head_; }
  const nn::Network& subtype_head() const { return subtype_head_; }

  // Trunk, fracture head and (if enabled) subtype head, in that order.
  std::vector<nn::Network*> networks();
  std::vector<nn::Gradients> make_gradients() const;

  void save(const std::filesystem::path& dir) const;
  static Stage2Model load(const std::filesystem::path& dir);

 private:
  Stage2Options options_;
  int roi_size_ = 64;
  std::uint64_t seed_ = 0;
  nn::Network trunk_;          // backbone + global average pool
  nn::Network fracture_head_;  // 1x1 conv, C -> 1
  nn::Network subtype_head_;   // 1x1 conv, C -> 1 (empty when disabled)
};

// Forward/backward of one ROI sample; accumulates into grads (laid out as
// Stage2Model::networks()) and returns the sample loss. The subtype term only
// applies to probable positives that carry a subtype label.
double stage2_sample_step(const Stage2Model& model, const RoiSample& sample,
                          std::span<nn::Gradients> grads, bool flip = false);

struct Stage2TrainResult {
  Stage2Model model;
  MiningManifest manifest;
  TrainHistory history;
};

// Maps are computed once with the frozen stage-1 model; each epoch re-draws
// the ROIs. Throws ConfigError if no probable positive is mined.
Stage2TrainResult train_stage2(const Stage1Model& stage1, std::span<const LabeledImage> train,
                               const CalibrationResult& calibration,
                               const MiningConfig& mining_cfg, const TrainConfig& cfg,
                               const Stage2Options& options = {},
                               std::span<const LabeledImage> validation = {});

}  // namespace fracmil
