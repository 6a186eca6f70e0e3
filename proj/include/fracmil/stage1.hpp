#pragma once
// Stage 1: fully-convolutional MIL classifier. A conv backbone followed by a
// 1x1 convolution and sigmoid yields a per-cell fracture probability map;
// the map is pooled (LSE by default) into one image probability and trained
// with BCE against the image-level label.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fracmil/core_types.hpp"
#include "fracmil/lse_pooling.hpp"
#include "fracmil/nn.hpp"
#include "fracmil/train_config.hpp"

namespace fracmil {

// Capacity knob: one block per entry of `widths`, each block being
// `convs_per_block` (conv k x k + ReLU) layers followed by a 2x2 max pool.
struct BackboneConfig {
  std::vector<int> widths = {8, 16, 32, 32};
  int convs_per_block = 1;
  int kernel = 3;

  void validate() const;
  int stride() const { return 1 << widths.size(); }
  int out_channels() const { return widths.back(); }
  // With pool_last = false the final block omits its max pool.
  nn::Network build(bool pool_last = true) const;
  bool operator==(const BackboneConfig&) const = default;
};

BackboneConfig default_stage1_backbone();

nn::Tensor to_tensor(const GrayscaleImage& image, bool flip_horizontal = false);

// Pooled BCE on a probability map and its gradient w.r.t. every cell.
struct MapLoss {
  double pooled = 0.0;
  double loss = 0.0;
  Grid2D<double> grad;  // d loss / d p_ij
};
MapLoss pooled_bce(const ProbabilityMap& map, bool fractured, const PoolingConfig& pooling);

class Stage1Model {
 public:
  Stage1Model() = default;
  // Seeded He init of the backbone, zero head (every cell starts at 0.5).
  Stage1Model(BackboneConfig backbone, PoolingConfig pooling, int roi_size, std::uint64_t seed);

  ProbabilityMap forward_map(const GrayscaleImage& image) const;
  // Geometry of the map produced for an image of the given size.
  MapGeometry geometry_for(int image_height, int image_width) const;

  int stride() const { return backbone_cfg_.stride(); }
  int roi_size() const { return roi_size_; }
  const PoolingConfig& pooling() const { return pooling_; }
  const BackboneConfig& backbone_config() const { return backbone_cfg_; }
  std::uint64_t seed() const { return seed_; }
  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }

  // Backbone + head as one network; the head is the final 1x1 conv.
  nn::Network& network() { return net_; }
  const nn::Network& network() const { return net_; }
  std::size_t backbone_parameter_count() const;

  void save(const std::filesystem::path& dir) const;
  static Stage1Model load(const std::filesystem::path& dir);

 private:
  BackboneConfig backbone_cfg_;
  PoolingConfig pooling_;
  int roi_size_ = 64;
  std::uint64_t seed_ = 0;
  int epoch_ = 0;
  nn::Network net_;
};

double image_loss(const Stage1Model& model, const GrayscaleImage& image, const ImageLabel& label);

struct Stage1Options {
  BackboneConfig backbone = default_stage1_backbone();
  PoolingConfig pooling;
  int roi_size = 0;  // 0 -> 4 * stride
};

struct Stage1TrainResult {
  Stage1Model model;
  TrainHistory history;
};

// Requires at least one fractured and one non-fractured training image.
// The validation set (may be empty) drives the plateau schedule.
Stage1TrainResult train_stage1(std::span<const LabeledImage> train, const TrainConfig& cfg,
                               const Stage1Options& options = {},
                               std::span<const LabeledImage> validation = {});

}  // namespace fracmil
