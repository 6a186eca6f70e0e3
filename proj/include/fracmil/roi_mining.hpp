#pragma once
// ROI mining from stage-1 probability maps: calibrate a high-sensitivity
// threshold on training positives, collect the cells at or above it, and
// sample up to K of them per image per stage-2 epoch. Clean images are
// topped up to exactly K with random cells outside the candidate set.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fracmil/core_types.hpp"

namespace fracmil {

struct CalibrationResult {
  double threshold = 0.0;
  double achieved_sensitivity = 0.0;
  double target_sensitivity = 0.0;
};

struct MiningConfig {
  int k = 5;
  double target_sensitivity = 0.99;
  std::uint64_t seed = 1;

  void validate() const;
};

struct MiningRecord {
  std::string image_id;
  int epoch = 0;
  RoiBox box;
  MiningLabel mining_label = MiningLabel::kRandomNegative;
  double cell_prob = 0.0;
  std::optional<Subtype> subtype;
};

struct MiningManifest {
  std::vector<MiningRecord> records;
  CalibrationResult calibration;
  // Fractured images whose candidate set was empty, as (image_id, epoch).
  std::vector<std::pair<std::string, int>> misses;
};

// Largest t in {scores} U {0} with fraction(score >= t) >= target.
CalibrationResult calibrate_threshold(std::span<const double> positive_scores, double target);

// Cells with p_ij >= threshold, in row-major order.
std::vector<Cell> candidate_set(const ProbabilityMap& map, double threshold);

struct MiningOutcome {
  std::vector<RoiSample> samples;
  bool miss = false;  // fractured image with an empty candidate set
};

// Sampling is driven by a generator keyed on (cfg.seed, image id, epoch).
MiningOutcome mine_rois(const GrayscaleImage& image, const ImageLabel& label,
                        const ProbabilityMap& map, double threshold, const MiningConfig& cfg,
                        int epoch);

MiningRecord to_record(const RoiSample& sample, const std::string& image_id, int epoch);

// Fraction of probable-positive records that hit a ground-truth box: the
// ROI box center lies inside a box, or IoU >= 0.25.
// Throws ConfigError when a referenced image has no gt_boxes.
double mining_label_accuracy(const MiningManifest& manifest,
                             const std::map<std::string, ImageLabel>& labels);

// JSON lines, fixed field order:
// image_id, epoch, x0, y0, x1, y1, cell_i, cell_j, mining_label, cell_prob, subtype
void write_manifest_jsonl(std::ostream& out, const MiningManifest& manifest);
std::vector<MiningRecord> read_manifest_jsonl(std::istream& in);

}  // namespace fracmil
