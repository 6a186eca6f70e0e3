#pragma once
// Seeded generator of desk-scale "pelvic X-ray" stand-ins. Every image has a
// smooth noisy background, two femoral-head rings in the outer thirds, a
// pelvic ring in the central band, random bright ring distractors and dark
// straight line confusers. Fractured images add one dark jagged crack
// crossing a ring: a near-horizontal crack on a femoral ring (hip) or a
// near-vertical crack on the pelvic ring (pelvic).

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fracmil/core_types.hpp"

namespace fracmil {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IntRange {
  int min = 0, max = 0;
};
struct RealRange {
  double min = 0.0, max = 0.0;
};

struct GenConfig {
  int image_size = 128;
  int n_images = 100;
  double positive_fraction = 2776.0 / 4410.0;
  double subtype_fraction_hip = 1975.0 / 2776.0;
  IntRange distractor_count = {1, 3};  // extra bright rings
  IntRange confuser_count = {1, 3};    // dark straight lines
  RealRange lesion_contrast = {0.16, 0.30};
  std::uint64_t seed = 7;
  std::string id_prefix = "syn";

  void validate() const;
};

// Generator-side facts about one image, for tests and audits.
struct GenerationTrace {
  int lesion_strokes = 0;
  int lesion_pixels = 0;  // pixels with stroke coverage >= 0.5
  int distractors = 0;
  int confusers = 0;
};

struct GeneratedImage {
  LabeledImage item;
  GenerationTrace trace;
};

std::vector<GeneratedImage> generate_with_trace(const GenConfig& cfg);
std::vector<LabeledImage> generate(const GenConfig& cfg);

// Zone of a pixel column: outer thirds are hip, central band pelvic.
Subtype zone_of(double x, int image_size);

}  // namespace fracmil
