#pragma once
// One-pass inference through both stages. Stage 1 proposes its single most
// confident cell; stage 2 scores the ROI around it; the final score is the
// product of the two, so stage 2 can only veto.

#include <optional>
#include <string>

#include "fracmil/core_types.hpp"
#include "fracmil/stage1.hpp"
#include "fracmil/stage2.hpp"

namespace fracmil {

enum class Decision { kHip, kPelvic, kNoFinding };

const char* to_string(Decision d);
Decision decision_from_string(const std::string& s);

struct ChainedResult {
  double p_s1 = 0.0;
  double p_s2 = 0.0;
  double p_final = 0.0;
  RoiBox roi;
  std::optional<double> p_subtype;
  std::optional<Decision> decision;
};

// Throws ConfigError when the stage-2 roi_size disagrees with stage 1.
ChainedResult infer(const Stage1Model& stage1, const Stage2Model& stage2,
                    const GrayscaleImage& image);

// p_final >= tau -> hip if p_subtype >= 0.5 else pelvic; below -> no finding.
Decision decide_three_class(const ChainedResult& result, double tau);

// JSON line: image_id, p_s1, p_s2, p_final, x0, y0, x1, y1, cell_i, cell_j,
// p_subtype, decision.
std::string inference_record_json(const std::string& image_id, const ChainedResult& r);
ChainedResult parse_inference_record(const std::string& line, std::string* image_id);

}  // namespace fracmil
