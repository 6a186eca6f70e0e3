#include "fracmil/chained_inference.hpp"

#include "fracmil/lse_pooling.hpp"
#include "json.hpp"

namespace fracmil {

const char* to_string(Decision d) {
  switch (d) {
    case Decision::kHip: return "hip";
    case Decision::kPelvic: return "pelvic";
    case Decision::kNoFinding: return "no_finding";
  }
  return "?";
}

Decision decision_from_string(const std::string& s) {
  if (s == "hip") return Decision::kHip;
  if (s == "pelvic") return Decision::kPelvic;
  if (s == "no_finding") return Decision::kNoFinding;
  throw DomainError("unknown decision: " + s);
}

ChainedResult infer(const Stage1Model& stage1, const Stage2Model& stage2,
                    const GrayscaleImage& image) {
  if (stage1.roi_size() != stage2.roi_size()) {
    throw ConfigError("infer: stage-1 roi_size " + std::to_string(stage1.roi_size()) +
                      " != stage-2 roi_size " + std::to_string(stage2.roi_size()));
  }
  const ProbabilityMap map = stage1.forward_map(image);
  const MaxPoolResult top = max_pool(map);
  ChainedResult out;
  out.p_s1 = top.value;
  out.roi = cell_to_box(top.argmax, map.geometry());
  const RoiScores s2 = stage2.classify_roi(crop_roi(image, out.roi, map.geometry()));
  out.p_s2 = s2.p_fracture;
  out.p_subtype = s2.p_subtype;
  out.p_final = out.p_s1 * out.p_s2;
  return out;
}

Decision decide_three_class(const ChainedResult& result, double tau) {
  if (!result.p_subtype) throw ConfigError("decide_three_class: model has no subtype head");
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("decide_three_class: tau must lie in (0,1)");
  if (result.p_final < tau) return Decision::kNoFinding;
  return *result.p_subtype >= 0.5 ? Decision::kHip : Decision::kPelvic;
}

std::string inference_record_json(const std::string& image_id, const ChainedResult& r) {
  nlohmann::ordered_json j;
  j["image_id"] = image_id;
  j["p_s1"] = r.p_s1;
  j["p_s2"] = r.p_s2;
  j["p_final"] = r.p_final;
  j["x0"] = r.roi.rect.x0;
  j["y0"] = r.roi.rect.y0;
  j["x1"] = r.roi.rect.x1;
  j["y1"] = r.roi.rect.y1;
  j["cell_i"] = r.roi.source_cell.i;
  j["cell_j"] = r.roi.source_cell.j;
  j["p_subtype"] = r.p_subtype ? nlohmann::ordered_json(*r.p_subtype) : nlohmann::ordered_json(nullptr);
  j["decision"] = r.decision ? nlohmann::ordered_json(to_string(*r.decision))
                             : nlohmann::ordered_json(nullptr);
  return j.dump();
}

ChainedResult parse_inference_record(const std::string& line, std::string* image_id) {
  const auto j = nlohmann::json::parse(line);
  ChainedResult r;
  if (image_id) *image_id = j.at("image_id").get<std::string>();
  r.p_s1 = j.at("p_s1").get<double>();
  r.p_s2 = j.at("p_s2").get<double>();
  r.p_final = j.at("p_final").get<double>();
  r.roi.rect = PixelRect{j.at("x0").get<int>(), j.at("y0").get<int>(), j.at("x1").get<int>(),
                         j.at("y1").get<int>()};
  r.roi.source_cell = Cell{j.at("cell_i").get<int>(), j.at("cell_j").get<int>()};
  if (!j.at("p_subtype").is_null()) r.p_subtype = j["p_subtype"].get<double>();
  if (!j.at("decision").is_null()) r.decision = decision_from_string(j["decision"].get<std::string>());
  return r;
}

}  // namespace fracmil
