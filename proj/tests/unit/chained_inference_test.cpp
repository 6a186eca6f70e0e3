#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "fracmil/chained_inference.hpp"

namespace fracmil {
namespace {

float logit(double p) { return static_cast<float>(std::log(p / (1.0 - p))); }

// Stage 1 whose map is the constant p (head weights zero, bias logit(p)).
Stage1Model constant_stage1(double p) {
  Stage1Model m(default_stage1_backbone(), {}, 0, 1);
  auto params = m.network().parameters();
  for (float& w : *params[params.size() - 2]) w = 0.0f;
  (*params.back())[0] = logit(p);
  return m;
}

// Stage 2 with a constant fracture output and subtype output.
Stage2Model constant_stage2(float fracture_logit, float subtype_logit) {
  Stage2Model m({}, 64, 1);
  auto f = m.fracture_head().parameters();
  (*f[1])[0] = fracture_logit;
  auto s = m.subtype_head().parameters();
  (*s[1])[0] = subtype_logit;
  return m;
}

TEST(Infer, ProductOfStages) {
  const auto r = infer(constant_stage1(0.9), constant_stage2(logit(0.8), 0.0f),
                       fixture::image("a", 128, 128, 1));
  EXPECT_NEAR(r.p_s1, 0.9, 1e-6);
  EXPECT_NEAR(r.p_s2, 0.8, 1e-6);
  EXPECT_NEAR(r.p_final, 0.72, 1e-6);
  EXPECT_EQ(r.p_final, r.p_s1 * r.p_s2);
  // Constant map: the argmax is the first cell.
  EXPECT_EQ(r.roi, cell_to_box({0, 0}, MapGeometry(16, 64, 128, 128)));
  ASSERT_TRUE(r.p_subtype);
  EXPECT_EQ(*r.p_subtype, 0.5);
}

TEST(Infer, SaturatedStage2PassesThroughAndZeroAbsorbs) {
  const auto img = fixture::image("a", 64, 64, 2);
  const auto pass = infer(constant_stage1(0.37), constant_stage2(100.0f, 0.0f), img);
  EXPECT_EQ(pass.p_s2, 1.0);
  EXPECT_EQ(pass.p_final, pass.p_s1);
  auto zero = constant_stage1(0.5);
  (*zero.network().parameters().back())[0] = -200.0f;
  const auto z = infer(zero, constant_stage2(3.0f, 0.0f), img);
  EXPECT_EQ(z.p_s1, 0.0);
  EXPECT_EQ(z.p_final, 0.0);
}

TEST(Infer, RoiSizeMismatchIsAConfigError) {
  const Stage2Model s2({}, 32, 1);
  EXPECT_THROW(infer(constant_stage1(0.5), s2, fixture::image("a", 64, 64, 3)), ConfigError);
}

TEST(InferProperty, FilteringAndRankingWithPassThroughStage2) {
  Stage1Model s1(default_stage1_backbone(), {}, 0, 7);
  for (auto* p : s1.network().parameters()) for (float& v : *p) v += 0.03f;
  const auto pass = constant_stage2(100.0f, 0.0f);
  const auto veto = constant_stage2(logit(0.3), 0.0f);
  std::vector<ChainedResult> rs;
  for (int k = 0; k < 30; ++k) {
    const auto img = fixture::image("i" + std::to_string(k), 64, 64, 100 + k);
    rs.push_back(infer(s1, pass, img));
    const auto v = infer(s1, veto, img);
    EXPECT_LE(v.p_final, v.p_s1);
    EXPECT_LE(v.p_final, v.p_s2);
    const auto mp = max_pool(s1.forward_map(img));
    EXPECT_EQ(v.roi, cell_to_box(mp.argmax, s1.geometry_for(64, 64)));
  }
  for (const auto& a : rs) {
    for (const auto& b : rs) EXPECT_EQ(a.p_final < b.p_final, a.p_s1 < b.p_s1);
  }
}

ChainedResult result(double p_final, std::optional<double> p_subtype) {
  ChainedResult r;
  r.p_s1 = p_final;
  r.p_s2 = 1.0;
  r.p_final = p_final;
  r.p_subtype = p_subtype;
  return r;
}

TEST(DecideThreeClass, Examples) {
  EXPECT_EQ(decide_three_class(result(0.9, 0.8), 0.5), Decision::kHip);
  EXPECT_EQ(decide_three_class(result(0.3, 0.8), 0.5), Decision::kNoFinding);
  EXPECT_EQ(decide_three_class(result(0.9, 0.2), 0.5), Decision::kPelvic);
  EXPECT_EQ(decide_three_class(result(0.5, 0.5), 0.5), Decision::kHip);
}

TEST(DecideThreeClass, Errors) {
  EXPECT_THROW(decide_three_class(result(0.9, std::nullopt), 0.5), ConfigError);
  EXPECT_THROW(decide_three_class(result(0.9, 0.5), 0.0), DomainError);
  EXPECT_THROW(decide_three_class(result(0.9, 0.5), 1.0), DomainError);
}

TEST(InferenceRecord, RoundTrip) {
  ChainedResult r = result(0.72, 0.25);
  r.p_s1 = 0.9;
  r.p_s2 = 0.8;
  r.roi = {{40, 40, 104, 104}, {4, 4}};
  r.decision = Decision::kPelvic;
  const std::string line = inference_record_json("img7", r);
  EXPECT_EQ(line.rfind(R"({"image_id":"img7","p_s1":0.9,"p_s2":0.8,"p_final":0.72,)", 0), 0u);
  std::string id;
  const auto back = parse_inference_record(line, &id);
  EXPECT_EQ(id, "img7");
  EXPECT_EQ(back.p_s1, r.p_s1);
  EXPECT_EQ(back.p_s2, r.p_s2);
  EXPECT_EQ(back.p_final, r.p_final);
  EXPECT_EQ(back.roi, r.roi);
  EXPECT_EQ(back.p_subtype, r.p_subtype);
  EXPECT_EQ(back.decision, r.decision);
  for (auto d : {Decision::kHip, Decision::kPelvic, Decision::kNoFinding}) {
    EXPECT_EQ(decision_from_string(to_string(d)), d);
  }
}

}  // namespace
}  // namespace fracmil
