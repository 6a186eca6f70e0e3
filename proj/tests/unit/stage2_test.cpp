#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "fracmil/chained_inference.hpp"
#include "fracmil/stage1.hpp"
#include "fracmil/stage2.hpp"
#include "fracmil/synthetic_pxr.hpp"

namespace fracmil {
namespace {

RoiSample sample(MiningLabel label, std::optional<Subtype> subtype, std::uint64_t seed) {
  RoiSample s;
  s.crop = fixture::image("c", 64, 64, seed);
  s.box = {{0, 0, 64, 64}, {2, 2}};
  s.mining_label = label;
  s.subtype = subtype;
  return s;
}

bool all_zero(const nn::Gradients& g) {
  for (const auto& buf : g.g) {
    for (float v : buf) {
      if (v != 0.0f) return false;
    }
  }
  return true;
}

TEST(Stage2Model, ZeroHeadsGiveOneHalf) {
  const Stage2Model m({}, 64, 1);
  const auto r = m.classify_roi(fixture::image("c", 64, 64, 1));
  EXPECT_EQ(r.p_fracture, 0.5);
  ASSERT_TRUE(r.p_subtype.has_value());
  EXPECT_EQ(*r.p_subtype, 0.5);
  Stage2Options no_sub;
  no_sub.subtype_head = false;
  EXPECT_FALSE(Stage2Model(no_sub, 64, 1).classify_roi(fixture::image("c", 64, 64, 1)).p_subtype);
}

TEST(Stage2Model, ShapeMismatchIsADomainError) {
  const Stage2Model m({}, 64, 1);
  EXPECT_THROW(m.classify_roi(fixture::image("c", 32, 32, 1)), DomainError);
}

TEST(Stage2Model, SmallerThanStage1) {
  const Stage2Model s2({}, 64, 1);
  const Stage1Model s1(default_stage1_backbone(), {}, 0, 1);
  EXPECT_LT(s2.backbone_parameter_count(), s1.backbone_parameter_count());
}

TEST(Stage2Step, SubtypeGradientIsExactlyZeroWithoutProbablePositives) {
  Stage2Model m({}, 64, 3);
  // Non-zero heads so a leaked gradient could not vanish by accident.
  for (auto* net : {&m.fracture_head(), &m.subtype_head()}) {
    for (auto* p : net->parameters()) for (float& v : *p) v += 0.05f;
  }
  auto grads = m.make_gradients();
  for (auto& g : grads) g.zero();
  stage2_sample_step(m, sample(MiningLabel::kHardNegative, std::nullopt, 1), grads);
  stage2_sample_step(m, sample(MiningLabel::kRandomNegative, std::nullopt, 2), grads);
  ASSERT_EQ(grads.size(), 3u);
  EXPECT_FALSE(all_zero(grads[0]));
  EXPECT_FALSE(all_zero(grads[1]));
  EXPECT_TRUE(all_zero(grads[2]));

  for (auto& g : grads) g.zero();
  stage2_sample_step(m, sample(MiningLabel::kProbablePositive, Subtype::kHip, 3), grads);
  EXPECT_FALSE(all_zero(grads[2]));
}

TEST(Stage2Step, LossIsFractureBcePlusSubtypeBce) {
  const Stage2Model m({}, 64, 4);  // zero heads: both outputs 0.5
  auto grads = m.make_gradients();
  for (auto& g : grads) g.zero();
  const double neg = stage2_sample_step(m, sample(MiningLabel::kHardNegative, std::nullopt, 1), grads);
  EXPECT_NEAR(neg, std::log(2.0), 1e-6);
  const double pos = stage2_sample_step(m, sample(MiningLabel::kProbablePositive, Subtype::kPelvic, 2), grads);
  EXPECT_NEAR(pos, 2 * std::log(2.0), 1e-6);
}

TEST(Stage2Model, TrainedModelStaysFiniteOnExtremeCrops) {
  Stage2Model m({}, 64, 5);
  for (auto* net : m.networks()) {
    for (auto* p : net->parameters()) for (float& v : *p) v *= 3.0f, v += 0.2f;
  }
  for (float fill : {0.0f, 1.0f}) {
    const auto crop = fixture::constant_image("c", 64, 64, fill);
    const auto a = m.classify_roi(crop), b = m.classify_roi(crop);
    EXPECT_TRUE(std::isfinite(a.p_fracture));
    EXPECT_GE(a.p_fracture, 0.0);
    EXPECT_LE(a.p_fracture, 1.0);
    EXPECT_EQ(a.p_fracture, b.p_fracture);
    EXPECT_EQ(a.p_subtype, b.p_subtype);
  }
}

class Stage2Training : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    GenConfig g;
    g.n_images = 60;
    g.image_size = 64;
    g.seed = 31;
    data_ = new std::vector<LabeledImage>(generate(g));
    TrainConfig c1;
    c1.epochs = 3;
    stage1_ = new Stage1Model(train_stage1(*data_, c1).model);
  }
  static void TearDownTestSuite() {
    delete data_;
    delete stage1_;
  }
  static Stage2TrainResult run(std::uint64_t seed) {
    TrainConfig c2;
    c2.epochs = 3;
    c2.seed = seed;
    MiningConfig mc;
    mc.seed = seed;
    // Threshold 0: every cell is a candidate, so positives are always mined.
    return train_stage2(*stage1_, *data_, CalibrationResult{0.0, 1.0, 0.99}, mc, c2);
  }
  static std::vector<LabeledImage>* data_;
  static Stage1Model* stage1_;
};
std::vector<LabeledImage>* Stage2Training::data_ = nullptr;
Stage1Model* Stage2Training::stage1_ = nullptr;

TEST_F(Stage2Training, NegativesContributeExactlyKPerEpoch) {
  const auto res = run(1);
  ASSERT_EQ(res.history.size(), 3u);
  std::map<std::pair<std::string, int>, int> per;
  for (const auto& r : res.manifest.records) ++per[{r.image_id, r.epoch}];
  for (const auto& it : *data_) {
    for (int e = 0; e < 3; ++e) {
      const int n = per[{it.image.id(), e}];
      if (it.label.fractured) EXPECT_LE(n, 5);
      else EXPECT_EQ(n, 5);
    }
  }
}

TEST_F(Stage2Training, DeterministicWeightsAndManifest) {
  const auto a = run(2), b = run(2);
  ASSERT_EQ(a.manifest.records.size(), b.manifest.records.size());
  for (std::size_t k = 0; k < a.manifest.records.size(); ++k) {
    EXPECT_EQ(a.manifest.records[k].box, b.manifest.records[k].box);
    EXPECT_EQ(a.manifest.records[k].mining_label, b.manifest.records[k].mining_label);
  }
  Stage2Model na = a.model, nb = b.model;
  for (std::size_t n = 0; n < na.networks().size(); ++n) {
    const auto pa = na.networks()[n]->parameters(), pb = nb.networks()[n]->parameters();
    for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(*pa[k], *pb[k]);
  }
}

TEST_F(Stage2Training, EpochsResampleCells) {
  const auto res = run(3);
  // 4x4 maps with threshold 0: |S'| = 16 > K for every image.
  const std::string id = data_->front().image.id();
  std::set<std::multiset<Cell>> per_epoch;
  for (int e = 0; e < 3; ++e) {
    std::multiset<Cell> cells;
    for (const auto& r : res.manifest.records) {
      if (r.image_id == id && r.epoch == e) cells.insert(r.box.source_cell);
    }
    per_epoch.insert(cells);
  }
  EXPECT_GT(per_epoch.size(), 1u);
}

TEST_F(Stage2Training, NoPositivesMinedIsAConfigError) {
  TrainConfig c2;
  c2.epochs = 1;
  // Threshold above any sigmoid output: nothing is mined from positives.
  EXPECT_THROW(train_stage2(*stage1_, *data_, CalibrationResult{1.0, 0.0, 0.99}, {}, c2),
               ConfigError);
}

TEST_F(Stage2Training, CheckpointRoundTripAndChainedInference) {
  const auto res = run(4);
  const auto dir = std::filesystem::temp_directory_path() / "fracmil_stage2_ckpt";
  std::filesystem::remove_all(dir);
  res.model.save(dir);
  const auto loaded = Stage2Model::load(dir);
  EXPECT_EQ(loaded.roi_size(), res.model.roi_size());
  EXPECT_EQ(loaded.has_subtype_head(), res.model.has_subtype_head());
  for (const auto& it : *data_) {
    const auto a = infer(*stage1_, res.model, it.image);
    const auto b = infer(*stage1_, loaded, it.image);
    EXPECT_EQ(a.p_final, b.p_final);
    EXPECT_EQ(a.p_subtype, b.p_subtype);
    // Chaining invariants.
    EXPECT_LE(a.p_final, a.p_s1);
    EXPECT_LE(a.p_final, a.p_s2);
    EXPECT_EQ(a.p_final, a.p_s1 * a.p_s2);
    const auto mp = max_pool(stage1_->forward_map(it.image));
    EXPECT_EQ(a.p_s1, mp.value);
    EXPECT_EQ(a.roi, cell_to_box(mp.argmax, stage1_->geometry_for(64, 64)));
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace fracmil
