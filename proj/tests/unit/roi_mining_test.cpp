#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "fracmil/roi_mining.hpp"
#include "oracles.hpp"

namespace fracmil {
namespace {

const MapGeometry kGeom(16, 64, 128, 128);

// 8x8 map at 0.1 with the listed cells raised to 0.9.
ProbabilityMap map_with_hot(const std::vector<Cell>& hot) {
  Grid2D<double> g(8, 8, 0.1);
  for (Cell c : hot) g(c.i, c.j) = 0.9;
  return ProbabilityMap(g, kGeom);
}

ImageLabel positive(Subtype s = Subtype::kPelvic) {
  return {true, s, std::vector<PixelRect>{{40, 40, 80, 80}}};
}
ImageLabel negative() { return {false, std::nullopt, std::nullopt}; }

TEST(Calibrate, EnumeratedExample) {
  const std::vector<double> s = {0.95, 0.9, 0.85, 0.2};
  const auto r = calibrate_threshold(s, 0.75);
  EXPECT_EQ(r.threshold, 0.85);
  EXPECT_EQ(r.achieved_sensitivity, 0.75);
  EXPECT_EQ(r.target_sensitivity, 0.75);
  const auto [t, sens] = oracle::calibrate(s, 0.75);
  EXPECT_EQ(r.threshold, t);
  EXPECT_EQ(r.achieved_sensitivity, sens);
}

TEST(Calibrate, FullSensitivityPicksMinimum) {
  const std::vector<double> s = {0.4, 0.93, 0.61, 0.05};
  const auto r = calibrate_threshold(s, 1.0);
  EXPECT_EQ(r.threshold, 0.05);
  EXPECT_EQ(r.achieved_sensitivity, 1.0);
}

TEST(Calibrate, AllEqualScores) {
  const std::vector<double> s(5, 0.7);
  for (double target : {0.1, 0.5, 0.99, 1.0}) {
    const auto r = calibrate_threshold(s, target);
    EXPECT_EQ(r.threshold, 0.7);
    EXPECT_EQ(r.achieved_sensitivity, 1.0);
  }
}

TEST(Calibrate, Errors) {
  const std::vector<double> empty;
  EXPECT_THROW(calibrate_threshold(empty, 0.9), DomainError);
  const std::vector<double> bad = {0.5, 1.5};
  EXPECT_THROW(calibrate_threshold(bad, 0.9), DomainError);
}

TEST(CalibrateProperty, MatchesEnumerationWithTies) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> n(1, 40), level(0, 20);
  std::uniform_real_distribution<double> target(0.01, 1.0);
  for (int t = 0; t < 300; ++t) {
    std::vector<double> s(static_cast<std::size_t>(n(rng)));
    for (double& v : s) v = level(rng) / 20.0;  // coarse levels force ties
    const double tg = t % 10 == 0 ? 1.0 : target(rng);
    const auto r = calibrate_threshold(s, tg);
    const auto [ot, os] = oracle::calibrate(s, tg);
    ASSERT_EQ(r.threshold, ot);
    ASSERT_EQ(r.achieved_sensitivity, os);
    ASSERT_GE(r.achieved_sensitivity, tg);
  }
}

TEST(CandidateSet, Examples) {
  Grid2D<double> g(2, 2);
  g.data() = {0.1, 0.9, 0.95, 0.2};
  const ProbabilityMap m(g, MapGeometry(1, 1, 2, 2));
  EXPECT_EQ(candidate_set(m, 0.9), (std::vector<Cell>{{0, 1}, {1, 0}}));
  EXPECT_EQ(candidate_set(m, 0.0).size(), 4u);
  Grid2D<double> h(2, 2, 0.99);
  EXPECT_TRUE(candidate_set(ProbabilityMap(h, MapGeometry(1, 1, 2, 2)), 1.0).empty());
}

TEST(CandidateSetProperty, RaisingThresholdNeverGrows) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    Grid2D<double> g(6, 5);
    for (double& v : g.data()) v = u(rng);
    const ProbabilityMap m(g, MapGeometry(1, 1, 6, 5));
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    const auto sa = candidate_set(m, a), sb = candidate_set(m, b);
    ASSERT_LE(sb.size(), sa.size());
    const std::set<Cell> big(sa.begin(), sa.end());
    for (Cell c : sb) ASSERT_TRUE(big.count(c));
  }
}

TEST(MineRois, FracturedWithTwoCandidates) {
  const auto img = fixture::image("p", 128, 128, 1);
  const auto out = mine_rois(img, positive(), map_with_hot({{1, 1}, {5, 6}}), 0.5, {}, 0);
  EXPECT_FALSE(out.miss);
  ASSERT_EQ(out.samples.size(), 2u);
  for (const auto& s : out.samples) {
    EXPECT_EQ(s.mining_label, MiningLabel::kProbablePositive);
    EXPECT_EQ(s.subtype, Subtype::kPelvic);
    EXPECT_EQ(s.cell_prob, 0.9);
    EXPECT_EQ(s.crop.height(), 64);
    EXPECT_EQ(s.box, cell_to_box(s.box.source_cell, kGeom));
  }
}

TEST(MineRois, CleanWithSevenCandidatesIsAllHard) {
  const auto img = fixture::image("n", 128, 128, 2);
  const std::vector<Cell> hot = {{0, 0}, {0, 1}, {2, 2}, {3, 3}, {4, 5}, {6, 6}, {7, 7}};
  const auto out = mine_rois(img, negative(), map_with_hot(hot), 0.5, {}, 0);
  ASSERT_EQ(out.samples.size(), 5u);
  for (const auto& s : out.samples) {
    EXPECT_EQ(s.mining_label, MiningLabel::kHardNegative);
    EXPECT_FALSE(s.subtype.has_value());
  }
}

TEST(MineRois, CleanWithOneCandidateIsToppedUp) {
  const auto img = fixture::image("n", 128, 128, 3);
  const auto out = mine_rois(img, negative(), map_with_hot({{3, 4}}), 0.5, {}, 0);
  ASSERT_EQ(out.samples.size(), 5u);
  int hard = 0, random = 0;
  std::set<Cell> cells;
  for (const auto& s : out.samples) {
    cells.insert(s.box.source_cell);
    if (s.mining_label == MiningLabel::kHardNegative) {
      ++hard;
      EXPECT_EQ(s.box.source_cell, (Cell{3, 4}));
    } else {
      ++random;
      EXPECT_EQ(s.mining_label, MiningLabel::kRandomNegative);
      EXPECT_LT(s.cell_prob, 0.5);
    }
  }
  EXPECT_EQ(hard, 1);
  EXPECT_EQ(random, 4);
  EXPECT_EQ(cells.size(), 5u);
}

TEST(MineRois, FracturedWithEmptyCandidateSetIsAMiss) {
  const auto img = fixture::image("p", 128, 128, 4);
  const auto out = mine_rois(img, positive(), map_with_hot({}), 0.5, {}, 0);
  EXPECT_TRUE(out.miss);
  EXPECT_TRUE(out.samples.empty());
}

TEST(MineRois, MapSmallerThanKOnCleanImageIsAConfigError) {
  const auto img = fixture::image("n", 32, 32, 5);
  const ProbabilityMap m(Grid2D<double>(2, 2, 0.1), MapGeometry(16, 16, 32, 32));
  EXPECT_THROW(mine_rois(img, negative(), m, 0.5, {}, 0), ConfigError);
}

TEST(MineRois, DeterministicPerKeyAndVariesAcrossEpochs) {
  const auto img = fixture::image("n", 128, 128, 6);
  std::vector<Cell> hot;
  for (int j = 0; j < 8; ++j) hot.push_back({2, j});
  const auto map = map_with_hot(hot);
  auto cells_of = [&](const MiningOutcome& o) {
    std::vector<Cell> c;
    for (const auto& s : o.samples) c.push_back(s.box.source_cell);
    return c;
  };
  const auto a = cells_of(mine_rois(img, negative(), map, 0.5, {}, 3));
  const auto b = cells_of(mine_rois(img, negative(), map, 0.5, {}, 3));
  EXPECT_EQ(a, b);
  std::set<std::multiset<Cell>> seen;
  for (int e = 0; e < 10; ++e) {
    const auto c = cells_of(mine_rois(img, negative(), map, 0.5, {}, e));
    seen.insert({c.begin(), c.end()});
  }
  EXPECT_GT(seen.size(), 1u);
  MiningConfig other;
  other.seed = 99;
  EXPECT_NE(a, cells_of(mine_rois(img, negative(), map, 0.5, other, 3)));
}

TEST(MineRoisProperty, CountContractAndPurityOnRandomMaps) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 200; ++t) {
    Grid2D<double> g(8, 8);
    for (double& v : g.data()) v = u(rng);
    const ProbabilityMap m(g, kGeom);
    const double thr = u(rng);
    const bool frac = t % 2 == 0;
    const auto img = fixture::constant_image("img" + std::to_string(t), 128, 128, 0.5f);
    const auto out = mine_rois(img, frac ? positive() : negative(), m, thr, {}, t);
    const std::size_t n_cand = candidate_set(m, thr).size();
    std::set<Cell> cells;
    std::size_t hard = 0;
    for (const auto& s : out.samples) {
      cells.insert(s.box.source_cell);
      if (frac) ASSERT_EQ(s.mining_label, MiningLabel::kProbablePositive);
      else ASSERT_NE(s.mining_label, MiningLabel::kProbablePositive);
      hard += s.mining_label == MiningLabel::kHardNegative;
    }
    ASSERT_EQ(cells.size(), out.samples.size());
    if (frac) {
      ASSERT_EQ(out.samples.size(), std::min<std::size_t>(5, n_cand));
    } else {
      ASSERT_EQ(out.samples.size(), 5u);
      ASSERT_EQ(hard, std::min<std::size_t>(5, n_cand));
    }
  }
}

MiningRecord record(const std::string& id, PixelRect r) {
  return {id, 0, {r, {0, 0}}, MiningLabel::kProbablePositive, 0.9, Subtype::kHip};
}

TEST(MiningAccuracy, Examples) {
  std::map<std::string, ImageLabel> labels = {
      {"a", {true, Subtype::kHip, std::vector<PixelRect>{{40, 40, 80, 80}}}},
      {"b", {true, Subtype::kHip, std::vector<PixelRect>{{0, 0, 10, 10}, {100, 100, 120, 120}}}}};
  MiningManifest all_in;
  all_in.records = {record("a", {30, 30, 90, 90}), record("b", {80, 80, 140, 140})};
  EXPECT_EQ(mining_label_accuracy(all_in, labels), 1.0);

  MiningManifest none;
  none.records = {record("a", {0, 0, 30, 30}), record("b", {30, 30, 60, 60})};
  EXPECT_EQ(mining_label_accuracy(none, labels), 0.0);

  // Center inside; IoU only (center outside); neither; center inside a second gt.
  MiningManifest mixed;
  mixed.records = {record("a", {50, 50, 70, 70}), record("a", {10, 40, 66, 80}),
                   record("a", {80, 0, 120, 40}), record("b", {96, 96, 128, 128})};
  // Negative records are ignored by the metric.
  auto neg = record("a", {0, 0, 10, 10});
  neg.mining_label = MiningLabel::kHardNegative;
  mixed.records.push_back(neg);
  EXPECT_EQ(mining_label_accuracy(mixed, labels), 0.75);

  std::size_t hits = 0, n = 0;
  for (const auto& r : mixed.records) {
    if (r.mining_label != MiningLabel::kProbablePositive) continue;
    std::vector<oracle::Rect> gts;
    for (const auto& b : *labels.at(r.image_id).gt_boxes) gts.push_back({b.x0, b.y0, b.x1, b.y1});
    ++n;
    hits += oracle::roi_matches({r.box.rect.x0, r.box.rect.y0, r.box.rect.x1, r.box.rect.y1}, gts);
  }
  EXPECT_EQ(static_cast<double>(hits) / static_cast<double>(n), 0.75);
}

TEST(MiningAccuracy, IouOnlyMatchIsCounted) {
  // Center (45, 60) lies outside [46,80) but IoU = 960 / 2400 = 0.4.
  std::map<std::string, ImageLabel> labels = {
      {"a", {true, Subtype::kHip, std::vector<PixelRect>{{46, 40, 80, 80}}}}};
  MiningManifest m;
  m.records = {record("a", {20, 40, 70, 80})};
  EXPECT_EQ(mining_label_accuracy(m, labels), 1.0);
}

TEST(MiningAccuracy, MissingGtBoxesIsAConfigError) {
  std::map<std::string, ImageLabel> labels = {{"a", {true, Subtype::kHip, std::nullopt}}};
  MiningManifest m;
  m.records = {record("a", {0, 0, 10, 10})};
  EXPECT_THROW(mining_label_accuracy(m, labels), ConfigError);
  m.records = {record("zzz", {0, 0, 10, 10})};
  EXPECT_THROW(mining_label_accuracy(m, labels), ConfigError);
}

TEST(Manifest, JsonLinesRoundTripWithStableFieldOrder) {
  MiningManifest m;
  m.records = {record("a", {1, 2, 3, 4}),
               {"b", 7, {{0, 0, 40, 40}, {0, 0}}, MiningLabel::kRandomNegative, 0.125, std::nullopt}};
  std::ostringstream out;
  write_manifest_jsonl(out, m);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            R"({"image_id":"a","epoch":0,"x0":1,"y0":2,"x1":3,"y1":4,"cell_i":0,"cell_j":0,)"
            R"("mining_label":"probable_positive","cell_prob":0.9,"subtype":"hip"})");
  std::istringstream in(text);
  const auto back = read_manifest_jsonl(in);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back[k].image_id, m.records[k].image_id);
    EXPECT_EQ(back[k].epoch, m.records[k].epoch);
    EXPECT_EQ(back[k].box, m.records[k].box);
    EXPECT_EQ(back[k].mining_label, m.records[k].mining_label);
    EXPECT_EQ(back[k].cell_prob, m.records[k].cell_prob);
    EXPECT_EQ(back[k].subtype, m.records[k].subtype);
  }
}

}  // namespace
}  // namespace fracmil
