#pragma once
// Experiment orchestration: the JSON configuration, stratified k-fold splits,
// the per-fold pipeline stages (train stage 1, calibrate, train stage 2,
// infer, eval) and the cross-fold aggregate.
//
// Output layout, keyed by config hash and fold:
//   <out>/<hash>/resolved_config.json
//   <out>/<hash>/fold_<k>/stage1/, calibration.json, stage2/,
//       mining_manifest.jsonl, inference_test.jsonl, tau.json,
//       <method>/{scores.jsonl, metrics.json, roc.txt, pr.txt}
//   <out>/<hash>/aggregate.json

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fracmil/chained_inference.hpp"
#include "fracmil/core_types.hpp"
#include "fracmil/eval_metrics.hpp"
#include "fracmil/lse_pooling.hpp"
#include "fracmil/roi_mining.hpp"
#include "fracmil/stage1.hpp"
#include "fracmil/stage2.hpp"
#include "fracmil/synthetic_pxr.hpp"
#include "fracmil/train_config.hpp"
#include "json.hpp"

namespace fracmil {

enum class Method { kSmallGap, kSmallLse, kLargeGap, kLargeLse, kSingleStage, kTwoStage };

inline constexpr std::array<Method, 6> kAllMethods = {Method::kSmallGap,    Method::kSmallLse,
                                                      Method::kLargeGap,    Method::kLargeLse,
                                                      Method::kSingleStage, Method::kTwoStage};

const char* to_string(Method m);
Method method_from_string(const std::string& s);
bool is_baseline(Method m);

struct SplitFractions {
  double train = 0.7, val = 0.1, test = 0.2;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;

  std::string data_dir;  // empty: generate in memory from `generator`
  GenConfig generator;

  int folds = 5;
  SplitFractions split;

  Stage1Options stage1;
  TrainConfig stage1_train;
  Stage2Options stage2;
  TrainConfig stage2_train;
  MiningConfig mining;

  BackboneConfig small_backbone = default_stage1_backbone();
  BackboneConfig large_backbone;  // wider than the small one; set in the constructor
  double feature_lse_r = 10.0;
  TrainConfig baseline_train;

  double operating_point = 0.95;
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};

  ExperimentConfig();
  void validate() const;
  // Per-component seeds are derived from the global seed and the fold.
  TrainConfig seeded(const TrainConfig& base, std::string_view component, int fold) const;
  MiningConfig seeded_mining(int fold) const;
  bool enabled(Method m) const;
};

// Strict parsing: missing keys take defaults, unknown keys are errors.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
// Hex FNV-1a of the resolved config dump.
std::string config_hash(const ExperimentConfig& cfg);

struct Fold {
  std::vector<std::size_t> train, val, test;
};

// Test sets partition the data; each fold's remainder is split into train
// and val by the train:val ratio. Both steps are stratified by the fractured
// label and deterministic per seed. The test fraction must equal 1/folds.
std::vector<Fold> make_folds(std::span<const LabeledImage> data, int folds,
                             const SplitFractions& split, std::uint64_t seed);

// Split-tagged views. Calibration only accepts a TrainSplit and tau selection
// only a ValSplit, so leakage shows up as a compile error.
template <class Tag>
struct Split {
  std::vector<LabeledImage> items;
  std::span<const LabeledImage> span() const { return items; }
};
struct TrainTag {};
struct ValTag {};
struct TestTag {};
using TrainSplit = Split<TrainTag>;
using ValSplit = Split<ValTag>;
using TestSplit = Split<TestTag>;

struct FoldData {
  TrainSplit train;
  ValSplit val;
  TestSplit test;
};

FoldData split_fold(std::span<const LabeledImage> data, const Fold& fold);

CalibrationResult calibrate_on(const Stage1Model& model, const TrainSplit& train, double target);
// Youden threshold on validation p_final, kept inside (0,1).
double select_tau(const Stage1Model& s1, const Stage2Model& s2, const ValSplit& val);

// Fraction of fractured items whose subtype head agrees with the label.
double subtype_accuracy(std::span<const ChainedResult> results, std::span<const LabeledImage> items);

class Experiment {
 public:
  Experiment(ExperimentConfig cfg, std::filesystem::path out_dir);

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& hash() const { return hash_; }
  std::filesystem::path root() const { return out_dir_ / hash_; }
  std::filesystem::path fold_dir(int fold) const;
  std::filesystem::path method_dir(int fold, Method m) const;

  const std::vector<LabeledImage>& dataset();
  FoldData fold_data(int fold);

  void write_resolved_config() const;
  // Writes the dataset as images plus manifest under <root>/data.
  void write_data();

  // Stage 1 (single_stage / two_stage) or a baseline classifier.
  void train(int fold, Method m);
  CalibrationResult calibrate(int fold);
  void train_stage2(int fold);
  // Scores the test split; for two_stage also picks tau on validation.
  void infer(int fold, Method m);
  nlohmann::ordered_json eval(int fold, Method m);
  nlohmann::ordered_json aggregate();

  // Every stage for the given folds and enabled methods. A failing fold is
  // recorded in fold_<k>/error.txt and the rest continue. Returns the
  // number of failed folds.
  int run_all(std::span<const int> folds, std::span<const Method> methods);

 private:
  ExperimentConfig cfg_;
  std::filesystem::path out_dir_;
  std::string hash_;
  std::optional<std::vector<LabeledImage>> data_;
  std::optional<std::vector<Fold>> folds_;
};

}  // namespace fracmil
