#include "fracmil/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fracmil/checkpoint.hpp"
#include "fracmil/global_classifier.hpp"
#include "fracmil/image_io.hpp"
#include "fracmil/rng.hpp"

namespace fracmil {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

const char* to_string(Method m) {
  switch (m) {
    case Method::kSmallGap: return "small_gap";
    case Method::kSmallLse: return "small_lse";
    case Method::kLargeGap: return "large_gap";
    case Method::kLargeLse: return "large_lse";
    case Method::kSingleStage: return "single_stage";
    case Method::kTwoStage: return "two_stage";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : kAllMethods) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown method: " + s);
}

bool is_baseline(Method m) { return m != Method::kSingleStage && m != Method::kTwoStage; }

// ---------------------------------------------------------------- config

ExperimentConfig::ExperimentConfig() {
  generator.n_images = 500;
  large_backbone.widths = {16, 32, 64, 64};
}

void ExperimentConfig::validate() const {
  generator.validate();
  if (folds < 2) throw ConfigError("cv.folds must be >= 2");
  if (split.train <= 0 || split.val <= 0 || split.test <= 0 ||
      std::abs(split.train + split.val + split.test - 1.0) > 1e-9) {
    throw ConfigError("cv.split fractions must be positive and sum to 1");
  }
  if (std::abs(split.test - 1.0 / folds) > 1e-6) {
    throw ConfigError("cv.split test fraction must equal 1/folds");
  }
  stage1.backbone.validate();
  stage1.pooling.validate();
  if (stage1.roi_size != 0 && stage1.roi_size < stage1.backbone.stride()) {
    throw ConfigError("stage1.roi_size must be 0 (default) or >= the stride");
  }
  stage2.backbone.validate();
  small_backbone.validate();
  large_backbone.validate();
  if (!(feature_lse_r > 0)) throw ConfigError("baselines.feature_lse_r must be > 0");
  stage1_train.validate();
  stage2_train.validate();
  baseline_train.validate();
  mining.validate();
  if (!(operating_point > 0 && operating_point <= 1)) {
    throw ConfigError("eval.operating_point must lie in (0,1]");
  }
  if (methods.empty()) throw ConfigError("methods must not be empty");
}

TrainConfig ExperimentConfig::seeded(const TrainConfig& base, std::string_view component,
                                     int fold) const {
  TrainConfig out = base;
  out.seed = mix_key(fnv1a(component, mix_key(0xcbf29ce484222325ULL, seed)),
                     static_cast<std::uint64_t>(fold));
  return out;
}

MiningConfig ExperimentConfig::seeded_mining(int fold) const {
  MiningConfig out = mining;
  out.seed = mix_key(fnv1a("mining", mix_key(0xcbf29ce484222325ULL, seed)),
                     static_cast<std::uint64_t>(fold));
  return out;
}

bool ExperimentConfig::enabled(Method m) const {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class R, class V>
void read_range(const json& j, const char* key, R& dst, const std::string& where) {
  if (!j.contains(key)) return;
  std::vector<V> v;
  read(j, key, v, where);
  if (v.size() != 2) throw ConfigError(where + "." + key + ": expected [min, max]");
  dst = {v[0], v[1]};
}

BackboneConfig backbone_from(const json& j, BackboneConfig b, const std::string& where) {
  check_keys(j, {"widths", "convs_per_block", "kernel"}, where);
  read(j, "widths", b.widths, where);
  read(j, "convs_per_block", b.convs_per_block, where);
  read(j, "kernel", b.kernel, where);
  return b;
}

ojson backbone_json(const BackboneConfig& b) {
  return {{"widths", b.widths}, {"convs_per_block", b.convs_per_block}, {"kernel", b.kernel}};
}

TrainConfig train_from(const json& j, TrainConfig t, const std::string& where) {
  check_keys(j,
             {"epochs", "batch_size", "learning_rate", "plateau_patience", "plateau_factor",
              "horizontal_flip", "adam"},
             where);
  read(j, "epochs", t.epochs, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "learning_rate", t.learning_rate, where);
  read(j, "plateau_patience", t.plateau_patience, where);
  read(j, "plateau_factor", t.plateau_factor, where);
  read(j, "horizontal_flip", t.horizontal_flip, where);
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    check_keys(a, {"beta1", "beta2", "eps"}, where + ".adam");
    read(a, "beta1", t.adam.beta1, where + ".adam");
    read(a, "beta2", t.adam.beta2, where + ".adam");
    read(a, "eps", t.adam.eps, where + ".adam");
  }
  return t;
}

ojson train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"plateau_patience", t.plateau_patience},
          {"plateau_factor", t.plateau_factor},
          {"horizontal_flip", t.horizontal_flip},
          {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}}};
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  return j.contains(key) ? j.at(key) : empty;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  check_keys(j, {"seed", "data", "cv", "stage1", "stage2", "mining", "baselines", "eval", "methods"},
             "config");
  read(j, "seed", c.seed, "config");

  const json& data = section(j, "data");
  check_keys(data, {"dir", "generator"}, "data");
  read(data, "dir", c.data_dir, "data");
  const json& gen = section(data, "generator");
  check_keys(gen,
             {"image_size", "n_images", "positive_fraction", "subtype_fraction_hip",
              "distractor_count", "confuser_count", "lesion_contrast", "seed", "id_prefix"},
             "data.generator");
  read(gen, "image_size", c.generator.image_size, "data.generator");
  read(gen, "n_images", c.generator.n_images, "data.generator");
  read(gen, "positive_fraction", c.generator.positive_fraction, "data.generator");
  read(gen, "subtype_fraction_hip", c.generator.subtype_fraction_hip, "data.generator");
  read_range<IntRange, int>(gen, "distractor_count", c.generator.distractor_count, "data.generator");
  read_range<IntRange, int>(gen, "confuser_count", c.generator.confuser_count, "data.generator");
  read_range<RealRange, double>(gen, "lesion_contrast", c.generator.lesion_contrast,
                                "data.generator");
  read(gen, "seed", c.generator.seed, "data.generator");
  read(gen, "id_prefix", c.generator.id_prefix, "data.generator");

  const json& cv = section(j, "cv");
  check_keys(cv, {"folds", "split"}, "cv");
  read(cv, "folds", c.folds, "cv");
  if (cv.contains("split")) {
    std::vector<double> s;
    read(cv, "split", s, "cv");
    if (s.size() != 3) throw ConfigError("cv.split: expected [train, val, test]");
    c.split = {s[0], s[1], s[2]};
  }

  const json& s1 = section(j, "stage1");
  check_keys(s1, {"backbone", "pooling", "roi_size", "train"}, "stage1");
  c.stage1.backbone = backbone_from(section(s1, "backbone"), c.stage1.backbone, "stage1.backbone");
  const json& pool = section(s1, "pooling");
  check_keys(pool, {"kind", "r"}, "stage1.pooling");
  if (pool.contains("kind")) {
    std::string kind;
    read(pool, "kind", kind, "stage1.pooling");
    try {
      c.stage1.pooling.kind = pooling_kind_from_string(kind);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("stage1.pooling.kind: ") + e.what());
    }
  }
  read(pool, "r", c.stage1.pooling.r, "stage1.pooling");
  read(s1, "roi_size", c.stage1.roi_size, "stage1");
  c.stage1_train = train_from(section(s1, "train"), c.stage1_train, "stage1.train");

  const json& s2 = section(j, "stage2");
  check_keys(s2, {"backbone", "subtype_head", "train"}, "stage2");
  c.stage2.backbone = backbone_from(section(s2, "backbone"), c.stage2.backbone, "stage2.backbone");
  read(s2, "subtype_head", c.stage2.subtype_head, "stage2");
  c.stage2_train = train_from(section(s2, "train"), c.stage2_train, "stage2.train");

  const json& mining = section(j, "mining");
  check_keys(mining, {"k", "target_sensitivity"}, "mining");
  read(mining, "k", c.mining.k, "mining");
  read(mining, "target_sensitivity", c.mining.target_sensitivity, "mining");

  const json& base = section(j, "baselines");
  check_keys(base, {"small_backbone", "large_backbone", "feature_lse_r", "train"}, "baselines");
  c.small_backbone =
      backbone_from(section(base, "small_backbone"), c.small_backbone, "baselines.small_backbone");
  c.large_backbone =
      backbone_from(section(base, "large_backbone"), c.large_backbone, "baselines.large_backbone");
  read(base, "feature_lse_r", c.feature_lse_r, "baselines");
  c.baseline_train = train_from(section(base, "train"), c.baseline_train, "baselines.train");

  const json& ev = section(j, "eval");
  check_keys(ev, {"operating_point"}, "eval");
  read(ev, "operating_point", c.operating_point, "eval");

  if (j.contains("methods")) {
    std::vector<std::string> names;
    read(j, "methods", names, "config");
    c.methods.clear();
    for (const auto& n : names) {
      const Method m = method_from_string(n);
      if (c.enabled(m)) throw ConfigError("methods: duplicate '" + n + "'");
      c.methods.push_back(m);
    }
  }
  c.validate();
  return c;
}

ojson to_json(const ExperimentConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  const GenConfig& g = c.generator;
  j["data"] = {{"dir", c.data_dir},
               {"generator",
                {{"image_size", g.image_size},
                 {"n_images", g.n_images},
                 {"positive_fraction", g.positive_fraction},
                 {"subtype_fraction_hip", g.subtype_fraction_hip},
                 {"distractor_count", {g.distractor_count.min, g.distractor_count.max}},
                 {"confuser_count", {g.confuser_count.min, g.confuser_count.max}},
                 {"lesion_contrast", {g.lesion_contrast.min, g.lesion_contrast.max}},
                 {"seed", g.seed},
                 {"id_prefix", g.id_prefix}}}};
  j["cv"] = {{"folds", c.folds}, {"split", {c.split.train, c.split.val, c.split.test}}};
  j["stage1"] = {{"backbone", backbone_json(c.stage1.backbone)},
                 {"pooling", {{"kind", to_string(c.stage1.pooling.kind)}, {"r", c.stage1.pooling.r}}},
                 {"roi_size", c.stage1.roi_size},
                 {"train", train_json(c.stage1_train)}};
  j["stage2"] = {{"backbone", backbone_json(c.stage2.backbone)},
                 {"subtype_head", c.stage2.subtype_head},
                 {"train", train_json(c.stage2_train)}};
  j["mining"] = {{"k", c.mining.k}, {"target_sensitivity", c.mining.target_sensitivity}};
  j["baselines"] = {{"small_backbone", backbone_json(c.small_backbone)},
                    {"large_backbone", backbone_json(c.large_backbone)},
                    {"feature_lse_r", c.feature_lse_r},
                    {"train", train_json(c.baseline_train)}};
  j["eval"] = {{"operating_point", c.operating_point}};
  ojson methods = ojson::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  j["methods"] = methods;
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
  return architecture_hash(to_json(cfg).dump());
}

// ----------------------------------------------------------------- folds

std::vector<Fold> make_folds(std::span<const LabeledImage> data, int folds,
                             const SplitFractions& split, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (folds < 2) throw ConfigError("make_folds: folds must be >= 2");
  if (n < static_cast<std::size_t>(folds)) throw ConfigError("make_folds: fewer images than folds");

  // Interleave the shuffled classes by fractional rank so that every
  // contiguous run, and every evenly spaced subsequence, is near-stratified.
  struct Slot {
    double key;
    int cls;
    std::size_t index;
  };
  std::vector<Slot> slots;
  for (int cls : {1, 0}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (data[i].label.fractured == (cls == 1)) idx.push_back(i);
    }
    auto rng = keyed_rng(seed, "folds", static_cast<std::uint64_t>(cls));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      slots.push_back({(r + 0.5) / static_cast<double>(idx.size()), cls, idx[r]});
    }
  }
  std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
    return a.key != b.key ? a.key < b.key : a.cls > b.cls;
  });

  std::vector<Fold> out(folds);
  std::size_t begin = 0;
  for (int k = 0; k < folds; ++k) {
    const std::size_t size = n / folds + (static_cast<std::size_t>(k) < n % folds ? 1 : 0);
    std::vector<std::size_t> rest;
    for (std::size_t s = 0; s < n; ++s) {
      if (s >= begin && s < begin + size) {
        out[k].test.push_back(slots[s].index);
      } else {
        rest.push_back(slots[s].index);
      }
    }
    begin += size;
    // Validation takes an exact total, apportioned to the classes by their
    // share of the remainder; members are drawn from a per-fold shuffle.
    const std::size_t n_val = static_cast<std::size_t>(
        std::lround(rest.size() * split.val / (split.train + split.val)));
    std::array<std::vector<std::size_t>, 2> by_cls;
    for (std::size_t i : rest) by_cls[data[i].label.fractured ? 1 : 0].push_back(i);
    std::size_t val_pos = static_cast<std::size_t>(std::lround(
        static_cast<double>(n_val) * by_cls[1].size() / static_cast<double>(rest.size())));
    val_pos = std::min(val_pos, by_cls[1].size());
    const std::array<std::size_t, 2> quota = {std::min(n_val - val_pos, by_cls[0].size()), val_pos};
    for (int cls : {0, 1}) {
      auto rng = keyed_rng(seed, "fold-val", static_cast<std::uint64_t>(k * 2 + cls));
      std::shuffle(by_cls[cls].begin(), by_cls[cls].end(), rng);
      for (std::size_t r = 0; r < by_cls[cls].size(); ++r) {
        (r < quota[cls] ? out[k].val : out[k].train).push_back(by_cls[cls][r]);
      }
    }

    for (auto* part : {&out[k].train, &out[k].val, &out[k].test}) {
      std::sort(part->begin(), part->end());
      bool pos = false, neg = false;
      for (std::size_t i : *part) (data[i].label.fractured ? pos : neg) = true;
      if (!pos || !neg) {
        throw ConfigError("make_folds: a split of fold " + std::to_string(k) +
                          " lacks one class; use more data or fewer folds");
      }
    }
  }
  return out;
}

FoldData split_fold(std::span<const LabeledImage> data, const Fold& fold) {
  FoldData d;
  for (std::size_t i : fold.train) d.train.items.push_back(data[i]);
  for (std::size_t i : fold.val) d.val.items.push_back(data[i]);
  for (std::size_t i : fold.test) d.test.items.push_back(data[i]);
  return d;
}

CalibrationResult calibrate_on(const Stage1Model& model, const TrainSplit& train, double target) {
  std::vector<double> scores;
  for (const auto& item : train.items) {
    if (item.label.fractured) scores.push_back(max_pool(model.forward_map(item.image)).value);
  }
  return calibrate_threshold(scores, target);
}

double select_tau(const Stage1Model& s1, const Stage2Model& s2, const ValSplit& val) {
  ScoredSet set;
  for (const auto& item : val.items) set.add(infer(s1, s2, item.image).p_final, item.label.fractured);
  const double t = youden_threshold(set);
  return std::clamp(t, 1e-9, 1.0 - 1e-9);
}

double subtype_accuracy(std::span<const ChainedResult> results, std::span<const LabeledImage> items) {
  if (results.size() != items.size()) throw DomainError("subtype_accuracy: size mismatch");
  std::size_t n = 0, ok = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].label.fractured || !items[i].label.subtype) continue;
    if (!results[i].p_subtype) throw ConfigError("subtype_accuracy: model has no subtype head");
    ++n;
    const Subtype pred = *results[i].p_subtype >= 0.5 ? Subtype::kHip : Subtype::kPelvic;
    if (pred == *items[i].label.subtype) ++ok;
  }
  if (n == 0) throw DomainError("subtype_accuracy: no fractured items with a subtype");
  return static_cast<double>(ok) / static_cast<double>(n);
}

// ------------------------------------------------------------ experiment

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string() + " (run the earlier stage first)");
  return json::parse(in);
}

ojson history_json(const TrainHistory& h) {
  ojson arr = ojson::array();
  for (const auto& e : h) {
    arr.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"val_loss", std::isnan(e.val_loss) ? ojson(nullptr) : ojson(e.val_loss)},
                   {"learning_rate", e.learning_rate}});
  }
  return arr;
}

GlobalClassifierOptions baseline_options(const ExperimentConfig& c, Method m) {
  GlobalClassifierOptions o;
  const bool large = m == Method::kLargeGap || m == Method::kLargeLse;
  o.backbone = large ? c.large_backbone : c.small_backbone;
  o.pooling = (m == Method::kSmallLse || m == Method::kLargeLse) ? FeaturePooling::kLse
                                                                  : FeaturePooling::kGap;
  o.r = c.feature_lse_r;
  return o;
}

void log(const std::string& msg) { std::fprintf(stderr, "[fracmil] %s\n", msg.c_str()); }

struct ScoreLine {
  std::string id;
  double score;
  bool label;
};

std::vector<ScoreLine> read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string() + " (run infer first)");
  std::vector<ScoreLine> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("image_id").get<std::string>(), j.at("score").get<double>(),
                   j.at("label").get<bool>()});
  }
  return out;
}

Decision actual_decision(const ImageLabel& l) {
  if (!l.fractured) return Decision::kNoFinding;
  return l.subtype && *l.subtype == Subtype::kPelvic ? Decision::kPelvic : Decision::kHip;
}

}  // namespace

Experiment::Experiment(ExperimentConfig cfg, fs::path out_dir)
    : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)) {
  cfg_.validate();
  hash_ = config_hash(cfg_);
}

fs::path Experiment::fold_dir(int fold) const {
  if (fold < 0 || fold >= cfg_.folds) {
    throw ConfigError("fold " + std::to_string(fold) + " out of range [0, " +
                      std::to_string(cfg_.folds) + ")");
  }
  return root() / ("fold_" + std::to_string(fold));
}

fs::path Experiment::method_dir(int fold, Method m) const { return fold_dir(fold) / to_string(m); }

const std::vector<LabeledImage>& Experiment::dataset() {
  if (!data_) {
    data_ = cfg_.data_dir.empty() ? generate(cfg_.generator) : read_dataset(cfg_.data_dir);
  }
  return *data_;
}

FoldData Experiment::fold_data(int fold) {
  fold_dir(fold);  // range check
  if (!folds_) folds_ = make_folds(dataset(), cfg_.folds, cfg_.split, cfg_.seed);
  return split_fold(dataset(), (*folds_)[fold]);
}

void Experiment::write_resolved_config() const {
  write_text(root() / "resolved_config.json", to_json(cfg_).dump(2) + "\n");
}

void Experiment::write_data() { write_dataset(root() / "data", dataset()); }

void Experiment::train(int fold, Method m) {
  const FoldData d = fold_data(fold);
  if (is_baseline(m)) {
    log("fold " + std::to_string(fold) + ": training " + to_string(m));
    auto r = train_global_classifier(d.train.span(), cfg_.seeded(cfg_.baseline_train, to_string(m), fold),
                                     baseline_options(cfg_, m), d.val.span());
    r.model.save(method_dir(fold, m) / "model");
    write_text(method_dir(fold, m) / "history.json", history_json(r.history).dump(2) + "\n");
    return;
  }
  log("fold " + std::to_string(fold) + ": training stage 1");
  auto r = train_stage1(d.train.span(), cfg_.seeded(cfg_.stage1_train, "stage1", fold), cfg_.stage1,
                        d.val.span());
  r.model.save(fold_dir(fold) / "stage1");
  write_text(fold_dir(fold) / "stage1" / "history.json", history_json(r.history).dump(2) + "\n");
}

CalibrationResult Experiment::calibrate(int fold) {
  const FoldData d = fold_data(fold);
  const Stage1Model s1 = Stage1Model::load(fold_dir(fold) / "stage1");
  const CalibrationResult c = calibrate_on(s1, d.train, cfg_.mining.target_sensitivity);
  ojson j;
  j["threshold"] = c.threshold;
  j["achieved_sensitivity"] = c.achieved_sensitivity;
  j["target_sensitivity"] = c.target_sensitivity;
  write_text(fold_dir(fold) / "calibration.json", j.dump(2) + "\n");
  log("fold " + std::to_string(fold) + ": calibrated threshold " + std::to_string(c.threshold));
  return c;
}

void Experiment::train_stage2(int fold) {
  const FoldData d = fold_data(fold);
  const Stage1Model s1 = Stage1Model::load(fold_dir(fold) / "stage1");
  const json cj = read_json(fold_dir(fold) / "calibration.json");
  CalibrationResult cal;
  cal.threshold = cj.at("threshold").get<double>();
  cal.achieved_sensitivity = cj.at("achieved_sensitivity").get<double>();
  cal.target_sensitivity = cj.at("target_sensitivity").get<double>();
  log("fold " + std::to_string(fold) + ": training stage 2");
  auto r = fracmil::train_stage2(s1, d.train.span(), cal, cfg_.seeded_mining(fold),
                                 cfg_.seeded(cfg_.stage2_train, "stage2", fold), cfg_.stage2,
                                 d.val.span());
  r.model.save(fold_dir(fold) / "stage2");
  write_text(fold_dir(fold) / "stage2" / "history.json", history_json(r.history).dump(2) + "\n");
  std::ostringstream manifest;
  write_manifest_jsonl(manifest, r.manifest);
  write_text(fold_dir(fold) / "mining_manifest.jsonl", manifest.str());

  std::map<std::string, ImageLabel> labels;
  bool have_boxes = true;
  for (const auto& item : d.train.items) {
    labels[item.image.id()] = item.label;
    have_boxes = have_boxes && item.label.gt_boxes.has_value();
  }
  ojson mj;
  mj["records"] = r.manifest.records.size();
  mj["misses"] = r.manifest.misses.size();
  mj["mining_label_accuracy"] =
      have_boxes ? ojson(mining_label_accuracy(r.manifest, labels)) : ojson(nullptr);
  write_text(fold_dir(fold) / "mining.json", mj.dump(2) + "\n");
}

void Experiment::infer(int fold, Method m) {
  const FoldData d = fold_data(fold);
  std::ostringstream scores;
  auto score_line = [&](const LabeledImage& item, double s) {
    ojson j;
    j["image_id"] = item.image.id();
    j["score"] = s;
    j["label"] = item.label.fractured;
    scores << j.dump() << '\n';
  };
  if (is_baseline(m)) {
    const GlobalClassifier model = GlobalClassifier::load(method_dir(fold, m) / "model");
    for (const auto& item : d.test.items) score_line(item, model.predict(item.image));
  } else if (m == Method::kSingleStage) {
    const Stage1Model s1 = Stage1Model::load(fold_dir(fold) / "stage1");
    for (const auto& item : d.test.items) score_line(item, max_pool(s1.forward_map(item.image)).value);
  } else {
    const Stage1Model s1 = Stage1Model::load(fold_dir(fold) / "stage1");
    const Stage2Model s2 = Stage2Model::load(fold_dir(fold) / "stage2");
    const double tau = select_tau(s1, s2, d.val);
    write_text(fold_dir(fold) / "tau.json", ojson{{"tau", tau}}.dump(2) + "\n");
    std::ostringstream records;
    for (const auto& item : d.test.items) {
      ChainedResult r = fracmil::infer(s1, s2, item.image);
      if (s2.has_subtype_head()) r.decision = decide_three_class(r, tau);
      records << inference_record_json(item.image.id(), r) << '\n';
      score_line(item, r.p_final);
    }
    write_text(fold_dir(fold) / "inference_test.jsonl", records.str());
  }
  write_text(method_dir(fold, m) / "scores.jsonl", scores.str());
}

ojson Experiment::eval(int fold, Method m) {
  ScoredSet set;
  for (const auto& s : read_scores(method_dir(fold, m) / "scores.jsonl")) set.add(s.score, s.label);
  EvalReport report = evaluate(set, cfg_.operating_point);

  ojson extra;
  if (m == Method::kTwoStage) {
    const FoldData d = fold_data(fold);
    std::map<std::string, const LabeledImage*> by_id;
    for (const auto& item : d.test.items) by_id[item.image.id()] = &item;
    std::ifstream in(fold_dir(fold) / "inference_test.jsonl");
    if (!in) throw IoError("missing inference_test.jsonl (run infer first)");
    std::vector<ChainedResult> results;
    std::vector<LabeledImage> items;
    std::vector<std::pair<Decision, Decision>> decisions;
    std::size_t violations = 0;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::string id;
      const ChainedResult r = parse_inference_record(line, &id);
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw ConfigError("inference record for unknown test image " + id);
      if (r.p_final > r.p_s1) ++violations;
      if (r.decision) decisions.emplace_back(*r.decision, actual_decision(it->second->label));
      results.push_back(r);
      items.push_back(*it->second);
    }
    if (!decisions.empty()) report.three_class = three_class_report(decisions);
    extra["tau"] = read_json(fold_dir(fold) / "tau.json").at("tau").get<double>();
    extra["chaining_violations"] = violations;
    const bool has_subtype = !results.empty() && results.front().p_subtype.has_value();
    extra["subtype_accuracy"] =
        has_subtype ? ojson(subtype_accuracy(results, items)) : ojson(nullptr);
    const json mj = read_json(fold_dir(fold) / "mining.json");
    extra["mining_label_accuracy"] = mj.at("mining_label_accuracy");
  }

  ojson j;
  j["method"] = to_string(m);
  j["fold"] = fold;
  j["operating_point"] = cfg_.operating_point;
  const ojson base = to_json(report);
  for (const auto& [k, v] : base.items()) j[k] = v;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_text(method_dir(fold, m) / "metrics.json", j.dump(2) + "\n");
  std::ostringstream roc, pr;
  write_curve(roc, report.roc);
  write_curve(pr, report.pr);
  write_text(method_dir(fold, m) / "roc.txt", roc.str());
  write_text(method_dir(fold, m) / "pr.txt", pr.str());
  return j;
}

ojson Experiment::aggregate() {
  static constexpr std::array<const char*, 3> kCurveKeys = {"spec_at_recall", "recall_at_spec",
                                                            "prec_at_recall"};
  ojson out;
  out["config_hash"] = hash_;
  out["operating_point"] = cfg_.operating_point;
  ojson methods = ojson::object();
  for (Method m : cfg_.methods) {
    std::vector<json> per_fold;
    ojson folds = ojson::array();
    for (int k = 0; k < cfg_.folds; ++k) {
      const fs::path p = method_dir(k, m) / "metrics.json";
      if (!fs::exists(p)) continue;
      per_fold.push_back(read_json(p));
      folds.push_back(k);
    }
    if (per_fold.empty()) continue;
    // Mean of each scalar over the folds that report it.
    std::vector<std::pair<std::string, std::vector<double>>> cols;
    auto add = [&](const std::string& key, const json& v) {
      if (!v.is_number()) return;
      auto it = std::find_if(cols.begin(), cols.end(), [&](const auto& c) { return c.first == key; });
      if (it == cols.end()) {
        cols.emplace_back(key, std::vector<double>{});
        it = cols.end() - 1;
      }
      it->second.push_back(v.get<double>());
    };
    for (const auto& f : per_fold) {
      add("auc", f.at("auc"));
      for (const char* key : kCurveKeys) add(key, f.at(key).at("value"));
      if (f.contains("three_class")) add("three_class_accuracy", f["three_class"].at("accuracy"));
      if (f.contains("subtype_accuracy")) add("subtype_accuracy", f["subtype_accuracy"]);
      if (f.contains("mining_label_accuracy")) add("mining_label_accuracy", f["mining_label_accuracy"]);
    }
    ojson mean;
    for (const auto& [key, v] : cols) {
      double s = 0.0;
      for (double x : v) s += x;
      mean[key] = s / static_cast<double>(v.size());
    }
    methods[to_string(m)] = {{"folds", folds}, {"mean", mean}};
  }
  out["methods"] = methods;
  write_text(root() / "aggregate.json", out.dump(2) + "\n");
  return out;
}

int Experiment::run_all(std::span<const int> folds, std::span<const Method> methods) {
  write_resolved_config();
  auto want = [&](Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  int failed = 0;
  for (int k : folds) {
    const fs::path err = fold_dir(k) / "error.txt";
    fs::remove(err);
    try {
      for (Method m : methods) {
        if (!is_baseline(m)) continue;
        train(k, m);
        infer(k, m);
        eval(k, m);
      }
      if (want(Method::kSingleStage) || want(Method::kTwoStage)) {
        train(k, Method::kSingleStage);
        if (want(Method::kSingleStage)) {
          infer(k, Method::kSingleStage);
          eval(k, Method::kSingleStage);
        }
        if (want(Method::kTwoStage)) {
          calibrate(k);
          train_stage2(k);
          infer(k, Method::kTwoStage);
          eval(k, Method::kTwoStage);
        }
      }
    } catch (const std::exception& e) {
      ++failed;
      write_text(err, std::string(e.what()) + "\n");
      log("fold " + std::to_string(k) + " failed: " + e.what());
    }
  }
  aggregate();
  return failed;
}

}  // namespace fracmil
