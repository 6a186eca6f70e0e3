#include "fracmil/stage2.hpp"

#include <fstream>

#include "fracmil/checkpoint.hpp"
#include "fracmil/image_io.hpp"
#include "json.hpp"
#include "training_loop.hpp"

namespace fracmil {

using nlohmann::ordered_json;

BackboneConfig default_stage2_backbone() {
  BackboneConfig cfg;
  cfg.widths = {8, 16, 16};
  cfg.convs_per_block = 2;
  return cfg;
}

Stage2Model::Stage2Model(Stage2Options options, int roi_size, std::uint64_t seed)
    : options_(std::move(options)), roi_size_(roi_size), seed_(seed) {
  if (roi_size_ < options_.backbone.stride()) {
    throw ConfigError("Stage2Model: roi_size smaller than the backbone stride");
  }
  trunk_ = options_.backbone.build();
  auto rng = keyed_rng(seed, "stage2-init");
  trunk_.init_he(rng);
  trunk_.add(nn::GlobalAvgPool{});
  fracture_head_.conv(options_.backbone.out_channels(), 1, 1);
  if (options_.subtype_head) subtype_head_.conv(options_.backbone.out_channels(), 1, 1);
}

RoiScores Stage2Model::classify_roi(const GrayscaleImage& crop) const {
  if (crop.height() != roi_size_ || crop.width() != roi_size_) {
    throw DomainError("classify_roi: crop size does not match the model roi_size");
  }
  const nn::Tensor f = trunk_.forward(to_tensor(crop));
  RoiScores out;
  out.p_fracture = nn::sigmoid(fracture_head_.forward(f).v[0]);
  if (options_.subtype_head) out.p_subtype = nn::sigmoid(subtype_head_.forward(f).v[0]);
  return out;
}

void Stage2Model::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  CheckpointBlob blob;
  append_network(blob, "trunk", trunk_);
  append_network(blob, "fracture_head", fracture_head_);
  if (options_.subtype_head) append_network(blob, "subtype_head", subtype_head_);
  write_blob(dir / "model.bin", blob);

  const std::string arch = trunk_.describe() + "#" + fracture_head_.describe() + "#" +
                           (options_.subtype_head ? subtype_head_.describe() : "");
  ordered_json meta;
  meta["format_version"] = kCheckpointVersion;
  meta["model"] = "stage2";
  meta["architecture"] = arch;
  meta["architecture_hash"] = architecture_hash(arch);
  meta["backbone"] = {{"widths", options_.backbone.widths},
                      {"convs_per_block", options_.backbone.convs_per_block},
                      {"kernel", options_.backbone.kernel}};
  meta["roi_size"] = roi_size_;
  meta["subtype_head"] = options_.subtype_head;
  meta["seed"] = seed_;
  std::ofstream(dir / "model.json") << meta.dump(2) << '\n';
}

Stage2Model Stage2Model::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError("missing stage-2 metadata in " + dir.string());
  const auto meta = nlohmann::json::parse(in);
  if (meta.at("model") != "stage2") throw IoError("not a stage-2 checkpoint: " + dir.string());
  Stage2Options opt;
  opt.backbone.widths = meta.at("backbone").at("widths").get<std::vector<int>>();
  opt.backbone.convs_per_block = meta.at("backbone").at("convs_per_block").get<int>();
  opt.backbone.kernel = meta.at("backbone").at("kernel").get<int>();
  opt.subtype_head = meta.at("subtype_head").get<bool>();
  Stage2Model model(opt, meta.at("roi_size").get<int>(), meta.at("seed").get<std::uint64_t>());
  const auto blob = read_blob(dir / "model.bin");
  load_network(blob, "trunk", model.trunk_);
  load_network(blob, "fracture_head", model.fracture_head_);
  if (opt.subtype_head) load_network(blob, "subtype_head", model.subtype_head_);
  return model;
}

std::vector<nn::Network*> Stage2Model::networks() {
  std::vector<nn::Network*> nets = {&trunk_, &fracture_head_};
  if (options_.subtype_head) nets.push_back(&subtype_head_);
  return nets;
}

std::vector<nn::Gradients> Stage2Model::make_gradients() const {
  std::vector<nn::Gradients> g = {trunk_.make_gradients(), fracture_head_.make_gradients()};
  if (options_.subtype_head) g.push_back(subtype_head_.make_gradients());
  return g;
}

double stage2_sample_step(const Stage2Model& model, const RoiSample& sample,
                          std::span<nn::Gradients> grads, bool flip) {
  nn::Trace trunk_trace, head_trace;
  const nn::Tensor f = model.trunk().forward(to_tensor(sample.crop, flip), trunk_trace);
  const bool positive = sample.mining_label == MiningLabel::kProbablePositive;

  const double p = nn::sigmoid(model.fracture_head().forward(f, head_trace).v[0]);
  nn::Tensor dz(1, 1, 1);
  dz.v[0] = static_cast<float>(bce_grad(p, positive) * p * (1.0 - p));
  nn::Tensor df = model.fracture_head().backward(head_trace, dz, grads[1], true);
  double loss = bce(p, positive);

  if (model.has_subtype_head() && positive && sample.subtype) {
    const bool hip = *sample.subtype == Subtype::kHip;
    nn::Trace sub_trace;
    const double ps = nn::sigmoid(model.subtype_head().forward(f, sub_trace).v[0]);
    nn::Tensor dzs(1, 1, 1);
    dzs.v[0] = static_cast<float>(bce_grad(ps, hip) * ps * (1.0 - ps));
    const nn::Tensor dfs = model.subtype_head().backward(sub_trace, dzs, grads[2], true);
    for (std::size_t k = 0; k < df.v.size(); ++k) df.v[k] += dfs.v[k];
    loss += bce(ps, hip);
  }
  model.trunk().backward(trunk_trace, df, grads[0]);
  return loss;
}

Stage2TrainResult train_stage2(const Stage1Model& stage1, std::span<const LabeledImage> train,
                               const CalibrationResult& calibration,
                               const MiningConfig& mining_cfg, const TrainConfig& cfg,
                               const Stage2Options& options,
                               std::span<const LabeledImage> validation) {
  mining_cfg.validate();
  const int roi = stage1.roi_size();
  if (options.backbone.stride() > roi) throw ConfigError("stage-2 backbone stride exceeds roi_size");

  std::vector<ProbabilityMap> maps;
  maps.reserve(train.size());
  for (const auto& item : train) maps.push_back(stage1.forward_map(item.image));

  Stage2TrainResult result;
  result.model = Stage2Model(options, roi, cfg.seed);
  result.manifest.calibration = calibration;
  auto& model = result.model;

  std::vector<RoiSample> pool;
  auto mine_epoch = [&](int epoch) {
    pool.clear();
    for (std::size_t n = 0; n < train.size(); ++n) {
      auto outcome = mine_rois(train[n].image, train[n].label, maps[n], calibration.threshold,
                               mining_cfg, epoch);
      if (outcome.miss) result.manifest.misses.emplace_back(train[n].image.id(), epoch);
      for (auto& s : outcome.samples) {
        result.manifest.records.push_back(to_record(s, train[n].image.id(), epoch));
        pool.push_back(std::move(s));
      }
    }
    const bool any_positive = std::any_of(pool.begin(), pool.end(), [](const RoiSample& s) {
      return s.mining_label == MiningLabel::kProbablePositive;
    });
    if (!any_positive) {
      throw ConfigError("train_stage2: no probable-positive ROI mined (threshold too high?)");
    }
    return pool.size();
  };

  // Validation ROIs are drawn once (epoch 0) from the validation images.
  std::vector<RoiSample> val_pool;
  for (const auto& item : validation) {
    const auto map = stage1.forward_map(item.image);
    auto outcome = mine_rois(item.image, item.label, map, calibration.threshold, mining_cfg, 0);
    for (auto& s : outcome.samples) val_pool.push_back(std::move(s));
  }

  result.history = detail::run_training(
      model.networks(), cfg, "stage2-shuffle", mine_epoch,
      [&](std::size_t idx, int epoch, std::vector<nn::Gradients>& g) {
        bool flip = false;
        if (cfg.horizontal_flip) {
          auto rng = keyed_rng(cfg.seed, "stage2-flip", pool[idx].crop.id(),
                               static_cast<std::uint64_t>(epoch));
          flip = (rng() & 1u) != 0;
        }
        return stage2_sample_step(model, pool[idx], g, flip);
      },
      [&]() -> std::optional<double> {
        if (val_pool.empty()) return std::nullopt;
        double sum = 0.0;
        for (const auto& s : val_pool) {
          sum += bce(model.classify_roi(s.crop).p_fracture,
                     s.mining_label == MiningLabel::kProbablePositive);
        }
        return sum / static_cast<double>(val_pool.size());
      });
  return result;
}

}  // namespace fracmil
