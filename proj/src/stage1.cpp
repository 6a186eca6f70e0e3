#include "fracmil/stage1.hpp"

#include <cmath>
#include <fstream>

#include "fracmil/checkpoint.hpp"
#include "fracmil/image_io.hpp"
#include "json.hpp"
#include "training_loop.hpp"

namespace fracmil {

using nlohmann::ordered_json;

void BackboneConfig::validate() const {
  if (widths.empty()) throw ConfigError("BackboneConfig: at least one block required");
  for (int w : widths) {
    if (w < 1) throw ConfigError("BackboneConfig: block width must be >= 1");
  }
  if (convs_per_block < 1) throw ConfigError("BackboneConfig: convs_per_block must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("BackboneConfig: kernel must be odd");
}

nn::Network BackboneConfig::build(bool pool_last) const {
  validate();
  nn::Network net;
  int in = 1;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    for (int c = 0; c < convs_per_block; ++c) {
      net.conv(in, widths[b], kernel).relu();
      in = widths[b];
    }
    if (pool_last || b + 1 < widths.size()) net.maxpool();
  }
  return net;
}

BackboneConfig default_stage1_backbone() { return BackboneConfig{}; }

nn::Tensor to_tensor(const GrayscaleImage& image, bool flip_horizontal) {
  nn::Tensor t(1, image.height(), image.width());
  const auto& px = image.pixels();
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      t.at(0, y, flip_horizontal ? image.width() - 1 - x : x) = px(y, x) - 0.5f;
    }
  }
  return t;
}

MapLoss pooled_bce(const ProbabilityMap& map, bool fractured, const PoolingConfig& pooling) {
  MapLoss out;
  out.grad = Grid2D<double>(map.rows(), map.cols(), 0.0);
  switch (pooling.kind) {
    case PoolingKind::kLse: {
      auto res = lse_pool(map, pooling.r);
      out.pooled = res.value;
      out.grad = std::move(res.weights);
      break;
    }
    case PoolingKind::kMax: {
      auto res = max_pool(map);
      out.pooled = res.value;
      out.grad(res.argmax.i, res.argmax.j) = 1.0;
      break;
    }
    case PoolingKind::kGap: {
      out.pooled = gap_pool(map);
      for (double& g : out.grad.data()) g = 1.0 / static_cast<double>(map.values().size());
      break;
    }
  }
  out.loss = bce(out.pooled, fractured);
  const double dpool = bce_grad(out.pooled, fractured);
  for (double& g : out.grad.data()) g *= dpool;
  return out;
}

Stage1Model::Stage1Model(BackboneConfig backbone, PoolingConfig pooling, int roi_size,
                         std::uint64_t seed)
    : backbone_cfg_(std::move(backbone)), pooling_(pooling), roi_size_(roi_size), seed_(seed) {
  pooling_.validate();
  net_ = backbone_cfg_.build();
  if (roi_size_ <= 0) roi_size_ = 4 * backbone_cfg_.stride();
  if (roi_size_ < backbone_cfg_.stride()) throw ConfigError("Stage1Model: roi_size < stride");
  auto rng = keyed_rng(seed, "stage1-init");
  net_.init_he(rng);
  net_.conv(backbone_cfg_.out_channels(), 1, 1);  // head, zero-initialized
}

MapGeometry Stage1Model::geometry_for(int image_height, int image_width) const {
  return MapGeometry(stride(), roi_size_, image_height, image_width);
}

ProbabilityMap Stage1Model::forward_map(const GrayscaleImage& image) const {
  if (image.height() < stride() || image.width() < stride()) {
    throw DomainError("forward_map: image smaller than the model stride");
  }
  const nn::Tensor z = net_.forward(to_tensor(image));
  Grid2D<double> p(z.h, z.w);
  for (std::size_t k = 0; k < z.v.size(); ++k) p.data()[k] = nn::sigmoid(z.v[k]);
  return ProbabilityMap(std::move(p), geometry_for(image.height(), image.width()));
}

std::size_t Stage1Model::backbone_parameter_count() const {
  const auto& head = std::get<nn::Conv2d>(net_.layers().back());
  return net_.parameter_count() - head.weight.size() - head.bias.size();
}

void Stage1Model::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  CheckpointBlob blob;
  append_network(blob, "net", net_);
  write_blob(dir / "model.bin", blob);

  ordered_json meta;
  meta["format_version"] = kCheckpointVersion;
  meta["model"] = "stage1";
  meta["architecture"] = net_.describe();
  meta["architecture_hash"] = architecture_hash(net_.describe());
  meta["backbone"] = {{"widths", backbone_cfg_.widths},
                      {"convs_per_block", backbone_cfg_.convs_per_block},
                      {"kernel", backbone_cfg_.kernel}};
  meta["stride"] = stride();
  meta["roi_size"] = roi_size_;
  meta["pooling"] = {{"kind", to_string(pooling_.kind)}, {"r", pooling_.r}};
  meta["seed"] = seed_;
  meta["epoch"] = epoch_;
  std::ofstream(dir / "model.json") << meta.dump(2) << '\n';
}

Stage1Model Stage1Model::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError("missing stage-1 metadata in " + dir.string());
  const auto meta = nlohmann::json::parse(in);
  if (meta.at("model") != "stage1") throw IoError("not a stage-1 checkpoint: " + dir.string());
  BackboneConfig bb;
  bb.widths = meta.at("backbone").at("widths").get<std::vector<int>>();
  bb.convs_per_block = meta.at("backbone").at("convs_per_block").get<int>();
  bb.kernel = meta.at("backbone").at("kernel").get<int>();
  PoolingConfig pooling;
  pooling.kind = pooling_kind_from_string(meta.at("pooling").at("kind").get<std::string>());
  pooling.r = meta.at("pooling").at("r").get<double>();
  Stage1Model model(bb, pooling, meta.at("roi_size").get<int>(), meta.at("seed").get<std::uint64_t>());
  model.epoch_ = meta.at("epoch").get<int>();
  if (architecture_hash(model.net_.describe()) != meta.at("architecture_hash").get<std::string>()) {
    throw IoError("stage-1 architecture hash mismatch in " + dir.string());
  }
  load_network(read_blob(dir / "model.bin"), "net", model.net_);
  return model;
}

double image_loss(const Stage1Model& model, const GrayscaleImage& image, const ImageLabel& label) {
  return pooled_bce(model.forward_map(image), label.fractured, model.pooling()).loss;
}

namespace {

// One forward/backward pass on a single image; returns its loss.
double stage1_step(const Stage1Model& model, const LabeledImage& item, bool flip,
                   nn::Gradients& grads) {
  const auto& net = model.network();
  nn::Trace trace;
  const nn::Tensor z = net.forward(to_tensor(item.image, flip), trace);
  Grid2D<double> p(z.h, z.w);
  for (std::size_t k = 0; k < z.v.size(); ++k) p.data()[k] = nn::sigmoid(z.v[k]);
  const ProbabilityMap map(p, model.geometry_for(item.image.height(), item.image.width()));
  const MapLoss ml = pooled_bce(map, item.label.fractured, model.pooling());
  nn::Tensor dz(1, z.h, z.w);
  for (std::size_t k = 0; k < dz.v.size(); ++k) {
    const double pk = p.data()[k];
    dz.v[k] = static_cast<float>(ml.grad.data()[k] * pk * (1.0 - pk));
  }
  net.backward(trace, dz, grads);
  return ml.loss;
}

}  // namespace

Stage1TrainResult train_stage1(std::span<const LabeledImage> train, const TrainConfig& cfg,
                               const Stage1Options& options,
                               std::span<const LabeledImage> validation) {
  bool any_pos = false, any_neg = false;
  for (const auto& item : train) (item.label.fractured ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg) {
    throw ConfigError("train_stage1: training set must contain both fractured and clean images");
  }
  Stage1TrainResult result;
  result.model = Stage1Model(options.backbone, options.pooling, options.roi_size, cfg.seed);
  Stage1Model& model = result.model;
  result.history = detail::run_training(
      {&model.network()}, cfg, "stage1-shuffle",
      [&](int) { return train.size(); },
      [&](std::size_t idx, int epoch, std::vector<nn::Gradients>& grads) {
        bool flip = false;
        if (cfg.horizontal_flip) {
          auto rng = keyed_rng(cfg.seed, "stage1-flip", train[idx].image.id(),
                               static_cast<std::uint64_t>(epoch));
          flip = (rng() & 1u) != 0;
        }
        return stage1_step(model, train[idx], flip, grads[0]);
      },
      [&]() -> std::optional<double> {
        if (validation.empty()) return std::nullopt;
        double sum = 0.0;
        for (const auto& item : validation) sum += image_loss(model, item.image, item.label);
        return sum / static_cast<double>(validation.size());
      });
  model.set_epoch(cfg.epochs);
  return result;
}

}  // namespace fracmil
