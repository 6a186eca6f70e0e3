#include "fracmil/global_classifier.hpp"

#include <fstream>

#include "fracmil/checkpoint.hpp"
#include "fracmil/image_io.hpp"
#include "json.hpp"
#include "training_loop.hpp"

namespace fracmil {

using nlohmann::ordered_json;

GlobalClassifier::GlobalClassifier(GlobalClassifierOptions options, std::uint64_t seed)
    : options_(std::move(options)), seed_(seed) {
  net_ = options_.backbone.build();
  auto rng = keyed_rng(seed, "global-init");
  net_.init_he(rng);
  if (options_.pooling == FeaturePooling::kGap) {
    net_.add(nn::GlobalAvgPool{});
  } else {
    net_.add(nn::ChannelLse{options_.r});
  }
  net_.conv(options_.backbone.out_channels(), 1, 1);
}

double GlobalClassifier::predict(const GrayscaleImage& image) const {
  if (image.height() < options_.backbone.stride() || image.width() < options_.backbone.stride()) {
    throw DomainError("GlobalClassifier: image smaller than the backbone stride");
  }
  return nn::sigmoid(net_.forward(to_tensor(image)).v[0]);
}

void GlobalClassifier::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  CheckpointBlob blob;
  append_network(blob, "net", net_);
  write_blob(dir / "model.bin", blob);
  ordered_json meta;
  meta["format_version"] = kCheckpointVersion;
  meta["model"] = "global";
  meta["architecture"] = net_.describe();
  meta["architecture_hash"] = architecture_hash(net_.describe());
  meta["backbone"] = {{"widths", options_.backbone.widths},
                      {"convs_per_block", options_.backbone.convs_per_block},
                      {"kernel", options_.backbone.kernel}};
  meta["stride"] = options_.backbone.stride();
  meta["pooling"] = {{"kind", options_.pooling == FeaturePooling::kGap ? "gap" : "lse"},
                     {"r", options_.r}};
  meta["seed"] = seed_;
  std::ofstream(dir / "model.json") << meta.dump(2) << '\n';
}

GlobalClassifier GlobalClassifier::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError("missing metadata in " + dir.string());
  const auto meta = nlohmann::json::parse(in);
  if (meta.at("model") != "global") throw IoError("not a global-classifier checkpoint");
  GlobalClassifierOptions opt;
  opt.backbone.widths = meta.at("backbone").at("widths").get<std::vector<int>>();
  opt.backbone.convs_per_block = meta.at("backbone").at("convs_per_block").get<int>();
  opt.backbone.kernel = meta.at("backbone").at("kernel").get<int>();
  opt.pooling = meta.at("pooling").at("kind") == "gap" ? FeaturePooling::kGap : FeaturePooling::kLse;
  opt.r = meta.at("pooling").at("r").get<double>();
  GlobalClassifier model(opt, meta.at("seed").get<std::uint64_t>());
  if (architecture_hash(model.net_.describe()) != meta.at("architecture_hash").get<std::string>()) {
    throw IoError("architecture hash mismatch in " + dir.string());
  }
  load_network(read_blob(dir / "model.bin"), "net", model.net_);
  return model;
}

GlobalTrainResult train_global_classifier(std::span<const LabeledImage> train,
                                          const TrainConfig& cfg,
                                          const GlobalClassifierOptions& options,
                                          std::span<const LabeledImage> validation) {
  bool any_pos = false, any_neg = false;
  for (const auto& item : train) (item.label.fractured ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg) throw ConfigError("baseline training set must contain both classes");

  GlobalTrainResult result;
  result.model = GlobalClassifier(options, cfg.seed);
  auto& model = result.model;
  result.history = detail::run_training(
      {&model.network()}, cfg, "global-shuffle", [&](int) { return train.size(); },
      [&](std::size_t idx, int, std::vector<nn::Gradients>& grads) {
        const auto& item = train[idx];
        nn::Trace trace;
        const nn::Tensor z = model.network().forward(to_tensor(item.image), trace);
        const double p = nn::sigmoid(z.v[0]);
        nn::Tensor dz(1, 1, 1);
        dz.v[0] = static_cast<float>(bce_grad(p, item.label.fractured) * p * (1.0 - p));
        model.network().backward(trace, dz, grads[0]);
        return bce(p, item.label.fractured);
      },
      [&]() -> std::optional<double> {
        if (validation.empty()) return std::nullopt;
        double sum = 0.0;
        for (const auto& item : validation) sum += bce(model.predict(item.image), item.label.fractured);
        return sum / static_cast<double>(validation.size());
      });
  return result;
}

}  // namespace fracmil
