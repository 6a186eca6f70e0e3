#include "fracmil/roi_mining.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "fracmil/rng.hpp"
#include "json.hpp"

namespace fracmil {

void MiningConfig::validate() const {
  if (k < 1) throw ConfigError("MiningConfig: K must be >= 1");
  if (!(target_sensitivity > 0.0 && target_sensitivity <= 1.0)) {
    throw ConfigError("MiningConfig: target sensitivity must lie in (0,1]");
  }
}

CalibrationResult calibrate_threshold(std::span<const double> positive_scores, double target) {
  if (positive_scores.empty()) throw DomainError("calibrate_threshold: no positive scores");
  if (!(target > 0.0 && target <= 1.0)) throw DomainError("calibrate_threshold: bad target");
  std::vector<double> s(positive_scores.begin(), positive_scores.end());
  for (double v : s) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("calibrate_threshold: score outside [0,1]");
  }
  std::sort(s.begin(), s.end(), std::greater<>());
  const double n = static_cast<double>(s.size());
  CalibrationResult out{0.0, 1.0, target};
  // Walk thresholds from high to low; count(score >= s[k]) includes ties.
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k + 1 < s.size() && s[k + 1] == s[k]) continue;
    const double sens = static_cast<double>(k + 1) / n;
    if (sens >= target) {
      out.threshold = s[k];
      out.achieved_sensitivity = sens;
      return out;
    }
  }
  return out;
}

std::vector<Cell> candidate_set(const ProbabilityMap& map, double threshold) {
  std::vector<Cell> out;
  for (int i = 0; i < map.rows(); ++i) {
    for (int j = 0; j < map.cols(); ++j) {
      if (map(i, j) >= threshold) out.push_back(Cell{i, j});
    }
  }
  return out;
}

namespace {

std::vector<Cell> sample_without_replacement(std::vector<Cell> pool, std::size_t n, Rng& rng) {
  n = std::min(n, pool.size());
  // Partial Fisher-Yates.
  for (std::size_t k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
  pool.resize(n);
  return pool;
}

RoiSample make_sample(const GrayscaleImage& image, const ProbabilityMap& map, Cell cell,
                      MiningLabel label, std::optional<Subtype> subtype) {
  RoiSample s;
  s.box = cell_to_box(cell, map.geometry());
  s.crop = crop_roi(image, s.box, map.geometry());
  s.mining_label = label;
  s.cell_prob = map(cell.i, cell.j);
  s.subtype = subtype;
  return s;
}

}  // namespace

MiningOutcome mine_rois(const GrayscaleImage& image, const ImageLabel& label,
                        const ProbabilityMap& map, double threshold, const MiningConfig& cfg,
                        int epoch) {
  cfg.validate();
  if (map.geometry().image_height() != image.height() ||
      map.geometry().image_width() != image.width()) {
    throw DomainError("mine_rois: map geometry does not match the image");
  }
  const std::size_t k = static_cast<std::size_t>(cfg.k);
  if (!label.fractured && map.values().size() < k) {
    throw ConfigError("mine_rois: probability map has fewer than K cells");
  }
  auto rng = keyed_rng(cfg.seed, "mine", image.id(), static_cast<std::uint64_t>(epoch));
  const auto candidates = candidate_set(map, threshold);

  MiningOutcome out;
  if (label.fractured) {
    if (candidates.empty()) {
      out.miss = true;
      return out;
    }
    for (Cell c : sample_without_replacement(candidates, k, rng)) {
      out.samples.push_back(make_sample(image, map, c, MiningLabel::kProbablePositive, label.subtype));
    }
    return out;
  }

  const auto hard = sample_without_replacement(candidates, k, rng);
  for (Cell c : hard) {
    out.samples.push_back(make_sample(image, map, c, MiningLabel::kHardNegative, std::nullopt));
  }
  if (hard.size() < k) {
    std::vector<Cell> rest;
    for (int i = 0; i < map.rows(); ++i) {
      for (int j = 0; j < map.cols(); ++j) {
        if (map(i, j) < threshold) rest.push_back(Cell{i, j});
      }
    }
    for (Cell c : sample_without_replacement(std::move(rest), k - hard.size(), rng)) {
      out.samples.push_back(make_sample(image, map, c, MiningLabel::kRandomNegative, std::nullopt));
    }
  }
  return out;
}

MiningRecord to_record(const RoiSample& sample, const std::string& image_id, int epoch) {
  return MiningRecord{image_id, epoch, sample.box, sample.mining_label, sample.cell_prob,
                      sample.subtype};
}

double mining_label_accuracy(const MiningManifest& manifest,
                             const std::map<std::string, ImageLabel>& labels) {
  std::size_t total = 0, hits = 0;
  for (const auto& rec : manifest.records) {
    if (rec.mining_label != MiningLabel::kProbablePositive) continue;
    const auto it = labels.find(rec.image_id);
    if (it == labels.end() || !it->second.gt_boxes) {
      throw ConfigError("mining_label_accuracy: no gt_boxes for image " + rec.image_id);
    }
    ++total;
    // Integer midpoint of the half-open box.
    const int cx = (rec.box.rect.x0 + rec.box.rect.x1) / 2;
    const int cy = (rec.box.rect.y0 + rec.box.rect.y1) / 2;
    for (const auto& gt : *it->second.gt_boxes) {
      if (gt.contains(cx, cy) || iou(rec.box.rect, gt) >= 0.25) {
        ++hits;
        break;
      }
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

void write_manifest_jsonl(std::ostream& out, const MiningManifest& manifest) {
  for (const auto& r : manifest.records) {
    nlohmann::ordered_json j;
    j["image_id"] = r.image_id;
    j["epoch"] = r.epoch;
    j["x0"] = r.box.rect.x0;
    j["y0"] = r.box.rect.y0;
    j["x1"] = r.box.rect.x1;
    j["y1"] = r.box.rect.y1;
    j["cell_i"] = r.box.source_cell.i;
    j["cell_j"] = r.box.source_cell.j;
    j["mining_label"] = to_string(r.mining_label);
    j["cell_prob"] = r.cell_prob;
    j["subtype"] = r.subtype ? nlohmann::ordered_json(to_string(*r.subtype))
                             : nlohmann::ordered_json(nullptr);
    out << j.dump() << '\n';
  }
}

std::vector<MiningRecord> read_manifest_jsonl(std::istream& in) {
  std::vector<MiningRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    MiningRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.epoch = j.at("epoch").get<int>();
    r.box.rect = PixelRect{j.at("x0").get<int>(), j.at("y0").get<int>(), j.at("x1").get<int>(),
                           j.at("y1").get<int>()};
    r.box.source_cell = Cell{j.at("cell_i").get<int>(), j.at("cell_j").get<int>()};
    r.mining_label = mining_label_from_string(j.at("mining_label").get<std::string>());
    r.cell_prob = j.at("cell_prob").get<double>();
    if (!j.at("subtype").is_null()) r.subtype = subtype_from_string(j["subtype"].get<std::string>());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fracmil
