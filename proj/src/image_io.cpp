#include "fracmil/image_io.hpp"

#include <cmath>
#include <fstream>
#include "json.hpp"

namespace fracmil {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void write_pgm(const fs::path& path, const GrayscaleImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<unsigned char> bytes(image.pixels().size());
  const auto& px = image.pixels().data();
  for (std::size_t k = 0; k < bytes.size(); ++k) {
    bytes[k] = static_cast<unsigned char>(std::lround(px[k] * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

GrayscaleImage read_pgm(const fs::path& path, std::string id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError("not a binary PGM: " + path.string());
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    int v = 0;
    if (!(in >> v)) throw IoError("malformed PGM header: " + path.string());
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PGM: " + path.string());
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("truncated PGM: " + path.string());
  Grid2D<float> px(h, w);
  for (std::size_t k = 0; k < bytes.size(); ++k) px.data()[k] = bytes[k] / 255.0f;
  return GrayscaleImage(std::move(id), std::move(px));
}

Grid2D<float> quantize_8bit(const Grid2D<float>& pixels) {
  Grid2D<float> out = pixels;
  for (float& v : out.data()) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    v = static_cast<float>(std::lround(c * 255.0f)) / 255.0f;
  }
  return out;
}

std::string label_to_json_line(const std::string& id, const ImageLabel& label,
                               const std::string& file) {
  ordered_json j;
  j["id"] = id;
  j["fractured"] = label.fractured;
  j["subtype"] = label.subtype ? ordered_json(to_string(*label.subtype)) : ordered_json(nullptr);
  if (label.gt_boxes) {
    j["gt_boxes"] = ordered_json::array();
    for (const auto& b : *label.gt_boxes) j["gt_boxes"].push_back({b.x0, b.y0, b.x1, b.y1});
  } else {
    j["gt_boxes"] = nullptr;
  }
  j["file"] = file;
  return j.dump();
}

void write_dataset(const fs::path& dir, const std::vector<LabeledImage>& data) {
  fs::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  for (const auto& item : data) {
    const std::string rel = "images/" + item.image.id() + ".pgm";
    write_pgm(dir / rel, item.image);
    manifest << label_to_json_line(item.image.id(), item.label, rel) << '\n';
  }
}

std::vector<LabeledImage> read_dataset(const fs::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw IoError("missing manifest.jsonl in " + dir.string());
  std::vector<LabeledImage> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    LabeledImage item;
    const std::string id = j.at("id").get<std::string>();
    item.image = read_pgm(dir / j.at("file").get<std::string>(), id);
    item.label.fractured = j.at("fractured").get<bool>();
    if (j.contains("subtype") && !j["subtype"].is_null()) {
      item.label.subtype = subtype_from_string(j["subtype"].get<std::string>());
    }
    if (j.contains("gt_boxes") && !j["gt_boxes"].is_null()) {
      std::vector<PixelRect> boxes;
      for (const auto& b : j["gt_boxes"]) {
        boxes.push_back(PixelRect{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                                  b.at(3).get<int>()});
      }
      item.label.gt_boxes = std::move(boxes);
    }
    item.label.validate(item.image.height(), item.image.width());
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace fracmil
