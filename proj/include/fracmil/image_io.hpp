#pragma once
// Dataset persistence: 8-bit binary PGM rasters plus a JSON-lines manifest
// with one record per image (id, fractured, subtype, gt_boxes, file).

#include <filesystem>
#include <string>
#include <vector>

#include "fracmil/core_types.hpp"

namespace fracmil {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pixels are quantized to round(255 * v).
void write_pgm(const std::filesystem::path& path, const GrayscaleImage& image);
GrayscaleImage read_pgm(const std::filesystem::path& path, std::string id);

// Rounds every pixel to the nearest 8-bit level so a PGM round trip is exact.
Grid2D<float> quantize_8bit(const Grid2D<float>& pixels);

// Writes <dir>/images/<id>.pgm and <dir>/manifest.jsonl.
void write_dataset(const std::filesystem::path& dir, const std::vector<LabeledImage>& data);
std::vector<LabeledImage> read_dataset(const std::filesystem::path& dir);

std::string label_to_json_line(const std::string& id, const ImageLabel& label,
                               const std::string& file);

}  // namespace fracmil
