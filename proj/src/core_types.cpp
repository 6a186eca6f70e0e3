#include "fracmil/core_types.hpp"

#include <algorithm>
#include <cmath>

namespace fracmil {

double iou(const PixelRect& a, const PixelRect& b) {
  const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  if (ix1 <= ix0 || iy1 <= iy0) return 0.0;
  const double inter = static_cast<double>(ix1 - ix0) * (iy1 - iy0);
  return inter / (static_cast<double>(a.area()) + b.area() - inter);
}

GrayscaleImage::GrayscaleImage(std::string id, Grid2D<float> pixels)
    : id_(std::move(id)), pixels_(std::move(pixels)) {
  if (pixels_.empty()) throw DomainError("GrayscaleImage: empty pixel grid");
  for (float v : pixels_.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("GrayscaleImage: pixel outside [0,1]");
  }
}

const char* to_string(Subtype s) { return s == Subtype::kHip ? "hip" : "pelvic"; }

Subtype subtype_from_string(const std::string& s) {
  if (s == "hip") return Subtype::kHip;
  if (s == "pelvic") return Subtype::kPelvic;
  throw DomainError("unknown subtype: " + s);
}

void ImageLabel::validate(int image_height, int image_width) const {
  if (subtype && !fractured) throw DomainError("ImageLabel: subtype on a non-fractured image");
  if (!gt_boxes) return;
  for (const auto& b : *gt_boxes) {
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > image_width || b.y1 > image_height || b.x0 >= b.x1 ||
        b.y0 >= b.y1) {
      throw DomainError("ImageLabel: gt box outside image bounds");
    }
  }
}

MapGeometry::MapGeometry(int stride, int roi_size, int image_height, int image_width)
    : stride_(stride), roi_size_(roi_size), image_height_(image_height), image_width_(image_width) {
  if (stride < 1) throw DomainError("MapGeometry: stride must be >= 1");
  if (roi_size < stride) throw DomainError("MapGeometry: roi_size must be >= stride");
  if (image_height < 1 || image_width < 1) throw DomainError("MapGeometry: non-positive image size");
}

ProbabilityMap::ProbabilityMap(Grid2D<double> values, MapGeometry geometry)
    : values_(std::move(values)), geometry_(geometry) {
  if (values_.rows() != geometry_.map_height() || values_.cols() != geometry_.map_width()) {
    throw DomainError("ProbabilityMap: shape inconsistent with geometry");
  }
  for (double v : values_.data()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw DomainError("ProbabilityMap: value outside [0,1]");
    }
  }
}

const char* to_string(MiningLabel l) {
  switch (l) {
    case MiningLabel::kProbablePositive: return "probable_positive";
    case MiningLabel::kHardNegative: return "hard_negative";
    case MiningLabel::kRandomNegative: return "random_negative";
  }
  return "?";
}

MiningLabel mining_label_from_string(const std::string& s) {
  if (s == "probable_positive") return MiningLabel::kProbablePositive;
  if (s == "hard_negative") return MiningLabel::kHardNegative;
  if (s == "random_negative") return MiningLabel::kRandomNegative;
  throw DomainError("unknown mining label: " + s);
}

RoiBox cell_to_box(Cell cell, const MapGeometry& geometry) {
  if (cell.i < 0 || cell.j < 0 || cell.i >= geometry.map_height() ||
      cell.j >= geometry.map_width()) {
    throw DomainError("cell_to_box: cell outside the probability map");
  }
  const auto [cx, cy] = geometry.cell_center(cell);
  const int half = geometry.roi_size() / 2;
  RoiBox box;
  box.source_cell = cell;
  box.rect.x0 = std::max(0, cx - half);
  box.rect.y0 = std::max(0, cy - half);
  box.rect.x1 = std::min(geometry.image_width(), cx - half + geometry.roi_size());
  box.rect.y1 = std::min(geometry.image_height(), cy - half + geometry.roi_size());
  return box;
}

GrayscaleImage crop_roi(const GrayscaleImage& image, const RoiBox& box,
                        const MapGeometry& geometry) {
  if (image.height() != geometry.image_height() || image.width() != geometry.image_width()) {
    throw DomainError("crop_roi: image does not match geometry");
  }
  const auto& px = image.pixels();
  auto grid = detail::copy_roi(box, geometry, [&](int y, int x) { return px(y, x); });
  return GrayscaleImage(image.id() + "@" + std::to_string(box.source_cell.i) + "," +
                            std::to_string(box.source_cell.j),
                        std::move(grid));
}

}  // namespace fracmil
