#pragma once
// Shared domain types for the two-stage fracture pipeline: images, labels,
// probability maps and the cell <-> pixel geometry that ties them together.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fracmil {

// Precondition violated by a caller (bad shapes, out-of-range values).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Inconsistent or degenerate configuration / data setup.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major 2-D grid.
template <typename T>
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw DomainError("Grid2D: negative dimension");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  const T& operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  // Bounds-checked access.
  const T& at(int i, int j) const {
    if (i < 0 || j < 0 || i >= rows_ || j >= cols_) {
      throw DomainError("Grid2D::at: index out of range");
    }
    return (*this)(i, j);
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Grid2D&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

struct Cell {
  int i = 0;  // row
  int j = 0;  // column
  auto operator<=>(const Cell&) const = default;
};

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const PixelRect&) const = default;
};

double iou(const PixelRect& a, const PixelRect& b);

class GrayscaleImage {
 public:
  GrayscaleImage() = default;
  // Throws DomainError if any pixel lies outside [0, 1] or the grid is empty.
  GrayscaleImage(std::string id, Grid2D<float> pixels);

  const std::string& id() const { return id_; }
  int height() const { return pixels_.rows(); }
  int width() const { return pixels_.cols(); }
  const Grid2D<float>& pixels() const { return pixels_; }
  float at(int y, int x) const { return pixels_.at(y, x); }

  bool operator==(const GrayscaleImage&) const = default;

 private:
  std::string id_;
  Grid2D<float> pixels_;
};

enum class Subtype { kHip, kPelvic };

const char* to_string(Subtype s);
Subtype subtype_from_string(const std::string& s);

struct ImageLabel {
  bool fractured = false;
  std::optional<Subtype> subtype;
  std::optional<std::vector<PixelRect>> gt_boxes;

  // Enforces subtype => fractured and gt boxes inside the image.
  void validate(int image_height, int image_width) const;
  bool operator==(const ImageLabel&) const = default;
};

struct LabeledImage {
  GrayscaleImage image;
  ImageLabel label;
};

class MapGeometry {
 public:
  MapGeometry() = default;
  MapGeometry(int stride, int roi_size, int image_height, int image_width);

  // Default ROI side is four map cells.
  static MapGeometry with_default_roi(int stride, int image_height, int image_width) {
    return MapGeometry(stride, 4 * stride, image_height, image_width);
  }

  int stride() const { return stride_; }
  int roi_size() const { return roi_size_; }
  int image_height() const { return image_height_; }
  int image_width() const { return image_width_; }
  int map_height() const { return image_height_ / stride_; }
  int map_width() const { return image_width_ / stride_; }

  // Pixel coordinates (x, y) of a cell's center.
  std::pair<int, int> cell_center(Cell c) const {
    return {c.j * stride_ + stride_ / 2, c.i * stride_ + stride_ / 2};
  }

  bool operator==(const MapGeometry&) const = default;

 private:
  int stride_ = 1;
  int roi_size_ = 1;
  int image_height_ = 1;
  int image_width_ = 1;
};

class ProbabilityMap {
 public:
  ProbabilityMap() = default;
  // values must be finite and in [0, 1] with shape matching geometry.
  ProbabilityMap(Grid2D<double> values, MapGeometry geometry);

  const Grid2D<double>& values() const { return values_; }
  const MapGeometry& geometry() const { return geometry_; }
  int rows() const { return values_.rows(); }
  int cols() const { return values_.cols(); }
  double operator()(int i, int j) const { return values_(i, j); }
  bool empty() const { return values_.empty(); }

 private:
  Grid2D<double> values_;
  MapGeometry geometry_;
};

struct RoiBox {
  PixelRect rect;
  Cell source_cell;
  bool operator==(const RoiBox&) const = default;
};

enum class MiningLabel { kProbablePositive, kHardNegative, kRandomNegative };

const char* to_string(MiningLabel l);
MiningLabel mining_label_from_string(const std::string& s);

struct RoiSample {
  GrayscaleImage crop;
  RoiBox box;
  MiningLabel mining_label = MiningLabel::kRandomNegative;
  double cell_prob = 0.0;
  std::optional<Subtype> subtype;
};

// Box of side roi_size centered on the cell, clamped to the image.
RoiBox cell_to_box(Cell cell, const MapGeometry& geometry);

namespace detail {

// Copies the clamped box into a roi_size x roi_size grid, zero-padding the
// clamped sides so the source cell stays centered. `read(y, x)` is only
// called for in-bounds pixels.
template <typename Reader>
Grid2D<float> copy_roi(const RoiBox& box, const MapGeometry& geometry, Reader&& read) {
  const auto& r = box.rect;
  if (r.width() <= 0 || r.height() <= 0) throw DomainError("crop_roi: degenerate box");
  if (r.x0 < 0 || r.y0 < 0 || r.x1 > geometry.image_width() || r.y1 > geometry.image_height()) {
    throw DomainError("crop_roi: box outside image bounds");
  }
  const int roi = geometry.roi_size();
  const auto [cx, cy] = geometry.cell_center(box.source_cell);
  const int ox = r.x0 - (cx - roi / 2);
  const int oy = r.y0 - (cy - roi / 2);
  if (ox < 0 || oy < 0 || ox + r.width() > roi || oy + r.height() > roi) {
    throw DomainError("crop_roi: box inconsistent with its source cell");
  }
  Grid2D<float> out(roi, roi, 0.0f);
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) out(oy + y - r.y0, ox + x - r.x0) = read(y, x);
  }
  return out;
}

}  // namespace detail

// roi_size x roi_size crop; pixel values unchanged, padding is zero.
GrayscaleImage crop_roi(const GrayscaleImage& image, const RoiBox& box,
                        const MapGeometry& geometry);

}  // namespace fracmil
