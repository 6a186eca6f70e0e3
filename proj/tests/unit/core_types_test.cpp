#include <cstdlib>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "fracmil/core_types.hpp"

namespace fracmil {
namespace {

TEST(CellToBox, CornerCellIsClamped) {
  const auto g = MapGeometry(16, 64, 128, 128);
  const auto box = cell_to_box({0, 0}, g);
  EXPECT_EQ(g.cell_center({0, 0}), std::make_pair(8, 8));
  EXPECT_EQ(box.rect, (PixelRect{0, 0, 40, 40}));
  EXPECT_EQ(box.source_cell, (Cell{0, 0}));
}

TEST(CellToBox, InteriorCell) {
  const auto g = MapGeometry(16, 64, 128, 128);
  EXPECT_EQ(g.cell_center({4, 4}), std::make_pair(72, 72));
  EXPECT_EQ(cell_to_box({4, 4}, g).rect, (PixelRect{40, 40, 104, 104}));
}

TEST(CellToBox, RoiEqualToStride) {
  const auto g = MapGeometry(32, 32, 128, 128);
  EXPECT_EQ(g.cell_center({2, 3}), std::make_pair(112, 80));
  EXPECT_EQ(cell_to_box({2, 3}, g).rect, (PixelRect{96, 64, 128, 96}));
}

TEST(CellToBox, OutOfRangeCellThrows) {
  const auto g = MapGeometry(16, 64, 128, 128);
  EXPECT_THROW(cell_to_box({8, 0}, g), DomainError);
  EXPECT_THROW(cell_to_box({0, -1}, g), DomainError);
}

TEST(MapGeometry, RejectsBadParameters) {
  EXPECT_THROW(MapGeometry(0, 4, 8, 8), DomainError);
  EXPECT_THROW(MapGeometry(8, 4, 64, 64), DomainError);
  EXPECT_EQ(MapGeometry(16, 64, 130, 100).map_height(), 8);
  EXPECT_EQ(MapGeometry(16, 64, 130, 100).map_width(), 6);
  EXPECT_EQ(MapGeometry::with_default_roi(16, 128, 128).roi_size(), 64);
}

TEST(GrayscaleImage, RejectsOutOfRangePixels) {
  EXPECT_THROW(GrayscaleImage("x", Grid2D<float>(2, 2, 1.5f)), DomainError);
  EXPECT_THROW(GrayscaleImage("x", Grid2D<float>(2, 2, -0.1f)), DomainError);
  EXPECT_THROW(GrayscaleImage("x", Grid2D<float>()), DomainError);
}

TEST(ImageLabel, Invariants) {
  ImageLabel ok{true, Subtype::kHip, std::vector<PixelRect>{{0, 0, 10, 10}}};
  EXPECT_NO_THROW(ok.validate(32, 32));
  ImageLabel subtype_on_negative{false, Subtype::kPelvic, std::nullopt};
  EXPECT_THROW(subtype_on_negative.validate(32, 32), DomainError);
  ImageLabel box_outside{true, Subtype::kHip, std::vector<PixelRect>{{20, 20, 40, 30}}};
  EXPECT_THROW(box_outside.validate(32, 32), DomainError);
}

TEST(Iou, KnownValues) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {10, 0, 20, 10}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 50.0 / 150.0);
}

TEST(CropRoi, InteriorCropEqualsSubGrid) {
  const auto img = fixture::image("a", 128, 128, 3);
  const auto g = MapGeometry(16, 64, 128, 128);
  const auto box = cell_to_box({4, 4}, g);
  const auto crop = crop_roi(img, box, g);
  ASSERT_EQ(crop.height(), 64);
  ASSERT_EQ(crop.width(), 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) ASSERT_EQ(crop.at(y, x), img.at(40 + y, 40 + x));
  }
}

TEST(CropRoi, CornerCropIsZeroPaddedOnClampedSides) {
  const auto img = fixture::constant_image("a", 128, 128, 0.75f);
  const auto g = MapGeometry(16, 64, 128, 128);
  const auto crop = crop_roi(img, cell_to_box({0, 0}, g), g);
  ASSERT_EQ(crop.height(), 64);
  // The source cell center (8, 8) sits at crop position (32, 32): 24 rows
  // and columns of padding on the top and left.
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const bool inside = y >= 24 && x >= 24;
      ASSERT_EQ(crop.at(y, x), inside ? 0.75f : 0.0f) << y << "," << x;
    }
  }
}

TEST(CropRoi, FullImageBox) {
  const auto img = fixture::image("a", 32, 32, 4);
  const auto g = MapGeometry(32, 32, 32, 32);
  const auto crop = crop_roi(img, cell_to_box({0, 0}, g), g);
  EXPECT_EQ(crop.pixels(), img.pixels());
}

TEST(CropRoi, DegenerateBoxThrows) {
  const auto img = fixture::image("a", 64, 64, 5);
  const auto g = MapGeometry(16, 64, 64, 64);
  RoiBox box{{10, 10, 10, 20}, {0, 0}};
  EXPECT_THROW(crop_roi(img, box, g), DomainError);
}

// Every valid cell of a range of geometries can be boxed and cropped, and
// the crop never reads outside the image.
TEST(CropRoiProperty, TotalAndInBounds) {
  for (int stride : {1, 2, 4, 8, 16, 32}) {
    for (int mult : {1, 2, 4, 5}) {
      for (auto [h, w] : {std::pair{64, 64}, std::pair{100, 72}, std::pair{33, 129}}) {
        if (h < stride || w < stride) continue;
        const auto g = MapGeometry(stride, stride * mult, h, w);
        for (int i = 0; i < g.map_height(); ++i) {
          for (int j = 0; j < g.map_width(); ++j) {
            const auto box = cell_to_box({i, j}, g);
            ASSERT_LT(box.rect.x0, box.rect.x1);
            ASSERT_LT(box.rect.y0, box.rect.y1);
            long reads = 0;
            const auto out = detail::copy_roi(box, g, [&](int y, int x) {
              if (y < 0 || x < 0 || y >= h || x >= w) std::abort();
              ++reads;
              return 1.0f;
            });
            ASSERT_EQ(reads, box.rect.area());
            ASSERT_EQ(out.rows(), g.roi_size());
          }
        }
      }
    }
  }
}

TEST(CellCenterProperty, DistinctCellsAreAtLeastOneStrideApart) {
  for (int stride : {1, 3, 8, 16}) {
    const auto g = MapGeometry(stride, 4 * stride, 10 * stride, 7 * stride);
    for (int a = 0; a < g.map_height() * g.map_width(); ++a) {
      for (int b = a + 1; b < g.map_height() * g.map_width(); ++b) {
        const auto [ax, ay] = g.cell_center({a / g.map_width(), a % g.map_width()});
        const auto [bx, by] = g.cell_center({b / g.map_width(), b % g.map_width()});
        ASSERT_TRUE(std::abs(ax - bx) >= stride || std::abs(ay - by) >= stride);
      }
    }
  }
}

TEST(EnumNames, RoundTrip) {
  for (auto s : {Subtype::kHip, Subtype::kPelvic}) EXPECT_EQ(subtype_from_string(to_string(s)), s);
  for (auto l : {MiningLabel::kProbablePositive, MiningLabel::kHardNegative,
                 MiningLabel::kRandomNegative}) {
    EXPECT_EQ(mining_label_from_string(to_string(l)), l);
  }
}

}  // namespace
}  // namespace fracmil
