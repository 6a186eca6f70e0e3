#pragma once
// Small builders shared by the test binaries.

#include <random>
#include <string>
#include <vector>

#include "fracmil/core_types.hpp"

namespace fixture {

// Map with a unit-stride geometry of the same shape.
inline fracmil::ProbabilityMap map(int rows, int cols, const std::vector<double>& values) {
  fracmil::Grid2D<double> g(rows, cols);
  g.data() = values;
  return fracmil::ProbabilityMap(std::move(g), fracmil::MapGeometry(1, 1, rows, cols));
}

inline fracmil::GrayscaleImage image(const std::string& id, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  fracmil::Grid2D<float> px(h, w);
  for (float& v : px.data()) v = u(rng);
  return fracmil::GrayscaleImage(id, std::move(px));
}

inline fracmil::GrayscaleImage constant_image(const std::string& id, int h, int w, float v) {
  return fracmil::GrayscaleImage(id, fracmil::Grid2D<float>(h, w, v));
}

}  // namespace fixture
