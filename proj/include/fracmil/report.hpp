#pragma once
// Report emission: ROC and precision-recall plots as standalone SVG, and a
// Markdown table of the cross-fold aggregate.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace fracmil {

struct CurveSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y) in [0,1]^2
};

// Reads a two-column curve file written by write_curve.
CurveSeries read_curve_file(const std::filesystem::path& path, std::string name);

// Unit-square line plot with axes, ticks and a legend.
std::string curve_svg(const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<CurveSeries>& series);

std::string aggregate_markdown(const nlohmann::ordered_json& aggregate);

// For every fold directory under `root`: roc.svg and pr.svg overlaying all
// methods with curve files. Also writes <root>/summary.md from
// aggregate.json. Returns the files written.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& root);

}  // namespace fracmil
