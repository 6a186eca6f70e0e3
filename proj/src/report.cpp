#include "fracmil/report.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fracmil/image_io.hpp"

namespace fracmil {

namespace fs = std::filesystem;

CurveSeries read_curve_file(const fs::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read curve " + path.string());
  CurveSeries s{std::move(name), {}};
  double x = 0, y = 0;
  while (in >> x >> y) s.points.emplace_back(x, y);
  if (!in.eof()) throw IoError("malformed curve file " + path.string());
  return s;
}

namespace {

constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#ff7f0e", "#2ca02c",
                                                "#d62728", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string curve_svg(const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<CurveSeries>& series) {
  constexpr double kW = 420, kH = 420, kLeft = 60, kTop = 40, kSide = 320;
  auto px = [&](double x) { return kLeft + std::clamp(x, 0.0, 1.0) * kSide; };
  auto py = [&](double y) { return kTop + (1.0 - std::clamp(y, 0.0, 1.0)) * kSide; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kLeft + kSide / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << escape(title) << "</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    o << "<line x1=\"" << fmt(px(v)) << "\" y1=\"" << fmt(py(0)) << "\" x2=\"" << fmt(px(v))
      << "\" y2=\"" << fmt(py(1)) << "\" stroke=\"#eee\"/>\n";
    o << "<line x1=\"" << fmt(px(0)) << "\" y1=\"" << fmt(py(v)) << "\" x2=\"" << fmt(px(1))
      << "\" y2=\"" << fmt(py(v)) << "\" stroke=\"#eee\"/>\n";
    o << "<text x=\"" << fmt(px(v)) << "\" y=\"" << fmt(py(0) + 15)
      << "\" text-anchor=\"middle\">" << fmt(v) << "</text>\n";
    o << "<text x=\"" << fmt(px(0) - 6) << "\" y=\"" << fmt(py(v) + 4)
      << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kSide << "\" height=\""
    << kSide << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << kLeft + kSide / 2 << "\" y=\"" << kTop + kSide + 35
    << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << kTop + kSide / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % kColors.size()];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[k].points) o << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
    o << "\"/>\n";
    const double ly = kTop + kSide - 12 - 14.0 * static_cast<double>(series.size() - 1 - k);
    o << "<line x1=\"" << fmt(px(0.55)) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(px(0.62))
      << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << fmt(px(0.64)) << "\" y=\"" << fmt(ly + 4) << "\">"
      << escape(series[k].name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string aggregate_markdown(const nlohmann::ordered_json& aggregate) {
  static constexpr std::array<const char*, 7> kCols = {
      "auc",          "spec_at_recall",       "recall_at_spec",       "prec_at_recall",
      "three_class_accuracy", "subtype_accuracy", "mining_label_accuracy"};
  std::ostringstream o;
  o << "Operating point: " << aggregate.at("operating_point").get<double>() << "\n\n";
  o << "| method | folds |";
  for (const char* c : kCols) o << ' ' << c << " |";
  o << "\n|---|---|";
  for (std::size_t k = 0; k < kCols.size(); ++k) o << "---|";
  o << '\n';
  for (const auto& [name, m] : aggregate.at("methods").items()) {
    o << "| " << name << " | " << m.at("folds").size() << " |";
    const auto& mean = m.at("mean");
    for (const char* c : kCols) {
      char buf[32] = "-";
      if (mean.contains(c)) std::snprintf(buf, sizeof(buf), "%.4f", mean[c].get<double>());
      o << ' ' << buf << " |";
    }
    o << '\n';
  }
  return o.str();
}

std::vector<fs::path> write_report(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("no experiment directory " + root.string());
  std::vector<fs::path> written;
  auto write = [&](const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    written.push_back(p);
  };

  std::vector<fs::path> folds;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("fold_", 0) == 0) {
      folds.push_back(e.path());
    }
  }
  std::sort(folds.begin(), folds.end());
  for (const auto& fold : folds) {
    std::vector<fs::path> methods;
    for (const auto& e : fs::directory_iterator(fold)) {
      if (e.is_directory() && fs::exists(e.path() / "roc.txt")) methods.push_back(e.path());
    }
    if (methods.empty()) continue;
    std::sort(methods.begin(), methods.end());
    std::vector<CurveSeries> roc, pr;
    for (const auto& m : methods) {
      const std::string name = m.filename().string();
      roc.push_back(read_curve_file(m / "roc.txt", name));
      pr.push_back(read_curve_file(m / "pr.txt", name));
    }
    const std::string tag = fold.filename().string();
    write(fold / "roc.svg", curve_svg("ROC, " + tag, "false positive rate", "true positive rate", roc));
    write(fold / "pr.svg", curve_svg("Precision-recall, " + tag, "recall", "precision", pr));
  }
  if (fs::exists(root / "aggregate.json")) {
    std::ifstream in(root / "aggregate.json");
    write(root / "summary.md", aggregate_markdown(nlohmann::ordered_json::parse(in)));
  }
  return written;
}

}  // namespace fracmil
