#pragma once
// Evaluation battery: ROC AUC, threshold metrics at a demanded operating
// point, ROC / PR curves and the three-class (hip / pelvic / no finding)
// report with one-vs-rest sensitivity and specificity.
//
// Thresholds are always drawn from the observed scores plus {0, 1}, and a
// score counts as a positive prediction when score >= threshold.

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fracmil/chained_inference.hpp"
#include "json.hpp"

namespace fracmil {

struct ScoredSet {
  std::vector<std::pair<double, bool>> pairs;  // (score, is_positive)

  void add(double score, bool positive) { pairs.emplace_back(score, positive); }
  std::size_t positives() const;
  std::size_t negatives() const;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double recall() const;
  double specificity() const;
  double precision() const;  // 1 when nothing is predicted positive
};

Confusion confusion_at(const ScoredSet& set, double threshold);

// Candidate thresholds (observed scores U {0, 1}), sorted ascending, unique.
std::vector<double> candidate_thresholds(const ScoredSet& set);

// Mann-Whitney statistic via a threshold sweep with trapezoids; ties count
// one half. Throws DomainError unless both classes are present.
double auc(const ScoredSet& set);

struct OperatingPoint {
  double target = 0.0;
  double threshold = 0.0;
  double value = 0.0;
  bool attainable = true;  // false: target not met, threshold forced to 0
};

// Largest threshold with recall >= target; reports specificity.
OperatingPoint spec_at_recall(const ScoredSet& set, double target_recall);
// Smallest threshold with specificity >= target; reports recall.
OperatingPoint recall_at_spec(const ScoredSet& set, double target_specificity);
// Same threshold rule as spec_at_recall; reports precision.
OperatingPoint prec_at_recall(const ScoredSet& set, double target_recall);

struct CurvePoint {
  double threshold = 0.0;
  double x = 0.0;
  double y = 0.0;
};

// (fpr, tpr) from (0,0) to (1,1), thresholds descending.
std::vector<CurvePoint> roc_curve(const ScoredSet& set);
// (recall, precision), thresholds descending, ending at recall 1.
std::vector<CurvePoint> pr_curve(const ScoredSet& set);

// Threshold maximizing sensitivity + specificity - 1 (largest on ties).
double youden_threshold(const ScoredSet& set);

struct ClassMetrics {
  std::optional<double> sensitivity;  // empty when the class never occurs
  std::optional<double> specificity;
};

struct ThreeClassReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  ClassMetrics hip, pelvic;
  // confusion[actual][predicted], indexed hip, pelvic, no_finding
  std::array<std::array<std::size_t, 3>, 3> confusion{};
};

// decisions are (predicted, actual) pairs.
ThreeClassReport three_class_report(std::span<const std::pair<Decision, Decision>> decisions);

struct EvalReport {
  std::size_t n = 0, positives = 0, negatives = 0;
  double auc = 0.0;
  OperatingPoint spec_at_recall, recall_at_spec, prec_at_recall;
  std::vector<CurvePoint> roc, pr;
  std::optional<ThreeClassReport> three_class;
};

EvalReport evaluate(const ScoredSet& set, double operating_point = 0.95);

nlohmann::ordered_json to_json(const EvalReport& report);
nlohmann::ordered_json to_json(const ThreeClassReport& report);
// Two whitespace-separated columns, x then y, one point per line.
void write_curve(std::ostream& out, const std::vector<CurvePoint>& curve);

}  // namespace fracmil
