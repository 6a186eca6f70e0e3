#include "fracmil/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace fracmil {

std::size_t ScoredSet::positives() const {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.second; }));
}

std::size_t ScoredSet::negatives() const { return pairs.size() - positives(); }

double Confusion::recall() const {
  return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
}
double Confusion::specificity() const {
  return tn + fp ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
}
double Confusion::precision() const {
  return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 1.0;
}

Confusion confusion_at(const ScoredSet& set, double threshold) {
  Confusion c;
  for (const auto& [s, pos] : set.pairs) {
    const bool pred = s >= threshold;
    if (pos) {
      pred ? ++c.tp : ++c.fn;
    } else {
      pred ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

std::vector<double> candidate_thresholds(const ScoredSet& set) {
  std::vector<double> t = {0.0, 1.0};
  for (const auto& p : set.pairs) t.push_back(p.first);
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

namespace {

void require_both_classes(const ScoredSet& set, const char* what) {
  if (set.positives() == 0 || set.negatives() == 0) {
    throw DomainError(std::string(what) + ": needs at least one positive and one negative");
  }
}

// Confusion at every candidate threshold, thresholds descending.
std::vector<std::pair<double, Confusion>> sweep(const ScoredSet& set) {
  auto sorted = set.pairs;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  const auto thresholds = candidate_thresholds(set);
  const std::size_t P = set.positives(), N = set.negatives();
  std::vector<std::pair<double, Confusion>> out;
  std::size_t k = 0, tp = 0, fp = 0;
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
    while (k < sorted.size() && sorted[k].first >= *it) {
      sorted[k].second ? ++tp : ++fp;
      ++k;
    }
    out.emplace_back(*it, Confusion{tp, fp, N - fp, P - tp});
  }
  return out;
}

}  // namespace

double auc(const ScoredSet& set) {
  require_both_classes(set, "auc");
  auto sorted = set.pairs;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  const double P = static_cast<double>(set.positives());
  const double N = static_cast<double>(set.negatives());
  double area = 0.0, tp = 0.0, fp = 0.0;
  for (std::size_t k = 0; k < sorted.size();) {
    double gtp = 0.0, gfp = 0.0;
    const double s = sorted[k].first;
    for (; k < sorted.size() && sorted[k].first == s; ++k) (sorted[k].second ? gtp : gfp) += 1.0;
    // Trapezoid between (fp, tp) and (fp + gfp, tp + gtp), in count units.
    area += gfp * (tp + 0.5 * gtp);
    tp += gtp;
    fp += gfp;
  }
  return area / (P * N);
}

namespace {

OperatingPoint by_recall(const ScoredSet& set, double target, bool report_precision) {
  require_both_classes(set, "operating point");
  if (!(target > 0.0 && target <= 1.0)) throw DomainError("target recall must lie in (0,1]");
  for (const auto& [t, c] : sweep(set)) {  // descending: first hit is the largest t
    if (c.recall() >= target) {
      return {target, t, report_precision ? c.precision() : c.specificity(), true};
    }
  }
  const Confusion c = confusion_at(set, 0.0);
  return {target, 0.0, report_precision ? c.precision() : c.specificity(), false};
}

}  // namespace

OperatingPoint spec_at_recall(const ScoredSet& set, double target_recall) {
  return by_recall(set, target_recall, false);
}

OperatingPoint prec_at_recall(const ScoredSet& set, double target_recall) {
  return by_recall(set, target_recall, true);
}

OperatingPoint recall_at_spec(const ScoredSet& set, double target_specificity) {
  require_both_classes(set, "recall_at_spec");
  if (!(target_specificity > 0.0 && target_specificity <= 1.0)) {
    throw DomainError("target specificity must lie in (0,1]");
  }
  const auto sw = sweep(set);
  for (auto it = sw.rbegin(); it != sw.rend(); ++it) {  // ascending thresholds
    if (it->second.specificity() >= target_specificity) {
      return {target_specificity, it->first, it->second.recall(), true};
    }
  }
  return {target_specificity, 0.0, confusion_at(set, 0.0).recall(), false};
}

std::vector<CurvePoint> roc_curve(const ScoredSet& set) {
  require_both_classes(set, "roc_curve");
  std::vector<CurvePoint> out;
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  for (const auto& [t, c] : sweep(set)) {
    out.push_back({t, 1.0 - c.specificity(), c.recall()});
  }
  return out;
}

std::vector<CurvePoint> pr_curve(const ScoredSet& set) {
  require_both_classes(set, "pr_curve");
  std::vector<CurvePoint> out;
  for (const auto& [t, c] : sweep(set)) out.push_back({t, c.recall(), c.precision()});
  return out;
}

double youden_threshold(const ScoredSet& set) {
  require_both_classes(set, "youden_threshold");
  double best_t = 0.0, best_j = -std::numeric_limits<double>::infinity();
  for (const auto& [t, c] : sweep(set)) {
    const double j = c.recall() + c.specificity() - 1.0;
    if (j > best_j) {
      best_j = j;
      best_t = t;
    }
  }
  return best_t;
}

ThreeClassReport three_class_report(std::span<const std::pair<Decision, Decision>> decisions) {
  if (decisions.empty()) throw DomainError("three_class_report: no decisions");
  ThreeClassReport r;
  r.n = decisions.size();
  std::size_t correct = 0;
  for (const auto& [pred, actual] : decisions) {
    ++r.confusion[static_cast<int>(actual)][static_cast<int>(pred)];
    if (pred == actual) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  auto one_vs_rest = [&](Decision cls) {
    std::size_t tp = 0, pos = 0, tn = 0, neg = 0;
    for (const auto& [pred, actual] : decisions) {
      if (actual == cls) {
        ++pos;
        if (pred == cls) ++tp;
      } else {
        ++neg;
        if (pred != cls) ++tn;
      }
    }
    ClassMetrics m;
    if (pos) m.sensitivity = static_cast<double>(tp) / static_cast<double>(pos);
    if (neg) m.specificity = static_cast<double>(tn) / static_cast<double>(neg);
    return m;
  };
  r.hip = one_vs_rest(Decision::kHip);
  r.pelvic = one_vs_rest(Decision::kPelvic);
  return r;
}

EvalReport evaluate(const ScoredSet& set, double operating_point) {
  EvalReport r;
  r.n = set.pairs.size();
  r.positives = set.positives();
  r.negatives = set.negatives();
  r.auc = auc(set);
  r.spec_at_recall = spec_at_recall(set, operating_point);
  r.recall_at_spec = recall_at_spec(set, operating_point);
  r.prec_at_recall = prec_at_recall(set, operating_point);
  r.roc = roc_curve(set);
  r.pr = pr_curve(set);
  return r;
}

namespace {

nlohmann::ordered_json op_json(const OperatingPoint& op) {
  nlohmann::ordered_json j;
  j["target"] = op.target;
  j["threshold"] = op.threshold;
  j["value"] = op.value;
  j["attainable"] = op.attainable;
  return j;
}

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

nlohmann::ordered_json to_json(const ThreeClassReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  j["hip"] = {{"sensitivity", opt_json(r.hip.sensitivity)},
              {"specificity", opt_json(r.hip.specificity)}};
  j["pelvic"] = {{"sensitivity", opt_json(r.pelvic.sensitivity)},
                 {"specificity", opt_json(r.pelvic.specificity)}};
  nlohmann::ordered_json conf = nlohmann::ordered_json::array();
  for (const auto& row : r.confusion) conf.push_back(row);
  j["confusion_actual_by_predicted"] = conf;
  return j;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["positives"] = r.positives;
  j["negatives"] = r.negatives;
  j["auc"] = r.auc;
  j["spec_at_recall"] = op_json(r.spec_at_recall);
  j["recall_at_spec"] = op_json(r.recall_at_spec);
  j["prec_at_recall"] = op_json(r.prec_at_recall);
  j["roc_points"] = r.roc.size();
  j["pr_points"] = r.pr.size();
  if (r.three_class) j["three_class"] = to_json(*r.three_class);
  return j;
}

void write_curve(std::ostream& out, const std::vector<CurvePoint>& curve) {
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.10f %.10f\n", p.x, p.y);
    out << buf;
  }
}

}  // namespace fracmil
