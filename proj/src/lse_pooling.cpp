#include "fracmil/lse_pooling.hpp"

#include <algorithm>
#include <cmath>

namespace fracmil {

const char* to_string(PoolingKind k) {
  switch (k) {
    case PoolingKind::kLse: return "lse";
    case PoolingKind::kMax: return "max";
    case PoolingKind::kGap: return "gap";
  }
  return "?";
}

PoolingKind pooling_kind_from_string(const std::string& s) {
  if (s == "lse") return PoolingKind::kLse;
  if (s == "max") return PoolingKind::kMax;
  if (s == "gap") return PoolingKind::kGap;
  throw ConfigError("unknown pooling kind: " + s);
}

void PoolingConfig::validate() const {
  if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("PoolingConfig: r must be > 0");
}

LseResult lse_pool_values(std::span<const double> values, double r) {
  if (values.empty()) throw DomainError("lse_pool: empty input");
  if (!(r > 0.0) || !std::isfinite(r)) throw DomainError("lse_pool: r must be > 0");
  double m = values[0];
  for (double v : values) {
    if (!std::isfinite(v)) throw DomainError("lse_pool: non-finite input");
    m = std::max(m, v);
  }
  LseResult out;
  out.weights.resize(values.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    out.weights[k] = std::exp(r * (values[k] - m));
    sum += out.weights[k];
  }
  for (double& w : out.weights) w /= sum;
  // sum >= 1 because the maximal element contributes exp(0).
  out.value = m + (std::log(sum) - std::log(static_cast<double>(values.size()))) / r;
  // Rounding can push the result a hair outside [mean, max].
  out.value = std::min(out.value, m);
  return out;
}

LsePoolResult lse_pool(const ProbabilityMap& map, double r) {
  auto res = lse_pool_values(map.values().data(), r);
  LsePoolResult out;
  out.value = res.value;
  out.weights = Grid2D<double>(map.rows(), map.cols());
  out.weights.data() = std::move(res.weights);
  return out;
}

MaxPoolResult max_pool(const ProbabilityMap& map) {
  if (map.empty()) throw DomainError("max_pool: empty map");
  MaxPoolResult out{map(0, 0), Cell{0, 0}};
  for (int i = 0; i < map.rows(); ++i) {
    for (int j = 0; j < map.cols(); ++j) {
      if (map(i, j) > out.value) out = {map(i, j), Cell{i, j}};
    }
  }
  return out;
}

double gap_pool(const ProbabilityMap& map) {
  if (map.empty()) throw DomainError("gap_pool: empty map");
  double sum = 0.0;
  for (double v : map.values().data()) sum += v;
  return sum / static_cast<double>(map.values().size());
}

double pool(const ProbabilityMap& map, const PoolingConfig& cfg) {
  switch (cfg.kind) {
    case PoolingKind::kLse: return lse_pool(map, cfg.r).value;
    case PoolingKind::kMax: return max_pool(map).value;
    case PoolingKind::kGap: return gap_pool(map);
  }
  return 0.0;
}

}  // namespace fracmil
