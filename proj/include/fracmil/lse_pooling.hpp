#pragma once
// Global pooling over probability maps: log-sum-exp (a smooth max), hard max
// and plain averaging (GAP).

#include <span>
#include <string>
#include <vector>

#include "fracmil/core_types.hpp"

namespace fracmil {

enum class PoolingKind { kLse, kMax, kGap };

const char* to_string(PoolingKind k);
PoolingKind pooling_kind_from_string(const std::string& s);

struct PoolingConfig {
  PoolingKind kind = PoolingKind::kLse;
  double r = 10.0;  // sharpness, only used by kLse

  void validate() const;
  bool operator==(const PoolingConfig&) const = default;
};

struct LseResult {
  double value = 0.0;
  // d value / d input, a softmax over r * input; same layout as the input.
  std::vector<double> weights;
};

// (1/r) log( mean exp(r x) ), evaluated with the max subtracted first.
// Works for any finite reals; throws DomainError on empty input, r <= 0 or
// non-finite values.
LseResult lse_pool_values(std::span<const double> values, double r);

struct LsePoolResult {
  double value = 0.0;
  Grid2D<double> weights;
};

LsePoolResult lse_pool(const ProbabilityMap& map, double r);

struct MaxPoolResult {
  double value = 0.0;
  Cell argmax;  // lexicographically smallest maximizing cell
};

MaxPoolResult max_pool(const ProbabilityMap& map);

double gap_pool(const ProbabilityMap& map);

// Dispatch on config; returns the pooled value only.
double pool(const ProbabilityMap& map, const PoolingConfig& cfg);

}  // namespace fracmil
