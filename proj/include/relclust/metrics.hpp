#pragma once

#include <span>
#include <vector>

#include "json.hpp"

namespace relclust {

/// Cluster id per element; ids are opaque and only equality matters.
using Partition = std::vector<int>;

struct BCubed {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct VMeasure {
  double homogeneity = 0.0;
  double completeness = 0.0;
  double f1 = 0.0;
};

struct MetricReport {
  BCubed b3;
  VMeasure v;
  double ari = 0.0;
};

BCubed b_cubed(std::span<const int> pred, std::span<const int> gold);
/// Natural-log entropies; homogeneity (completeness) is 1 when the gold
/// (predicted) partition has zero entropy.
VMeasure v_measure(std::span<const int> pred, std::span<const int> gold);
/// Adjusted Rand Index; 1 when the chance-adjusted denominator vanishes.
double ari(std::span<const int> pred, std::span<const int> gold);

MetricReport evaluate_partition(std::span<const int> pred, std::span<const int> gold);

nlohmann::ordered_json to_json(const MetricReport& report);

}  // namespace relclust
