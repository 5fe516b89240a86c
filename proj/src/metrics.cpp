#include "relclust/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relclust {

namespace {

std::vector<std::size_t> dense_ids(std::span<const int> labels, std::size_t& count) {
  std::vector<int> keys(labels.begin(), labels.end());
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  count = keys.size();
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = static_cast<std::size_t>(std::lower_bound(keys.begin(), keys.end(), labels[i]) - keys.begin());
  }
  return out;
}

// Joint counts n_ij with row (pred) and column (gold) marginals.
struct Contingency {
  std::size_t n = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> cells;
  std::vector<double> row_sums;
  std::vector<double> col_sums;

  double at(std::size_t i, std::size_t j) const { return cells[i * cols + j]; }
};

Contingency contingency(std::span<const int> pred, std::span<const int> gold) {
  if (pred.size() != gold.size()) {
    throw std::invalid_argument("partitions differ in length (" + std::to_string(pred.size()) +
                                " vs " + std::to_string(gold.size()) + ")");
  }
  if (pred.empty()) throw std::invalid_argument("partitions are empty");
  Contingency c;
  c.n = pred.size();
  const auto p = dense_ids(pred, c.rows);
  const auto g = dense_ids(gold, c.cols);
  c.cells.assign(c.rows * c.cols, 0.0);
  c.row_sums.assign(c.rows, 0.0);
  c.col_sums.assign(c.cols, 0.0);
  for (std::size_t k = 0; k < c.n; ++k) {
    c.cells[p[k] * c.cols + g[k]] += 1.0;
    c.row_sums[p[k]] += 1.0;
    c.col_sums[g[k]] += 1.0;
  }
  return c;
}

double harmonic(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

double entropy(const std::vector<double>& sums, double n) {
  double h = 0.0;
  for (double s : sums) {
    if (s > 0.0) h -= (s / n) * std::log(s / n);
  }
  return h;
}

double pairs(double k) { return k * (k - 1.0) / 2.0; }

}  // namespace

BCubed b_cubed(std::span<const int> pred, std::span<const int> gold) {
  const Contingency c = contingency(pred, gold);
  double precision = 0.0;
  double recall = 0.0;
  for (std::size_t i = 0; i < c.rows; ++i) {
    for (std::size_t j = 0; j < c.cols; ++j) {
      const double nij = c.at(i, j);
      if (nij == 0.0) continue;
      precision += nij * nij / c.row_sums[i];
      recall += nij * nij / c.col_sums[j];
    }
  }
  const double n = static_cast<double>(c.n);
  BCubed out{precision / n, recall / n, 0.0};
  out.f1 = harmonic(out.precision, out.recall);
  return out;
}

VMeasure v_measure(std::span<const int> pred, std::span<const int> gold) {
  const Contingency c = contingency(pred, gold);
  const double n = static_cast<double>(c.n);
  double gold_given_pred = 0.0;
  double pred_given_gold = 0.0;
  for (std::size_t i = 0; i < c.rows; ++i) {
    for (std::size_t j = 0; j < c.cols; ++j) {
      const double nij = c.at(i, j);
      if (nij == 0.0) continue;
      gold_given_pred -= (nij / n) * std::log(nij / c.row_sums[i]);
      pred_given_gold -= (nij / n) * std::log(nij / c.col_sums[j]);
    }
  }
  const double h_gold = entropy(c.col_sums, n);
  const double h_pred = entropy(c.row_sums, n);
  VMeasure out;
  out.homogeneity = h_gold > 0.0 ? 1.0 - gold_given_pred / h_gold : 1.0;
  out.completeness = h_pred > 0.0 ? 1.0 - pred_given_gold / h_pred : 1.0;
  out.f1 = harmonic(out.homogeneity, out.completeness);
  return out;
}

double ari(std::span<const int> pred, std::span<const int> gold) {
  const Contingency c = contingency(pred, gold);
  if (c.n < 2) throw std::invalid_argument("adjusted rand index needs at least 2 elements");
  double index = 0.0;
  for (double nij : c.cells) index += pairs(nij);
  double sum_pred = 0.0;
  for (double a : c.row_sums) sum_pred += pairs(a);
  double sum_gold = 0.0;
  for (double b : c.col_sums) sum_gold += pairs(b);
  const double expected = sum_pred * sum_gold / pairs(static_cast<double>(c.n));
  const double max_index = 0.5 * (sum_pred + sum_gold);
  const double denom = max_index - expected;
  if (denom == 0.0) return 1.0;
  return (index - expected) / denom;
}

MetricReport evaluate_partition(std::span<const int> pred, std::span<const int> gold) {
  return MetricReport{b_cubed(pred, gold), v_measure(pred, gold), ari(pred, gold)};
}

nlohmann::ordered_json to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["b3"] = {{"p", report.b3.precision}, {"r", report.b3.recall}, {"f1", report.b3.f1}};
  j["v"] = {{"hom", report.v.homogeneity}, {"comp", report.v.completeness}, {"f1", report.v.f1}};
  j["ari"] = report.ari;
  return j;
}

}  // namespace relclust
