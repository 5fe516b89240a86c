#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "relclust/encoder.hpp"
#include "relclust/hpc.hpp"

namespace relclust {

/// Fixed-capacity FIFO of momentum features used as negatives.
class NegativeQueue {
 public:
  NegativeQueue(std::size_t capacity, std::size_t dim);

  /// Appends rows oldest-first; once full the oldest entries are evicted.
  void push(const FeatureMatrix& rows);
  /// The `count` most recent entries, newest first.
  FeatureMatrix most_recent(std::size_t count) const;

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return static_cast<std::size_t>(buffer_.cols()); }
  std::size_t size() const { return fill_; }
  std::size_t cursor() const { return cursor_; }
  const FeatureMatrix& buffer() const { return buffer_; }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::size_t fill_ = 0;
  FeatureMatrix buffer_;
};

void queue_push(NegativeQueue& queue, const FeatureMatrix& momentum_batch);

struct LossValue {
  double loss = 0.0;
  FeatureMatrix grad;  // d loss / d propulsion features, same shape as input
};

struct LossReport {
  double info_nce = 0.0;
  double exem_nce = 0.0;
  double hince = 0.0;
  std::vector<double> exem_per_layer;
};

/// Instance-wise loss summed over the batch. Each row's denominator holds
/// its positive plus the min(size, J-1) newest queue entries; positives and
/// negatives are treated as constants.
LossValue info_nce(const FeatureMatrix& propulsion, const FeatureMatrix& positives,
                   const NegativeQueue& queue, double temperature);

/// Exemplar-wise loss over every tree layer, averaged over layers and summed
/// over the batch. `corpus_index[b]` locates batch row b in the tree.
/// Per-layer sums are written to `per_layer` when given.
LossValue exem_nce(const FeatureMatrix& propulsion, std::span<const std::size_t> corpus_index,
                   const ExemplarTree& tree, double temperature,
                   std::vector<double>* per_layer = nullptr);

struct HinceResult {
  LossReport report;
  FeatureMatrix grad;
};

/// info_nce + exem_nce; a missing tree contributes zero.
HinceResult hince(const FeatureMatrix& propulsion, const FeatureMatrix& positives,
                  const NegativeQueue& queue, const ExemplarTree* tree,
                  std::span<const std::size_t> corpus_index, double temperature);

}  // namespace relclust
