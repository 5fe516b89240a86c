#include "relclust/contrastive.hpp"

#include <cmath>
#include <stdexcept>

namespace relclust {

NegativeQueue::NegativeQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity),
      buffer_(FeatureMatrix::Zero(static_cast<Eigen::Index>(capacity),
                                  static_cast<Eigen::Index>(dim))) {
  if (capacity == 0) throw std::invalid_argument("queue capacity must be positive");
}

void NegativeQueue::push(const FeatureMatrix& rows) {
  if (rows.cols() != buffer_.cols()) throw std::invalid_argument("queue row width mismatch");
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    buffer_.row(static_cast<Eigen::Index>(cursor_)) = rows.row(i);
    cursor_ = (cursor_ + 1) % capacity_;
    if (fill_ < capacity_) ++fill_;
  }
}

FeatureMatrix NegativeQueue::most_recent(std::size_t count) const {
  count = std::min(count, fill_);
  FeatureMatrix out(static_cast<Eigen::Index>(count), buffer_.cols());
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t slot = (cursor_ + capacity_ - 1 - k) % capacity_;
    out.row(static_cast<Eigen::Index>(k)) = buffer_.row(static_cast<Eigen::Index>(slot));
  }
  return out;
}

void queue_push(NegativeQueue& queue, const FeatureMatrix& momentum_batch) {
  queue.push(momentum_batch);
}

namespace {

void check_temperature(double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
}

// Cross-entropy of a softmax over `logits` against entry `target`, with the
// softmax probabilities left in `probs`.
double softmax_xent(const Vector& logits, Eigen::Index target, Vector& probs) {
  const double mx = logits.maxCoeff();
  probs = (logits.array() - mx).exp();
  const double sum = probs.sum();
  probs /= sum;
  return (mx + std::log(sum)) - logits(target);
}

}  // namespace

LossValue info_nce(const FeatureMatrix& propulsion, const FeatureMatrix& positives,
                   const NegativeQueue& queue, double temperature) {
  check_temperature(temperature);
  if (positives.rows() != propulsion.rows() || positives.cols() != propulsion.cols()) {
    throw std::invalid_argument("positives must match the propulsion batch shape");
  }
  if (queue.size() == 0) throw std::invalid_argument("negative queue is empty");
  if (static_cast<std::size_t>(propulsion.cols()) != queue.dim()) {
    throw std::invalid_argument("queue width differs from feature width");
  }

  const FeatureMatrix negatives = queue.most_recent(queue.capacity() - 1);
  const Eigen::Index m = negatives.rows();
  LossValue out;
  out.grad = FeatureMatrix::Zero(propulsion.rows(), propulsion.cols());
  Vector logits(m + 1);
  Vector probs;
  for (Eigen::Index i = 0; i < propulsion.rows(); ++i) {
    const auto h = propulsion.row(i);
    logits(0) = h.dot(positives.row(i)) / temperature;
    if (m > 0) logits.tail(m) = (negatives * h.transpose()) / temperature;
    out.loss += softmax_xent(logits, 0, probs);
    // d/dh = (sum_k p_k x_k - x_pos) / tau
    auto g = out.grad.row(i);
    g = (probs(0) - 1.0) * positives.row(i);
    if (m > 0) g += probs.tail(m).transpose() * negatives;
    g /= temperature;
  }
  return out;
}

LossValue exem_nce(const FeatureMatrix& propulsion, std::span<const std::size_t> corpus_index,
                   const ExemplarTree& tree, double temperature, std::vector<double>* per_layer) {
  check_temperature(temperature);
  if (static_cast<std::size_t>(propulsion.rows()) != corpus_index.size()) {
    throw std::invalid_argument("corpus index length differs from batch size");
  }
  if (tree.layers.empty()) throw std::invalid_argument("exemplar tree has no layers");
  const double layer_weight = 1.0 / static_cast<double>(tree.layer_count());

  LossValue out;
  out.grad = FeatureMatrix::Zero(propulsion.rows(), propulsion.cols());
  if (per_layer) per_layer->assign(tree.layer_count(), 0.0);
  Vector logits, probs;
  for (std::size_t l = 0; l < tree.layer_count(); ++l) {
    const TreeLayer& layer = tree.layers[l];
    if (layer.exemplar_vectors.cols() != propulsion.cols()) {
      throw std::invalid_argument("exemplar width differs from feature width");
    }
    for (Eigen::Index i = 0; i < propulsion.rows(); ++i) {
      const std::size_t point = corpus_index[static_cast<std::size_t>(i)];
      if (point >= layer.assignment.size()) {
        throw std::out_of_range("instance " + std::to_string(point) + " missing from tree");
      }
      const auto own = static_cast<Eigen::Index>(layer.assignment[point]);
      logits = (layer.exemplar_vectors * propulsion.row(i).transpose()) / temperature;
      const double term = layer_weight * softmax_xent(logits, own, probs);
      out.loss += term;
      if (per_layer) (*per_layer)[l] += term;
      probs(own) -= 1.0;
      out.grad.row(i) += (layer_weight / temperature) * (probs.transpose() * layer.exemplar_vectors);
    }
  }
  return out;
}

HinceResult hince(const FeatureMatrix& propulsion, const FeatureMatrix& positives,
                  const NegativeQueue& queue, const ExemplarTree* tree,
                  std::span<const std::size_t> corpus_index, double temperature) {
  LossValue info = info_nce(propulsion, positives, queue, temperature);
  HinceResult out;
  out.report.info_nce = info.loss;
  out.grad = std::move(info.grad);
  if (tree != nullptr) {
    LossValue exem = exem_nce(propulsion, corpus_index, *tree, temperature,
                              &out.report.exem_per_layer);
    out.report.exem_nce = exem.loss;
    out.grad += exem.grad;
  }
  out.report.hince = out.report.info_nce + out.report.exem_nce;
  return out;
}

}  // namespace relclust
