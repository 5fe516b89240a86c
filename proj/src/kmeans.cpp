#include "relclust/kmeans.hpp"

#include <limits>
#include <random>
#include <stdexcept>

namespace relclust {

ClusterAssignment kmeans_baseline(const FeatureMatrix& features, std::size_t k,
                                  std::uint64_t seed, std::size_t max_iter) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (k < 1 || k > n) throw std::invalid_argument("k must lie in [1, n]");

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> seeds{std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (seeds.size() < k) {
    const auto last = features.row(static_cast<Eigen::Index>(seeds.back()));
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], (features.row(static_cast<Eigen::Index>(i)) - last).squaredNorm());
      if (nearest[i] > far_d) {
        far_d = nearest[i];
        far = i;
      }
    }
    seeds.push_back(far);
  }

  FeatureMatrix centroids(static_cast<Eigen::Index>(k), features.cols());
  for (std::size_t c = 0; c < k; ++c) {
    centroids.row(static_cast<Eigen::Index>(c)) = features.row(static_cast<Eigen::Index>(seeds[c]));
  }

  std::vector<std::size_t> label(n, k);
  auto closest = [&](Eigen::Index i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = (features.row(i) - centroids.row(static_cast<Eigen::Index>(c))).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  };

  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = closest(static_cast<Eigen::Index>(i));
      if (c != label[i]) {
        label[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    FeatureMatrix sums = FeatureMatrix::Zero(centroids.rows(), centroids.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(label[i])) += features.row(static_cast<Eigen::Index>(i));
      ++counts[label[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centroids.row(static_cast<Eigen::Index>(c)) =
            sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
      }
    }
  }

  // Representative member per non-empty cluster.
  std::vector<std::size_t> representative(k, n);
  std::vector<double> representative_d(k, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = label[i];
    const double d =
        (features.row(static_cast<Eigen::Index>(i)) - centroids.row(static_cast<Eigen::Index>(c))).squaredNorm();
    if (d < representative_d[c]) {
      representative_d[c] = d;
      representative[c] = i;
    }
  }
  std::vector<std::size_t> exemplar_of(n);
  for (std::size_t i = 0; i < n; ++i) exemplar_of[i] = representative[label[i]];
  return ClusterAssignment::from_exemplar_of(std::move(exemplar_of));
}

}  // namespace relclust
