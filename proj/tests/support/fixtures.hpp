#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "relclust/corpus.hpp"
#include "relclust/encoder.hpp"

namespace fixtures {

inline relclust::FeatureMatrix random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  relclust::FeatureMatrix h(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) h(i, j) = g(rng);
    h.row(i).normalize();
  }
  return h;
}

/// Two well-separated parent blobs, each split into two sub-blobs (40 rows,
/// unit norm). Parent 0 holds sub-blobs of 15 and 15 points, parent 1 holds
/// 5 and 5, so the median similarity falls among within-parent pairs.
/// `leaf[i]` is in 0..3 and `parent[i] = leaf[i] / 2`.
struct Blobs {
  relclust::FeatureMatrix points;
  std::vector<int> leaf;
  std::vector<int> parent;
};

inline Blobs two_level_blobs(std::uint64_t seed, double noise = 0.01) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  const std::size_t d = 8;
  const int sizes[4] = {15, 15, 5, 5};
  // Parents along axes 0 and 1; children offset along axes 2/3 or 4/5.
  Blobs b;
  b.points.resize(40, d);
  Eigen::Index row = 0;
  for (int leaf = 0; leaf < 4; ++leaf) {
    const int parent = leaf / 2;
    for (int k = 0; k < sizes[leaf]; ++k, ++row) {
      Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(d);
      v(parent) = 1.0;
      v(2 + 2 * parent + (leaf % 2)) = 0.2;
      for (std::size_t j = 0; j < d; ++j) v(static_cast<Eigen::Index>(j)) += g(rng);
      b.points.row(row) = v.normalized();
      b.leaf.push_back(leaf);
      b.parent.push_back(parent);
    }
  }
  return b;
}

inline relclust::Sentence make_sentence(std::string id, std::vector<std::string> tokens,
                                        relclust::TokenSpan head, relclust::TokenSpan tail,
                                        std::vector<std::string> labels = {}) {
  relclust::Sentence s;
  s.id = std::move(id);
  s.tokens = std::move(tokens);
  s.head = head;
  s.tail = tail;
  s.label_path = std::move(labels);
  return s;
}

}  // namespace fixtures
