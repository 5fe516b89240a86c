#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "relclust/encoder.hpp"

namespace relclust {

/// Dense row-major n x n matrix used for similarities and messages.
using SquareMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// s_ij = -||h_i - h_j||^2 off the diagonal; the diagonal holds the
/// preference once propagation sets it (zero until then).
struct SimilarityMatrix {
  SquareMatrix values;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  void set_preference(double preference) { values.diagonal().setConstant(preference); }
};

struct MessageState {
  SquareMatrix responsibility;
  SquareMatrix availability;
  std::size_t iteration = 0;
  std::size_t stable_iterations = 0;
};

struct ClusterAssignment {
  std::vector<std::size_t> exemplar_of;   // per point, a self-exemplary point index
  std::vector<std::size_t> exemplars;     // sorted, unique
  std::vector<std::vector<std::size_t>> members;  // parallel to `exemplars`

  std::size_t cluster_count() const { return exemplars.size(); }
  /// Position of each point's exemplar in `exemplars`.
  std::vector<std::size_t> cluster_ids() const;
  static ClusterAssignment from_exemplar_of(std::vector<std::size_t> exemplar_of);
};

struct PropagationOptions {
  double damping = 0.7;
  std::size_t max_iter = 400;
  std::size_t stable_window = 10;
};

struct PropagationResult {
  ClusterAssignment assignment;
  MessageState state;
  bool converged = false;
};

class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(std::size_t iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

SimilarityMatrix similarity_matrix(const FeatureMatrix& features);

/// Raw responsibility update r_ij = s_ij - max_{j' != j}(s_ij' + a_ij').
SquareMatrix update_responsibility(const SquareMatrix& s, const SquareMatrix& a);

/// Raw availability update: a_ii = sum_{i' != i} max(0, r_i'i),
/// a_ij = min(0, r_jj + sum_{i' not in {i,j}} max(0, r_i'j)).
SquareMatrix update_availability(const SquareMatrix& r);

/// argmax_j (a_ij + r_ij) with lowest-index ties, then chains are followed
/// until every point maps onto a self-exemplary point.
ClusterAssignment extract_exemplars(const SquareMatrix& r, const SquareMatrix& a);

/// Damped affinity propagation on `similarity` with its diagonal replaced
/// by `preference`. Stops once the exemplar set is unchanged for
/// `stable_window` consecutive decided iterations, or after `max_iter`.
/// An iteration is decided when the self-chosen points are exactly those
/// with r_kk + a_kk > 0 and there is at least one; other iterations reset
/// the count.
PropagationResult propagate(const SimilarityMatrix& similarity, double preference,
                            const PropagationOptions& options = {});

}  // namespace relclust
