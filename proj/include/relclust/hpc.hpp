#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "relclust/affinity.hpp"

namespace relclust {

/// Preferences for layers 1..L, coarse (p_top) to fine (p_bot).
struct PreferenceSchedule {
  double p_top = 0.0;
  double p_bot = 0.0;
  std::vector<double> values;
};

/// Cross-hierarchy attention settings: `sharpness` scales exemplar dot
/// products inside the softmax, `mix` weights the attended vector that is
/// added to each point before the next layer.
struct ChaParams {
  double sharpness = 1.0;
  double mix = 0.5;

  /// 1/sqrt(feature_dim) sharpness with the default mix.
  static ChaParams for_dimension(std::size_t feature_dim);
};

struct HpcOptions {
  PropagationOptions propagation;
  ChaParams cha;
  /// Replaces p_bot (the finest preference) when set.
  std::optional<double> bottom_preference;
};

struct TreeLayer {
  double preference = 0.0;
  std::vector<std::size_t> exemplar_indices;   // sorted point indices
  std::vector<std::size_t> assignment;         // per point, position in exemplar_indices
  FeatureMatrix exemplar_vectors;              // unit rows, parallel to exemplar_indices
  std::vector<std::size_t> parent_of_exemplar; // position in the previous layer; empty for layer 1

  std::size_t cluster_count() const { return exemplar_indices.size(); }
};

/// Layers ordered coarse (index 0) to fine (index L-1).
struct ExemplarTree {
  std::vector<TreeLayer> layers;

  std::size_t layer_count() const { return layers.size(); }
  std::size_t point_count() const { return layers.empty() ? 0 : layers.front().assignment.size(); }
  std::vector<std::size_t> cluster_counts() const;
  /// Throws std::logic_error describing the first violated invariant.
  void check_invariants() const;
};

PreferenceSchedule preference_schedule(const SimilarityMatrix& similarity, std::size_t layers);

/// Row-stochastic attention among the rows of `exemplars`.
Matrix cha_matrix(const FeatureMatrix& exemplars, double sharpness);

/// h_i + mix * sum_k alpha_{j(i),k} e_k, renormalized to unit length;
/// `cluster_of` gives each point's row in `exemplars`.
FeatureMatrix apply_cha(const FeatureMatrix& features, const std::vector<std::size_t>& cluster_of,
                        const FeatureMatrix& exemplars, const ChaParams& params);

/// Hierarchical propagation clustering over `layers` granularities.
ExemplarTree hpc(const FeatureMatrix& features, std::size_t layers, const HpcOptions& options);

class HpcLayerFailure : public NumericalFailure {
 public:
  HpcLayerFailure(std::size_t layer, const NumericalFailure& cause);
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

struct PreferenceSearchResult {
  double preference = 0.0;
  std::size_t achieved_k = 0;
  bool exact = false;
  std::size_t evaluations = 0;
};

/// Bisection over [10 * min s_ij, 0] for a preference that yields
/// `target_k` clusters in a flat propagation run on `features`.
PreferenceSearchResult preference_for_k(const FeatureMatrix& features, std::size_t target_k,
                                        const PropagationOptions& options,
                                        std::size_t max_steps = 60);

/// Layer record built from a flat assignment over `features`.
TreeLayer make_layer(const FeatureMatrix& features, const ClusterAssignment& assignment,
                     double preference);
void link_parents(ExemplarTree& tree);

/// Tree JSON plus a sidecar CSV of exemplar vectors next to it.
void save_tree(const ExemplarTree& tree, const std::filesystem::path& json_path);
ExemplarTree load_tree(const std::filesystem::path& json_path);
std::filesystem::path tree_vectors_path(const std::filesystem::path& json_path);

}  // namespace relclust
