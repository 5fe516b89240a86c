#include "relclust/hpc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "relclust/io_util.hpp"

namespace relclust {

ChaParams ChaParams::for_dimension(std::size_t feature_dim) {
  ChaParams p;
  p.sharpness = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(feature_dim, 1)));
  return p;
}

std::vector<std::size_t> ExemplarTree::cluster_counts() const {
  std::vector<std::size_t> counts;
  for (const auto& l : layers) counts.push_back(l.cluster_count());
  return counts;
}

void ExemplarTree::check_invariants() const {
  auto fail = [](std::size_t layer, const std::string& what) {
    throw std::logic_error("tree layer " + std::to_string(layer + 1) + ": " + what);
  };
  if (layers.empty()) throw std::logic_error("tree has no layers");
  const std::size_t n = point_count();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const TreeLayer& layer = layers[l];
    const std::size_t c = layer.cluster_count();
    if (c == 0) fail(l, "no exemplars");
    if (layer.assignment.size() != n) fail(l, "assignment length differs from point count");
    if (!std::is_sorted(layer.exemplar_indices.begin(), layer.exemplar_indices.end()) ||
        std::adjacent_find(layer.exemplar_indices.begin(), layer.exemplar_indices.end()) !=
            layer.exemplar_indices.end()) {
      fail(l, "exemplar indices not sorted and unique");
    }
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t e = layer.exemplar_indices[k];
      if (e >= n || layer.assignment[e] != k) fail(l, "exemplar not assigned to itself");
    }
    for (std::size_t a : layer.assignment) {
      if (a >= c) fail(l, "assignment refers to a missing exemplar");
    }
    if (static_cast<std::size_t>(layer.exemplar_vectors.rows()) != c) {
      fail(l, "exemplar vector count differs from exemplar count");
    }
    for (Eigen::Index k = 0; k < layer.exemplar_vectors.rows(); ++k) {
      if (std::abs(layer.exemplar_vectors.row(k).norm() - 1.0) > 1e-9) {
        fail(l, "exemplar vector is not unit norm");
      }
    }
    if (l == 0) {
      if (!layer.parent_of_exemplar.empty()) fail(l, "top layer has parent links");
    } else {
      if (layer.parent_of_exemplar.size() != c) fail(l, "parent link count differs");
      for (std::size_t k = 0; k < c; ++k) {
        if (layer.parent_of_exemplar[k] != layers[l - 1].assignment[layer.exemplar_indices[k]]) {
          fail(l, "parent link does not match previous layer assignment");
        }
      }
    }
  }
}

PreferenceSchedule preference_schedule(const SimilarityMatrix& similarity, std::size_t layers) {
  if (layers < 2) throw std::invalid_argument("preference schedule needs at least 2 layers");
  const std::size_t n = similarity.size();
  if (n < 2) throw std::invalid_argument("preference schedule needs at least 2 points");

  std::vector<double> off;
  off.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      off.push_back(similarity.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
  }
  PreferenceSchedule ps;
  ps.p_top = *std::min_element(off.begin(), off.end());
  const std::size_t mid = off.size() / 2;
  std::nth_element(off.begin(), off.begin() + static_cast<std::ptrdiff_t>(mid), off.end());
  const double upper = off[mid];
  if (off.size() % 2 == 1) {
    ps.p_bot = upper;
  } else {
    const double lower =
        *std::max_element(off.begin(), off.begin() + static_cast<std::ptrdiff_t>(mid));
    ps.p_bot = 0.5 * (lower + upper);
  }
  const double step = (ps.p_bot - ps.p_top) / static_cast<double>(layers - 1);
  for (std::size_t l = 0; l < layers; ++l) ps.values.push_back(ps.p_top + step * double(l));
  ps.values.back() = ps.p_bot;
  return ps;
}

Matrix cha_matrix(const FeatureMatrix& exemplars, double sharpness) {
  if (exemplars.rows() < 1) throw std::invalid_argument("attention needs at least one exemplar");
  Matrix att = sharpness * (exemplars * exemplars.transpose());
  for (Eigen::Index j = 0; j < att.rows(); ++j) {
    const double mx = att.row(j).maxCoeff();
    att.row(j) = (att.row(j).array() - mx).exp();
    att.row(j) /= att.row(j).sum();
  }
  return att;
}

FeatureMatrix apply_cha(const FeatureMatrix& features, const std::vector<std::size_t>& cluster_of,
                        const FeatureMatrix& exemplars, const ChaParams& params) {
  if (static_cast<std::size_t>(features.rows()) != cluster_of.size()) {
    throw std::invalid_argument("cluster assignment length differs from point count");
  }
  if (params.mix == 0.0) return features;
  const FeatureMatrix attended = cha_matrix(exemplars, params.sharpness) * exemplars;
  FeatureMatrix out(features.rows(), features.cols());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const auto j = static_cast<Eigen::Index>(cluster_of[static_cast<std::size_t>(i)]);
    if (j >= attended.rows()) throw std::invalid_argument("assignment refers to a missing exemplar");
    out.row(i) = features.row(i) + params.mix * attended.row(j);
    const double norm = out.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

TreeLayer make_layer(const FeatureMatrix& features, const ClusterAssignment& assignment,
                     double preference) {
  TreeLayer layer;
  layer.preference = preference;
  layer.exemplar_indices = assignment.exemplars;
  layer.assignment = assignment.cluster_ids();
  layer.exemplar_vectors.resize(static_cast<Eigen::Index>(assignment.exemplars.size()),
                                features.cols());
  for (std::size_t k = 0; k < assignment.exemplars.size(); ++k) {
    const auto row = features.row(static_cast<Eigen::Index>(assignment.exemplars[k]));
    const double norm = row.norm();
    layer.exemplar_vectors.row(static_cast<Eigen::Index>(k)) = norm > 0.0 ? (row / norm).eval()
                                                                           : row.eval();
  }
  return layer;
}

void link_parents(ExemplarTree& tree) {
  for (std::size_t l = 0; l < tree.layers.size(); ++l) {
    TreeLayer& layer = tree.layers[l];
    layer.parent_of_exemplar.clear();
    if (l == 0) continue;
    for (std::size_t e : layer.exemplar_indices) {
      layer.parent_of_exemplar.push_back(tree.layers[l - 1].assignment[e]);
    }
  }
}

HpcLayerFailure::HpcLayerFailure(std::size_t layer, const NumericalFailure& cause)
    : NumericalFailure(cause.iteration(),
                       "layer " + std::to_string(layer) + ": " + std::string(cause.what())),
      layer_(layer) {}

ExemplarTree hpc(const FeatureMatrix& features, std::size_t layers, const HpcOptions& options) {
  if (layers < 2) throw std::invalid_argument("hierarchical clustering needs at least 2 layers");
  const SimilarityMatrix initial = similarity_matrix(features);
  PreferenceSchedule schedule = preference_schedule(initial, layers);
  if (options.bottom_preference) {
    const double step = (*options.bottom_preference - schedule.p_top) / double(layers - 1);
    schedule.p_bot = *options.bottom_preference;
    for (std::size_t l = 0; l < layers; ++l) schedule.values[l] = schedule.p_top + step * double(l);
    schedule.values.back() = schedule.p_bot;
  }

  ExemplarTree tree;
  FeatureMatrix current = features;
  for (std::size_t l = 0; l < layers; ++l) {
    const SimilarityMatrix s = l == 0 ? initial : similarity_matrix(current);
    PropagationResult result;
    try {
      result = propagate(s, schedule.values[l], options.propagation);
    } catch (const NumericalFailure& e) {
      throw HpcLayerFailure(l + 1, e);
    }
    tree.layers.push_back(make_layer(current, result.assignment, schedule.values[l]));
    if (l + 1 < layers) {
      const TreeLayer& layer = tree.layers.back();
      current = apply_cha(current, layer.assignment, layer.exemplar_vectors, options.cha);
    }
  }
  link_parents(tree);
  return tree;
}

PreferenceSearchResult preference_for_k(const FeatureMatrix& features, std::size_t target_k,
                                        const PropagationOptions& options,
                                        std::size_t max_steps) {
  const std::size_t n = static_cast<std::size_t>(features.rows());
  if (target_k < 1 || target_k > n) {
    throw std::invalid_argument("target cluster count must lie in [1, n]");
  }
  const SimilarityMatrix s = similarity_matrix(features);
  double min_s = 0.0;
  for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < s.values.cols(); ++j) min_s = std::min(min_s, s.values(i, j));
  }

  PreferenceSearchResult best;
  bool have_best = false;
  auto evaluate = [&](double pref) {
    const std::size_t k = propagate(s, pref, options).assignment.cluster_count();
    ++best.evaluations;
    const auto gap = [&](std::size_t v) { return v > target_k ? v - target_k : target_k - v; };
    if (!have_best || gap(k) < gap(best.achieved_k)) {
      best.preference = pref;
      best.achieved_k = k;
      have_best = true;
    }
    best.exact = best.achieved_k == target_k;
    return k;
  };

  double lo = 10.0 * min_s;
  double hi = 0.0;
  const std::size_t k_lo = evaluate(lo);
  if (k_lo >= target_k || lo == hi) return best;
  const std::size_t k_hi = evaluate(hi);
  if (k_hi <= target_k) return best;

  for (std::size_t step = 0; step < max_steps && !best.exact; ++step) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // bracket collapsed
    const std::size_t k = evaluate(mid);
    if (k < target_k) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Serialization

std::filesystem::path tree_vectors_path(const std::filesystem::path& json_path) {
  std::filesystem::path p = json_path;
  p.replace_extension(".vectors.csv");
  return p;
}

void save_tree(const ExemplarTree& tree, const std::filesystem::path& json_path) {
  using nlohmann::ordered_json;
  const auto vectors_path = tree_vectors_path(json_path);
  ordered_json j;
  j["format"] = "relclust-exemplar-tree/1";
  j["points"] = tree.point_count();
  j["dim"] = tree.layers.empty() ? 0 : tree.layers.front().exemplar_vectors.cols();
  j["vectors"] = vectors_path.filename().string();
  j["layers"] = ordered_json::array();
  std::size_t row = 0;
  std::string csv = "layer,exemplar";
  const Eigen::Index dim = tree.layers.empty() ? 0 : tree.layers.front().exemplar_vectors.cols();
  for (Eigen::Index k = 0; k < dim; ++k) csv += ",v" + std::to_string(k);
  csv += '\n';
  for (std::size_t l = 0; l < tree.layers.size(); ++l) {
    const TreeLayer& layer = tree.layers[l];
    ordered_json lj;
    lj["layer"] = l + 1;
    lj["preference"] = layer.preference;
    lj["cluster_count"] = layer.cluster_count();
    lj["exemplar_indices"] = layer.exemplar_indices;
    lj["assignment"] = layer.assignment;
    lj["parent_of_exemplar"] = layer.parent_of_exemplar;
    lj["vector_rows"] = {row, layer.cluster_count()};
    j["layers"].push_back(std::move(lj));
    for (Eigen::Index k = 0; k < layer.exemplar_vectors.rows(); ++k) {
      csv += std::to_string(l + 1) + "," + std::to_string(layer.exemplar_indices[std::size_t(k)]);
      for (Eigen::Index c = 0; c < layer.exemplar_vectors.cols(); ++c) {
        csv += ',' + format_double(layer.exemplar_vectors(k, c));
      }
      csv += '\n';
    }
    row += layer.cluster_count();
  }
  write_text_file(json_path, j.dump(1) + "\n");
  write_text_file(vectors_path, csv);
}

ExemplarTree load_tree(const std::filesystem::path& json_path) {
  const auto j = nlohmann::json::parse(read_text_file(json_path));
  if (j.at("format").get<std::string>() != "relclust-exemplar-tree/1") {
    throw std::runtime_error("unsupported tree format in " + json_path.string());
  }
  const FeatureTable table =
      read_feature_csv(json_path.parent_path() / j.at("vectors").get<std::string>());
  ExemplarTree tree;
  for (const auto& lj : j.at("layers")) {
    TreeLayer layer;
    layer.preference = lj.at("preference").get<double>();
    layer.exemplar_indices = lj.at("exemplar_indices").get<std::vector<std::size_t>>();
    layer.assignment = lj.at("assignment").get<std::vector<std::size_t>>();
    layer.parent_of_exemplar = lj.at("parent_of_exemplar").get<std::vector<std::size_t>>();
    const auto rows = lj.at("vector_rows").get<std::vector<std::size_t>>();
    if (rows.size() != 2 || rows[0] + rows[1] > static_cast<std::size_t>(table.values.rows())) {
      throw std::runtime_error("tree vector rows out of range in " + json_path.string());
    }
    // The sidecar's first value column is the exemplar index.
    layer.exemplar_vectors = table.values.block(static_cast<Eigen::Index>(rows[0]), 1,
                                                static_cast<Eigen::Index>(rows[1]),
                                                table.values.cols() - 1);
    tree.layers.push_back(std::move(layer));
  }
  tree.check_invariants();
  return tree;
}

}  // namespace relclust
