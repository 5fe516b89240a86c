#include "relclust/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace relclust {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

void check_square(const SquareMatrix& m, const char* name) {
  if (m.rows() != m.cols()) throw std::invalid_argument(std::string(name) + " must be square");
}

// Damped in-place responsibility pass. For each row only the largest and
// second largest s + a are needed: max over j' != j is the runner-up when
// j is the arg max and the maximum otherwise.
void responsibility_pass(const SquareMatrix& s, const SquareMatrix& a, SquareMatrix& r,
                         double damping) {
  const Eigen::Index n = s.rows();
  const double keep = damping;
  const double take = 1.0 - damping;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* srow = s.data() + i * n;
    const double* arow = a.data() + i * n;
    double* rrow = r.data() + i * n;
    double first = -std::numeric_limits<double>::infinity();
    double second = -std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = srow[j] + arow[j];
      if (v > first) {
        second = first;
        first = v;
        arg = j;
      } else if (v > second) {
        second = v;
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double raw = srow[j] - (j == arg ? second : first);
      rrow[j] = keep * rrow[j] + take * raw;
    }
  }
}

// Damped in-place availability pass. Column sums of max(0, r_i'j) over
// i' != j are accumulated in row order, then each entry removes its own
// contribution.
void availability_pass(const SquareMatrix& r, SquareMatrix& a, double damping,
                       std::vector<double>& column_sums) {
  const Eigen::Index n = r.rows();
  column_sums.assign(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* rrow = r.data() + i * n;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) column_sums[static_cast<std::size_t>(j)] += std::max(0.0, rrow[j]);
    }
  }
  const double keep = damping;
  const double take = 1.0 - damping;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* rrow = r.data() + i * n;
    double* arow = a.data() + i * n;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double sum = column_sums[static_cast<std::size_t>(j)];
      double raw;
      if (j == i) {
        raw = sum;
      } else {
        const double rjj = r(j, j);
        raw = std::min(0.0, rjj + (sum - std::max(0.0, rrow[j])));
      }
      arow[j] = keep * arow[j] + take * raw;
    }
  }
}

std::vector<std::size_t> argmax_choices(const SquareMatrix& r, const SquareMatrix& a) {
  const Eigen::Index n = r.rows();
  std::vector<std::size_t> choice(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double* rrow = r.data() + i * n;
    const double* arow = a.data() + i * n;
    double best = rrow[0] + arow[0];
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < n; ++j) {
      const double v = rrow[j] + arow[j];
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    choice[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arg);
  }
  return choice;
}

// Follows choice chains to a self-exemplary point. A cycle with no
// self-exemplary member promotes its lowest index.
std::vector<std::size_t> resolve_chains(std::vector<std::size_t> choice) {
  const std::size_t n = choice.size();
  std::vector<std::size_t> root(n, kNone);
  std::vector<unsigned char> state(n, 0);  // 0 new, 1 on current path, 2 resolved
  std::vector<std::size_t> path;
  for (std::size_t start = 0; start < n; ++start) {
    if (state[start] == 2) continue;
    path.clear();
    std::size_t c = start;
    while (state[c] == 0) {
      state[c] = 1;
      path.push_back(c);
      if (choice[c] == c) break;
      c = choice[c];
    }
    std::size_t r;
    if (state[c] == 2) {
      r = root[c];
    } else if (choice[c] == c) {
      r = c;
    } else {
      auto cycle_begin = std::find(path.begin(), path.end(), c);
      r = *std::min_element(cycle_begin, path.end());
      choice[r] = r;
    }
    for (std::size_t p : path) {
      root[p] = r;
      state[p] = 2;
    }
  }
  return root;
}

}  // namespace

std::vector<std::size_t> ClusterAssignment::cluster_ids() const {
  std::vector<std::size_t> ids(exemplar_of.size());
  for (std::size_t i = 0; i < exemplar_of.size(); ++i) {
    auto it = std::lower_bound(exemplars.begin(), exemplars.end(), exemplar_of[i]);
    ids[i] = static_cast<std::size_t>(it - exemplars.begin());
  }
  return ids;
}

ClusterAssignment ClusterAssignment::from_exemplar_of(std::vector<std::size_t> exemplar_of) {
  ClusterAssignment out;
  out.exemplars = exemplar_of;
  std::sort(out.exemplars.begin(), out.exemplars.end());
  out.exemplars.erase(std::unique(out.exemplars.begin(), out.exemplars.end()),
                      out.exemplars.end());
  for (std::size_t e : out.exemplars) {
    if (e >= exemplar_of.size() || exemplar_of[e] != e) {
      throw std::invalid_argument("exemplar " + std::to_string(e) + " is not self-assigned");
    }
  }
  out.exemplar_of = std::move(exemplar_of);
  out.members.resize(out.exemplars.size());
  const auto ids = out.cluster_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) out.members[ids[i]].push_back(i);
  return out;
}

SimilarityMatrix similarity_matrix(const FeatureMatrix& features) {
  const Eigen::Index n = features.rows();
  if (n < 2) throw std::invalid_argument("similarity matrix needs at least 2 points");
  if (!features.allFinite()) throw std::invalid_argument("features contain non-finite values");
  SimilarityMatrix s;
  s.values = SquareMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = -(features.row(i) - features.row(j)).squaredNorm();
      s.values(i, j) = v;
      s.values(j, i) = v;
    }
  }
  return s;
}

SquareMatrix update_responsibility(const SquareMatrix& s, const SquareMatrix& a) {
  check_square(s, "similarity");
  if (a.rows() != s.rows() || a.cols() != s.cols()) {
    throw std::invalid_argument("availability shape does not match similarity");
  }
  SquareMatrix r = SquareMatrix::Zero(s.rows(), s.cols());
  responsibility_pass(s, a, r, 0.0);
  return r;
}

SquareMatrix update_availability(const SquareMatrix& r) {
  check_square(r, "responsibility");
  SquareMatrix a = SquareMatrix::Zero(r.rows(), r.cols());
  std::vector<double> sums;
  availability_pass(r, a, 0.0, sums);
  return a;
}

ClusterAssignment extract_exemplars(const SquareMatrix& r, const SquareMatrix& a) {
  check_square(r, "responsibility");
  if (a.rows() != r.rows() || a.cols() != r.cols()) {
    throw std::invalid_argument("availability shape does not match responsibility");
  }
  return ClusterAssignment::from_exemplar_of(resolve_chains(argmax_choices(r, a)));
}

PropagationResult propagate(const SimilarityMatrix& similarity, double preference,
                            const PropagationOptions& options) {
  check_square(similarity.values, "similarity");
  const Eigen::Index n = similarity.values.rows();
  if (n < 1) throw std::invalid_argument("propagation needs at least one point");
  if (!(options.damping >= 0.0 && options.damping < 1.0)) {
    throw std::invalid_argument("damping must lie in [0,1)");
  }
  if (options.max_iter < 1) throw std::invalid_argument("max_iter must be at least 1");
  if (!std::isfinite(preference)) throw std::invalid_argument("preference must be finite");

  SquareMatrix s = similarity.values;
  s.diagonal().setConstant(preference);

  PropagationResult result;
  MessageState& state = result.state;
  state.responsibility = SquareMatrix::Zero(n, n);
  state.availability = SquareMatrix::Zero(n, n);
  std::vector<double> column_sums;
  std::vector<std::size_t> previous;

  for (std::size_t it = 1; it <= options.max_iter; ++it) {
    responsibility_pass(s, state.availability, state.responsibility, options.damping);
    availability_pass(state.responsibility, state.availability, options.damping, column_sums);
    state.iteration = it;
    if (!state.responsibility.allFinite() || !state.availability.allFinite()) {
      throw NumericalFailure(it, "non-finite message values at iteration " + std::to_string(it));
    }
    const auto choice = argmax_choices(state.responsibility, state.availability);
    bool decided = true;
    bool any = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool self = choice[static_cast<std::size_t>(i)] == static_cast<std::size_t>(i);
      const bool evidence = state.responsibility(i, i) + state.availability(i, i) > 0.0;
      if (self != evidence) decided = false;
      any = any || evidence;
    }
    decided = decided && any;
    result.assignment = ClusterAssignment::from_exemplar_of(resolve_chains(choice));
    if (!decided) {
      state.stable_iterations = 0;
    } else if (state.stable_iterations > 0 && result.assignment.exemplars == previous) {
      ++state.stable_iterations;
    } else {
      state.stable_iterations = 1;
    }
    previous = result.assignment.exemplars;
    if (state.stable_iterations >= options.stable_window) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace relclust
