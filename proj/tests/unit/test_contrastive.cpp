#include <algorithm>
#include <cmath>
#include <functional>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "relclust/contrastive.hpp"

using namespace relclust;

namespace {

oracle::Rows rows_of(const FeatureMatrix& m) {
  oracle::Rows out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[i].assign(m.row(i).data(), m.row(i).data() + m.cols());
  return out;
}

double max_rel(const FeatureMatrix& a, const FeatureMatrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300});
}

FeatureMatrix fd_gradient(FeatureMatrix h, const std::function<double(const FeatureMatrix&)>& f,
                          double step = 1e-6) {
  FeatureMatrix g(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
      const double keep = h(i, j);
      h(i, j) = keep + step;
      const double up = f(h);
      h(i, j) = keep - step;
      const double down = f(h);
      h(i, j) = keep;
      g(i, j) = (up - down) / (2 * step);
    }
  }
  return g;
}

ExemplarTree hand_tree(std::size_t n, std::size_t dim, std::uint64_t seed) {
  ExemplarTree tree;
  const std::size_t counts[2] = {2, 3};
  for (std::size_t l = 0; l < 2; ++l) {
    TreeLayer layer;
    layer.exemplar_vectors = fixtures::random_unit_rows(counts[l], dim, seed + l);
    for (std::size_t k = 0; k < counts[l]; ++k) layer.exemplar_indices.push_back(k);
    for (std::size_t i = 0; i < n; ++i) layer.assignment.push_back(i < counts[l] ? i : (i * 7 + l) % counts[l]);
    tree.layers.push_back(layer);
  }
  link_parents(tree);
  return tree;
}

}  // namespace

TEST_CASE("queue push and eviction") {
  NegativeQueue q(4, 2);
  FeatureMatrix three(3, 2);
  three << 1, 0, 0, 1, -1, 0;
  q.push(three);
  CHECK(q.size() == 3);
  CHECK(q.cursor() == 3);
  FeatureMatrix two(2, 2);
  two << 0, -1, 0.6, 0.8;
  queue_push(q, two);
  CHECK(q.size() == 4);
  CHECK(q.cursor() == 1);
  // Oldest entry (1,0) was overwritten by (0.6,0.8).
  FeatureMatrix expected(4, 2);
  expected << 0.6, 0.8, 0, 1, -1, 0, 0, -1;
  CHECK(q.buffer() == expected);
  const FeatureMatrix recent = q.most_recent(3);
  CHECK(recent.row(0) == two.row(1));
  CHECK(recent.row(1) == two.row(0));
  CHECK(recent.row(2) == three.row(2));
  CHECK(q.most_recent(10).rows() == 4);
  CHECK_THROWS_AS(q.push(FeatureMatrix::Zero(1, 3)), std::invalid_argument);
  CHECK_THROWS_AS(NegativeQueue(0, 2), std::invalid_argument);
}

TEST_CASE("info_nce with uniform logits is ln of the term count") {
  const std::size_t j = 512;
  NegativeQueue q(j, 4);
  FeatureMatrix e(static_cast<Eigen::Index>(j), 4);
  for (Eigen::Index i = 0; i < e.rows(); ++i) e.row(i) << 0, 1, 0, 0;
  q.push(e);
  FeatureMatrix h(2, 4), pos(2, 4);
  h << 1, 0, 0, 0, 1, 0, 0, 0;
  pos << 0, 0, 1, 0, 0, 0, 0, 1;
  const auto full = info_nce(h, pos, q, 0.02);
  CHECK(std::abs(full.loss / 2 - std::log(512.0)) < 1e-12);
  CHECK(full.loss / 2 == doctest::Approx(6.2383).epsilon(1e-5));

  NegativeQueue partial(j, 4);
  partial.push(e.topRows(9));
  CHECK(std::abs(info_nce(h, pos, partial, 0.02).loss / 2 - std::log(10.0)) < 1e-12);
}

TEST_CASE("info_nce with a dominant positive tends to zero") {
  NegativeQueue q(8, 3);
  FeatureMatrix neg(7, 3);
  for (Eigen::Index i = 0; i < 7; ++i) neg.row(i) << 0, (i % 2 ? 1 : -1), 0;
  q.push(neg);
  FeatureMatrix h(1, 3);
  h << 1, 0, 0;
  const auto small = info_nce(h, h, q, 0.01);
  CHECK(small.loss < 1e-40);
  CHECK(info_nce(h, h, q, 1.0).loss > small.loss);
}

TEST_CASE("info_nce matches direct evaluation and finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    const FeatureMatrix h = fixtures::random_unit_rows(3, 6, seed);
    const FeatureMatrix pos = fixtures::random_unit_rows(3, 6, seed + 100);
    const FeatureMatrix queued = fixtures::random_unit_rows(5, 6, seed + 200);
    NegativeQueue q(4, 6);
    q.push(queued);
    const double tau = seed % 2 ? 0.02 : 0.5;
    const auto lv = info_nce(h, pos, q, tau);
    const auto negatives = rows_of(q.most_recent(3));
    CHECK(lv.loss == doctest::Approx(oracle::direct_info_nce(rows_of(h), rows_of(pos), negatives, tau)).epsilon(1e-12));
    auto f = [&](const FeatureMatrix& x) { return info_nce(x, pos, q, tau).loss; };
    CHECK(max_rel(lv.grad, fd_gradient(h, f)) < 1e-5);
  }
  const FeatureMatrix h = fixtures::random_unit_rows(2, 3, 1);
  NegativeQueue empty(4, 3);
  CHECK_THROWS_AS(info_nce(h, h, empty, 0.1), std::invalid_argument);
  NegativeQueue q(4, 3);
  q.push(h);
  CHECK_THROWS_AS(info_nce(h, h, q, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(info_nce(h, h.topRows(1), q, 0.1), std::invalid_argument);
}

TEST_CASE("exem_nce examples") {
  ExemplarTree single;
  for (int l = 0; l < 3; ++l) {
    TreeLayer layer;
    layer.exemplar_indices = {0};
    layer.assignment = {0, 0, 0};
    layer.exemplar_vectors = fixtures::random_unit_rows(1, 4, 7 + l);
    single.layers.push_back(layer);
  }
  const FeatureMatrix h = fixtures::random_unit_rows(3, 4, 3);
  const std::vector<std::size_t> idx{0, 1, 2};
  const auto zero = exem_nce(h, idx, single, 0.02);
  CHECK(zero.loss == 0.0);
  CHECK(zero.grad.cwiseAbs().maxCoeff() == 0.0);

  ExemplarTree flat;
  TreeLayer layer;
  layer.exemplar_indices = {0, 1, 2};
  layer.assignment = {0, 1, 2};
  layer.exemplar_vectors.resize(3, 3);
  layer.exemplar_vectors << 0, 1, 0, 0, 0, 1, 0, -1, 0;
  flat.layers.push_back(layer);
  FeatureMatrix hx(1, 3);
  hx << 1, 0, 0;
  const std::vector<std::size_t> one{1};
  CHECK(std::abs(exem_nce(hx, one, flat, 0.02).loss - std::log(3.0)) < 1e-12);

  const std::vector<std::size_t> missing{9};
  CHECK_THROWS_AS(exem_nce(hx, missing, flat, 0.02), std::out_of_range);
}

TEST_CASE("exem_nce matches direct evaluation, finite differences and is permutation invariant") {
  const std::size_t n = 6;
  const auto tree = hand_tree(n, 5, 40);
  const FeatureMatrix h = fixtures::random_unit_rows(4, 5, 41);
  const std::vector<std::size_t> idx{5, 0, 3, 2};
  for (double tau : {0.02, 0.3}) {
    std::vector<double> per_layer;
    const auto lv = exem_nce(h, idx, tree, tau, &per_layer);
    std::vector<oracle::Rows> ex;
    std::vector<std::vector<std::size_t>> own(2);
    for (std::size_t l = 0; l < 2; ++l) {
      ex.push_back(rows_of(tree.layers[l].exemplar_vectors));
      for (auto i : idx) own[l].push_back(tree.layers[l].assignment[i]);
    }
    CHECK(lv.loss == doctest::Approx(oracle::direct_exem_nce(rows_of(h), ex, own, tau)).epsilon(1e-12));
    CHECK(per_layer[0] + per_layer[1] == doctest::Approx(lv.loss).epsilon(1e-14));
    auto f = [&](const FeatureMatrix& x) { return exem_nce(x, idx, tree, tau).loss; };
    CHECK(max_rel(lv.grad, fd_gradient(h, f)) < 1e-5);

    // Reverse the exemplar order of layer 2 and remap assignments.
    auto permuted = tree;
    auto& l2 = permuted.layers[1];
    l2.exemplar_vectors = l2.exemplar_vectors.colwise().reverse().eval();
    for (auto& a : l2.assignment) a = 2 - a;
    const auto lp = exem_nce(h, idx, permuted, tau);
    CHECK(lp.loss == doctest::Approx(lv.loss).epsilon(1e-13));
    CHECK((lp.grad - lv.grad).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("hince sums its parts") {
  const FeatureMatrix h = fixtures::random_unit_rows(4, 5, 50);
  const FeatureMatrix pos = fixtures::random_unit_rows(4, 5, 51);
  NegativeQueue q(16, 5);
  q.push(fixtures::random_unit_rows(20, 5, 52));
  const auto tree = hand_tree(6, 5, 53);
  const std::vector<std::size_t> idx{1, 2, 3, 4};
  const double tau = 0.1;

  const auto both = hince(h, pos, q, &tree, idx, tau);
  const auto info = info_nce(h, pos, q, tau);
  const auto exem = exem_nce(h, idx, tree, tau);
  CHECK(both.report.info_nce == info.loss);
  CHECK(both.report.exem_nce == exem.loss);
  CHECK(both.report.hince == info.loss + exem.loss);
  CHECK((both.grad - (info.grad + exem.grad)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(both.report.exem_per_layer.size() == 2);
  CHECK(q.size() == 16);

  auto f = [&](const FeatureMatrix& x) { return hince(x, pos, q, &tree, idx, tau).report.hince; };
  CHECK(max_rel(both.grad, fd_gradient(h, f)) < 1e-5);

  const auto none = hince(h, pos, q, nullptr, idx, tau);
  CHECK(none.report.exem_nce == 0.0);
  CHECK(none.report.hince == info.loss);

  ExemplarTree single;
  TreeLayer layer;
  layer.exemplar_indices = {0};
  layer.assignment.assign(6, 0);
  layer.exemplar_vectors = fixtures::random_unit_rows(1, 5, 9);
  single.layers.push_back(layer);
  CHECK(hince(h, pos, q, &single, idx, tau).report.hince == info.loss);
}

TEST_CASE("losses stay finite and non-negative at small temperature") {
  const FeatureMatrix h = fixtures::random_unit_rows(8, 6, 60);
  NegativeQueue q(32, 6);
  q.push(fixtures::random_unit_rows(32, 6, 61));
  const auto tree = hand_tree(8, 6, 62);
  std::vector<std::size_t> idx(8);
  for (std::size_t i = 0; i < 8; ++i) idx[i] = i;
  for (double tau : {1e-4, 1e-3, 0.02}) {
    const auto r = hince(h, h, q, &tree, idx, tau);
    CHECK(std::isfinite(r.report.hince));
    CHECK(r.report.info_nce >= 0.0);
    CHECK(r.report.exem_nce >= 0.0);
    CHECK(r.grad.allFinite());
  }
}
