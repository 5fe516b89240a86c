#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "fixtures.hpp"
#include "relclust/checkpoint.hpp"
#include "relclust/io_util.hpp"
#include "relclust/kmeans.hpp"
#include "relclust/trainer.hpp"

using namespace relclust;

namespace {

EncoderDims tiny_dims() {
  EncoderDims d;
  d.model_dim = 8;
  d.ff_dim = 16;
  d.vocab_size = 256;
  d.max_len = 64;
  return d;
}

RunConfig tiny_config() {
  RunConfig c;
  c.dims = tiny_dims();
  c.queue_size = 32;
  c.batch_size = 8;
  c.layers = 2;
  c.epochs = 2;
  c.seed = 5;
  return c;
}

Corpus tiny_corpus() {
  TaxonomySpec spec;
  spec.branching = {2, 2};
  spec.sentences_per_leaf = 12;
  spec.vocab_size = 300;
  spec.seed = 3;
  return generate_corpus(spec);
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("relclust_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Textbook scalar AdamW, one parameter.
struct ScalarAdamW {
  double m = 0, v = 0;
  int t = 0;
  double step(double p, double g, const AdamWConfig& c) {
    ++t;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mh = m / (1 - std::pow(c.beta1, t));
    const double vh = v / (1 - std::pow(c.beta2, t));
    return p - c.learning_rate * (mh / (std::sqrt(vh) + c.epsilon) + c.weight_decay * p);
  }
};

}  // namespace

TEST_CASE("adamw matches a scalar reference over several steps") {
  const auto dims = tiny_dims();
  auto params = EncoderParams::random(dims, 1);
  const auto start = params;
  auto state = AdamWState::zeros_like(params);
  AdamWConfig cfg;
  cfg.learning_rate = 0.01;
  std::vector<EncoderParams> grads;
  for (std::uint64_t s = 0; s < 4; ++s) grads.push_back(EncoderParams::random(dims, 100 + s));
  for (const auto& g : grads) adamw_step(params, g, state, cfg);
  CHECK(state.step == 4);

  for (std::size_t t = 0; t < EncoderParams::kTensorCount; ++t) {
    const Matrix& got = params.tensor(t);
    for (Eigen::Index k = 0; k < got.size(); k += 7) {
      ScalarAdamW ref;
      double p = start.tensor(t).data()[k];
      for (const auto& g : grads) p = ref.step(p, g.tensor(t).data()[k], cfg);
      CHECK(got.data()[k] == doctest::Approx(p).epsilon(1e-12));
    }
  }
}

TEST_CASE("adamw zero gradient and decoupled decay") {
  const auto dims = tiny_dims();
  auto params = EncoderParams::random(dims, 2);
  const auto start = params;
  auto state = AdamWState::zeros_like(params);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(params, EncoderParams::zeros(dims), state, cfg);
  CHECK(params.max_abs_difference(start) == 0.0);

  cfg.weight_decay = 0.1;
  cfg.learning_rate = 0.01;
  adamw_step(params, EncoderParams::zeros(dims), state, cfg);
  auto scaled = start;
  scaled.add_scaled(start, -0.01 * 0.1);
  CHECK(params.max_abs_difference(scaled) < 1e-15);
}

TEST_CASE("adamw aborts on non-finite gradients without mutation") {
  const auto dims = tiny_dims();
  auto params = EncoderParams::random(dims, 3);
  const auto start = params;
  auto state = AdamWState::zeros_like(params);
  auto g = EncoderParams::random(dims, 4);
  g.ln2_bias(0, 3) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adamw_step(params, g, state, AdamWConfig{}), NonFiniteGradient);
  CHECK(params.max_abs_difference(start) == 0.0);
  CHECK(state.step == 0);
  CHECK(state.first_moment.max_abs_difference(EncoderParams::zeros(dims)) == 0.0);
  CHECK_THROWS(adamw_step(params, EncoderParams::zeros(EncoderDims{}), state, AdamWConfig{}));
}

TEST_CASE("momentum_update examples and bound") {
  const auto dims = tiny_dims();
  const auto prime = EncoderParams::random(dims, 7);
  auto theta = EncoderParams::random(dims, 8);
  auto copy = theta;
  momentum_update(copy, prime, 0.0);
  CHECK(copy.max_abs_difference(prime) == 0.0);

  auto fixed = prime;
  momentum_update(fixed, prime, 0.999);
  CHECK(fixed.max_abs_difference(prime) == 0.0);

  auto scalar = EncoderParams::zeros(dims);
  scalar.b_ff2(0, 0) = 1.0;
  momentum_update(scalar, EncoderParams::zeros(dims), 0.999);
  CHECK(scalar.b_ff2(0, 0) == doctest::Approx(0.999).epsilon(1e-15));

  const double gap = theta.max_abs_difference(prime);
  const auto before = theta;
  momentum_update(theta, prime, 0.999);
  // 1 - 0.999 is 0.001 plus one rounding unit.
  CHECK(theta.max_abs_difference(before) <= 0.001 * gap * (1 + 1e-12));

  CHECK_THROWS_AS(momentum_update(theta, EncoderParams::zeros(EncoderDims{}), 0.5), std::invalid_argument);
  CHECK_THROWS_AS(momentum_update(theta, prime, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(momentum_update(theta, prime, -0.1), std::invalid_argument);
}

TEST_CASE("kmeans examples") {
  const auto h = fixtures::random_unit_rows(12, 4, 9);
  CHECK(kmeans_baseline(h, 12, 1).cluster_count() == 12);
  const auto one = kmeans_baseline(h, 1, 1);
  CHECK(one.cluster_count() == 1);
  CHECK(one.members[0].size() == 12);
  // The representative is the member nearest the mean.
  const Eigen::RowVectorXd mean = h.colwise().mean();
  Eigen::Index nearest;
  (h.rowwise() - mean).rowwise().squaredNorm().minCoeff(&nearest);
  CHECK(one.exemplars[0] == static_cast<std::size_t>(nearest));

  const auto blobs = fixtures::two_level_blobs(2);
  const auto two = kmeans_baseline(blobs.points, 2, 4);
  const auto ids = two.cluster_ids();
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < ids.size(); ++j) CHECK((ids[i] == ids[j]) == (blobs.parent[i] == blobs.parent[j]));

  CHECK(kmeans_baseline(h, 3, 6).exemplar_of == kmeans_baseline(h, 3, 6).exemplar_of);
  CHECK_THROWS_AS(kmeans_baseline(h, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_baseline(h, 13, 1), std::invalid_argument);
}

TEST_CASE("config validation reports every problem") {
  RunConfig c;
  CHECK(config_problems(c).empty());
  c.temperature = 0.0;
  c.momentum = 1.0;
  c.layers = 1;
  c.damping = 1.5;
  c.batch_size = 0;
  const auto problems = config_problems(c);
  CHECK(problems.size() == 5);
  try {
    validate_config(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems() == problems);
  }
}

TEST_CASE("config JSON round trip and rejection of unknown keys") {
  RunConfig c = tiny_config();
  c.cha_sharpness = 2.5;
  c.target_cluster_count = 7;
  c.disable_cha = true;
  const auto j = config_to_json(c);
  const RunConfig back = config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(config_to_json(back).dump() == j.dump());
  CHECK(back.dims == c.dims);
  CHECK(back.target_cluster_count == std::optional<std::size_t>(7));

  const auto partial = config_from_json(nlohmann::json::parse(R"({"epochs": 3})"));
  CHECK(partial.epochs == 3);
  CHECK(partial.queue_size == 512);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"epohcs": 3})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"epochs": "x"})")), ConfigError);
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = scratch("ckpt");
  Checkpoint c;
  c.config = tiny_config();
  c.vocabulary = {"[H_S]", "[H_E]", "[T_S]", "[T_E]", "[UNK]", "w1"};
  c.epoch = 4;
  c.momentum = EncoderParams::random(c.config.dims, 1);
  c.propulsion = EncoderParams::random(c.config.dims, 2);
  save_checkpoint(c, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.epoch == 4);
  CHECK(back.vocabulary == c.vocabulary);
  CHECK(back.momentum.max_abs_difference(c.momentum) == 0.0);
  CHECK(back.propulsion.max_abs_difference(c.propulsion) == 0.0);
  CHECK(config_to_json(back.config).dump() == config_to_json(c.config).dump());

  save_checkpoint(back, dir / "b.ckpt");
  CHECK(read_text_file(dir / "a.ckpt") == read_text_file(dir / "b.ckpt"));

  std::string bytes = read_text_file(dir / "a.ckpt");
  write_text_file(dir / "bad_magic.ckpt", "X" + bytes.substr(1));
  CHECK_THROWS_AS(load_checkpoint(dir / "bad_magic.ckpt"), CheckpointError);
  write_text_file(dir / "short.ckpt", bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), CheckpointError);
  write_text_file(dir / "long.ckpt", bytes + "z");
  CHECK_THROWS_AS(load_checkpoint(dir / "long.ckpt"), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("prepare_corpus validates lengths") {
  auto cfg = tiny_config();
  const auto corpus = tiny_corpus();
  const auto prepared = prepare_corpus(corpus, cfg);
  CHECK(prepared.sequences.size() == corpus.size());
  cfg.dims.max_len = 6;
  CHECK_THROWS_AS(prepare_corpus(corpus, cfg), std::length_error);
}

TEST_CASE("first epoch has no exemplar term and training is deterministic") {
  const auto corpus = tiny_corpus();
  const auto cfg = tiny_config();
  const auto prepared = prepare_corpus(corpus, cfg);

  auto a = init_train_state(prepared, cfg);
  auto b = init_train_state(prepared, cfg);
  CHECK(a.propulsion.max_abs_difference(a.momentum) == 0.0);
  CHECK(a.queue.size() == std::min<std::size_t>(cfg.queue_size, corpus.size()));

  std::vector<StepLog> la, lb;
  const auto e0 = run_epoch(a, prepared, cfg, &la);
  run_epoch(b, prepared, cfg, &lb);
  REQUIRE(la.size() == 6);
  for (const auto& row : la) CHECK(row.exem_nce == 0.0);
  CHECK(e0.exem_nce == 0.0);
  REQUIRE(a.tree.has_value());
  a.tree->check_invariants();
  CHECK(a.tree->layer_count() == 2);
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(to_json_line(la[i]) == to_json_line(lb[i]));
  CHECK(a.propulsion.max_abs_difference(b.propulsion) == 0.0);
  CHECK(a.momentum.max_abs_difference(b.momentum) == 0.0);
  CHECK(a.momentum.max_abs_difference(a.propulsion) > 0.0);

  std::vector<StepLog> l1;
  const auto e1 = run_epoch(a, prepared, cfg, &l1);
  CHECK(e1.exem_nce > 0.0);
  CHECK(l1.front().epoch == 1);
  CHECK(l1.front().step == la.size());
}

TEST_CASE("step log JSON layout") {
  StepLog row{1, 7, 0.5, 0.25, 0.75};
  const auto j = nlohmann::json::parse(to_json_line(row));
  CHECK(j.at("epoch") == 1);
  CHECK(j.at("step") == 7);
  CHECK(j.at("hince").get<double>() == 0.75);
  CHECK(to_json_line(row).find('\n') == std::string::npos);
}

TEST_CASE("train writes artifacts and honours epochs = 0") {
  const auto corpus = tiny_corpus();
  auto cfg = tiny_config();
  const auto dir = scratch("train");
  TrainOptions opts;
  opts.output_dir = dir;
  const auto result = train(corpus, cfg, opts);
  CHECK(result.epochs.size() == 2);
  for (const char* f : {"config.json", "train_log.jsonl", "tree.json", "final.ckpt", "report.json",
                        "assignments_layer1.csv", "assignments_layer2.csv", "epoch01.ckpt"}) {
    CAPTURE(f);
    CHECK(std::filesystem::exists(dir / f));
  }
  const auto ck = load_checkpoint(dir / "final.ckpt");
  CHECK(ck.momentum.max_abs_difference(result.momentum) == 0.0);
  CHECK(result.metrics.size() == 2 * 2);

  cfg.epochs = 0;
  const auto zero = train(corpus, cfg);
  const auto init = EncoderParams::random(cfg.dims, cfg.seed);
  CHECK(zero.momentum.max_abs_difference(init) == 0.0);
  CHECK(zero.propulsion.max_abs_difference(init) == 0.0);
  CHECK(zero.epochs.empty());
  zero.tree.check_invariants();
  CHECK(zero.tree.layer_count() == 2);
  std::filesystem::remove_all(dir);
}

// Mean HiNCE over the whole corpus against a fixed tree and queue, with
// span draws fixed by `seed`.
double corpus_hince(const TrainState& s, const PreparedCorpus& pc, const ExemplarTree& tree,
                    const NegativeQueue& queue, const RunConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 r1(seed), r2(seed + 1);
  const FeatureMatrix h = encode_corpus(s.propulsion, pc.sequences, cfg.span_count, r1);
  const FeatureMatrix pos = encode_corpus(s.momentum, pc.sequences, cfg.span_count, r2);
  std::vector<std::size_t> idx(pc.sequences.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return hince(h, pos, queue, &tree, idx, cfg.temperature).report.hince / double(idx.size());
}

TEST_CASE("an epoch of training lowers HiNCE against the frozen tree") {
  TaxonomySpec spec;
  spec.sentences_per_leaf = 20;
  spec.seed = 2;
  const auto corpus = generate_corpus(spec);
  RunConfig cfg;
  cfg.dims.model_dim = 16;
  cfg.dims.ff_dim = 32;
  cfg.queue_size = 128;
  cfg.batch_size = 32;
  const auto pc = prepare_corpus(corpus, cfg);
  auto state = init_train_state(pc, cfg);
  run_epoch(state, pc, cfg);
  REQUIRE(state.tree.has_value());
  const ExemplarTree frozen = *state.tree;
  const NegativeQueue queue = state.queue;
  const double before = corpus_hince(state, pc, frozen, queue, cfg, 77);
  const auto stats = run_epoch(state, pc, cfg);
  const double after = corpus_hince(state, pc, frozen, queue, cfg, 77);
  CHECK(stats.exem_nce > 0.0);
  CHECK(after < before);
}
