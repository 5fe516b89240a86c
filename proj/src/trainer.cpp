#include "relclust/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "relclust/checkpoint.hpp"
#include "relclust/io_util.hpp"
#include "relclust/kmeans.hpp"

namespace relclust {

namespace {

// Independent streams derived from the run seed.
enum class Stream : std::uint64_t { kTraining = 1, kKMeans = 2 };

std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(std::begin(words), std::end(words));
  return (std::uint64_t{words[0]} << 32) | words[1];
}

struct EncodedRow {
  std::vector<std::size_t> span;
  EncoderForward forward;
};

std::string epoch_tag(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch%02zu", epoch);
  return buf;
}

}  // namespace

PreparedCorpus prepare_corpus(const Corpus& corpus, const RunConfig& config) {
  validate_corpus(corpus, config.span_count);
  return prepare_corpus(corpus, config, Vocabulary::build(corpus, config.dims.vocab_size));
}

PreparedCorpus prepare_corpus(const Corpus& corpus, const RunConfig& config, Vocabulary vocab) {
  validate_corpus(corpus, config.span_count);
  PreparedCorpus out;
  out.vocab = std::move(vocab);
  out.sequences.reserve(corpus.sentences.size());
  for (const Sentence& s : corpus.sentences) {
    out.sequences.push_back(inject_markers(s, out.vocab));
    if (out.sequences.back().size() > config.dims.max_len) {
      throw std::length_error("sentence " + s.id + " has " +
                              std::to_string(out.sequences.back().size()) +
                              " positions after markers, max_len is " +
                              std::to_string(config.dims.max_len));
    }
  }
  if (out.sequences.size() < 2) throw std::invalid_argument("training needs at least 2 sentences");
  return out;
}

FeatureMatrix encode_corpus(const EncoderParams& params, const std::vector<MarkedSequence>& sequences,
                            std::size_t span_count, std::mt19937_64& rng) {
  const std::size_t dim = feature_dim(params.dims, span_count);
  FeatureMatrix out(static_cast<Eigen::Index>(sequences.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto span = sample_random_span(sequences[i], span_count, rng);
    const EncoderForward fwd = encode_tokens(params, sequences[i]);
    out.row(static_cast<Eigen::Index>(i)) = relational_feature(fwd.output, sequences[i], span).transpose();
  }
  return out;
}

TrainState init_train_state(const PreparedCorpus& corpus, const RunConfig& config) {
  validate_config(config);
  TrainState state;
  state.propulsion = EncoderParams::random(config.dims, config.seed);
  state.momentum = state.propulsion;
  state.optimizer = AdamWState::zeros_like(state.propulsion);
  state.rng.seed(derive_seed(config.seed, Stream::kTraining));
  state.queue = NegativeQueue(config.queue_size, feature_dim(config.dims, config.span_count));

  std::vector<std::size_t> order(corpus.sequences.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state.rng);
  order.resize(std::min(order.size(), config.queue_size));
  std::vector<MarkedSequence> picked;
  picked.reserve(order.size());
  for (std::size_t i : order) picked.push_back(corpus.sequences[i]);
  state.queue.push(encode_corpus(state.momentum, picked, config.span_count, state.rng));
  return state;
}

std::string to_json_line(const StepLog& row) {
  nlohmann::ordered_json j;
  j["epoch"] = row.epoch;
  j["step"] = row.step;
  j["info_nce"] = row.info_nce;
  j["exem_nce"] = row.exem_nce;
  j["hince"] = row.hince;
  return j.dump();
}

HpcOptions hpc_options(const RunConfig& config, std::size_t feature_dim) {
  HpcOptions opts;
  opts.propagation.damping = config.damping;
  opts.propagation.max_iter = config.ap_max_iter;
  opts.propagation.stable_window = config.ap_stable_window;
  opts.cha = ChaParams::for_dimension(feature_dim);
  if (config.cha_sharpness) opts.cha.sharpness = *config.cha_sharpness;
  opts.cha.mix = config.disable_cha ? 0.0 : config.cha_mix;
  return opts;
}

ExemplarTree build_tree(const FeatureMatrix& features, const RunConfig& config,
                        const ExemplarTree* previous, std::uint64_t kmeans_seed) {
  HpcOptions opts = hpc_options(config, static_cast<std::size_t>(features.cols()));
  auto run_hpc = [&]() {
    if (config.target_cluster_count) {
      opts.bottom_preference =
          preference_for_k(features, *config.target_cluster_count, opts.propagation).preference;
    }
    return hpc(features, config.layers, opts);
  };
  if (!config.use_kmeans) return run_hpc();

  std::vector<std::size_t> counts;
  if (previous != nullptr && previous->layer_count() == config.layers) {
    counts = previous->cluster_counts();
  } else {
    counts = run_hpc().cluster_counts();
  }
  if (config.target_cluster_count) counts.back() = *config.target_cluster_count;

  const auto n = static_cast<std::size_t>(features.rows());
  ExemplarTree tree;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t k = std::clamp<std::size_t>(counts[l], 1, n);
    const ClusterAssignment a = kmeans_baseline(features, k, kmeans_seed + l);
    tree.layers.push_back(make_layer(features, a, 0.0));
  }
  link_parents(tree);
  return tree;
}

EpochStats run_epoch(TrainState& state, const PreparedCorpus& corpus, const RunConfig& config,
                     std::vector<StepLog>* log) {
  const std::size_t n = corpus.sequences.size();
  const ExemplarTree* tree =
      (!config.disable_exem_nce && state.tree.has_value()) ? &*state.tree : nullptr;
  AdamWConfig adam;
  adam.learning_rate = config.learning_rate;
  adam.weight_decay = config.weight_decay;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state.rng);

  const Eigen::Index dim = static_cast<Eigen::Index>(feature_dim(config.dims, config.span_count));
  EpochStats stats;
  stats.epoch = state.epoch;
  EncoderParams grads = EncoderParams::zeros(config.dims);
  std::vector<EncodedRow> rows;

  for (std::size_t start = 0; start < n; start += config.batch_size) {
    const std::size_t b = std::min(config.batch_size, n - start);
    const std::span<const std::size_t> batch(order.data() + start, b);
    FeatureMatrix h(static_cast<Eigen::Index>(b), dim);
    FeatureMatrix h_mom(static_cast<Eigen::Index>(b), dim);
    rows.clear();
    for (std::size_t k = 0; k < b; ++k) {
      const MarkedSequence& seq = corpus.sequences[batch[k]];
      auto span_prop = sample_random_span(seq, config.span_count, state.rng);
      auto span_mom = sample_random_span(seq, config.span_count, state.rng);
      EncoderForward fwd = encode_tokens(state.propulsion, seq, true);
      h.row(static_cast<Eigen::Index>(k)) = relational_feature(fwd.output, seq, span_prop).transpose();
      const EncoderForward mom = encode_tokens(state.momentum, seq);
      h_mom.row(static_cast<Eigen::Index>(k)) = relational_feature(mom.output, seq, span_mom).transpose();
      rows.push_back({std::move(span_prop), std::move(fwd)});
    }

    const HinceResult loss = hince(h, h_mom, state.queue, tree, batch, config.temperature);
    grads.set_zero();
    for (std::size_t k = 0; k < b; ++k) {
      encoder_backward(state.propulsion, rows[k].forward, corpus.sequences[batch[k]], rows[k].span,
                       loss.grad.row(static_cast<Eigen::Index>(k)).transpose(), grads);
    }
    adamw_step(state.propulsion, grads, state.optimizer, adam);
    momentum_update(state.momentum, state.propulsion, config.momentum);
    queue_push(state.queue, h_mom);

    if (log != nullptr) {
      log->push_back({state.epoch, state.step, loss.report.info_nce, loss.report.exem_nce,
                      loss.report.hince});
    }
    stats.info_nce += loss.report.info_nce;
    stats.exem_nce += loss.report.exem_nce;
    stats.hince += loss.report.hince;
    ++stats.steps;
    ++state.step;
  }
  stats.info_nce /= static_cast<double>(n);
  stats.exem_nce /= static_cast<double>(n);
  stats.hince /= static_cast<double>(n);

  const FeatureMatrix features =
      encode_corpus(state.momentum, corpus.sequences, config.span_count, state.rng);
  const ExemplarTree* previous = state.tree ? &*state.tree : nullptr;
  state.tree = build_tree(features, config, previous,
                          derive_seed(config.seed, Stream::kKMeans, state.epoch));
  stats.cluster_counts = state.tree->cluster_counts();
  ++state.epoch;
  return stats;
}

std::vector<LayerMetrics> evaluate_tree(const ExemplarTree& tree, const Corpus& corpus) {
  std::vector<LayerMetrics> out;
  if (corpus.sentences.empty() || tree.point_count() != corpus.sentences.size()) return out;
  std::size_t depth = std::numeric_limits<std::size_t>::max();
  for (const Sentence& s : corpus.sentences) depth = std::min(depth, s.label_path.size());
  if (depth == 0) return out;

  for (std::size_t level = 0; level < depth; ++level) {
    const Partition gold = labels_at_level(corpus, level);
    const std::size_t classes =
        static_cast<std::size_t>(*std::max_element(gold.begin(), gold.end())) + 1;
    for (std::size_t l = 0; l < tree.layer_count(); ++l) {
      const auto& assignment = tree.layers[l].assignment;
      const Partition pred(assignment.begin(), assignment.end());
      out.push_back({l + 1, level + 1, tree.layers[l].cluster_count(), classes,
                     evaluate_partition(pred, gold)});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LayerMetrics& a, const LayerMetrics& b) { return a.layer < b.layer; });
  return out;
}

nlohmann::ordered_json report_json(const ExemplarTree& tree, const std::vector<LayerMetrics>& metrics) {
  nlohmann::ordered_json j;
  j["cluster_counts"] = tree.cluster_counts();
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const LayerMetrics& m : metrics) {
    nlohmann::ordered_json row;
    row["layer"] = m.layer;
    row["level"] = m.level;
    row["clusters"] = m.clusters;
    row["classes"] = m.classes;
    const nlohmann::ordered_json scores = to_json(m.report);
    for (const auto& [key, value] : scores.items()) row[key] = value;
    rows.push_back(row);
  }
  j["metrics"] = rows;
  return j;
}

TrainResult train(const Corpus& corpus, const RunConfig& config, const TrainOptions& options) {
  validate_config(config);
  const PreparedCorpus prepared = prepare_corpus(corpus, config);
  TrainState state = init_train_state(prepared, config);

  namespace fs = std::filesystem;
  std::ofstream log_file;
  const fs::path* dir = options.output_dir ? &*options.output_dir : nullptr;
  if (dir != nullptr) {
    fs::create_directories(*dir);
    write_text_file(*dir / "config.json", config_to_json(config).dump(2) + "\n");
    log_file.open(*dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot open training log in " + dir->string());
  }

  auto checkpoint_of = [&](std::size_t epoch) {
    return Checkpoint{config, prepared.vocab.tokens(), epoch, state.momentum, state.propulsion};
  };

  TrainResult result;
  if (config.epochs == 0) {
    const FeatureMatrix features =
        encode_corpus(state.momentum, prepared.sequences, config.span_count, state.rng);
    state.tree = build_tree(features, config, nullptr, derive_seed(config.seed, Stream::kKMeans, 0));
  }
  std::vector<StepLog> steps;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    steps.clear();
    EpochStats stats = run_epoch(state, prepared, config, &steps);
    if (dir != nullptr) {
      for (const StepLog& row : steps) log_file << to_json_line(row) << '\n';
      log_file.flush();
      save_checkpoint(checkpoint_of(state.epoch), *dir / (epoch_tag(state.epoch) + ".ckpt"));
      save_tree(*state.tree, *dir / (epoch_tag(state.epoch) + "_tree.json"));
    }
    if (options.on_epoch) options.on_epoch(stats);
    result.epochs.push_back(std::move(stats));
  }

  result.tree = *state.tree;
  result.metrics = evaluate_tree(result.tree, corpus);
  if (dir != nullptr) {
    save_tree(result.tree, *dir / "tree.json");
    if (config.epochs > 0) save_checkpoint(checkpoint_of(state.epoch), *dir / "final.ckpt");
    for (std::size_t l = 0; l < result.tree.layer_count(); ++l) {
      const TreeLayer& layer = result.tree.layers[l];
      std::string csv = "id,cluster\n";
      for (std::size_t i = 0; i < layer.assignment.size(); ++i) {
        csv += corpus.sentences[i].id + "," +
               corpus.sentences[layer.exemplar_indices[layer.assignment[i]]].id + "\n";
      }
      write_text_file(*dir / ("assignments_layer" + std::to_string(l + 1) + ".csv"), csv);
    }
    write_text_file(*dir / "report.json", report_json(result.tree, result.metrics).dump(2) + "\n");
  }
  result.momentum = std::move(state.momentum);
  result.propulsion = std::move(state.propulsion);
  result.vocab = prepared.vocab;
  return result;
}

}  // namespace relclust
