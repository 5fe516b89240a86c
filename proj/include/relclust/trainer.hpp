#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "relclust/config.hpp"
#include "relclust/contrastive.hpp"
#include "relclust/corpus.hpp"
#include "relclust/encoder.hpp"
#include "relclust/hpc.hpp"
#include "relclust/metrics.hpp"
#include "relclust/optimizer.hpp"

namespace relclust {

/// Corpus after vocabulary construction and marker injection.
struct PreparedCorpus {
  Vocabulary vocab{Vocabulary::kReserved};
  std::vector<MarkedSequence> sequences;
};

/// Validates the corpus for `config.span_count`, builds the vocabulary and
/// checks every marked sequence fits `config.dims.max_len`.
PreparedCorpus prepare_corpus(const Corpus& corpus, const RunConfig& config);
/// Same, reusing a fixed vocabulary (e.g. one restored from a checkpoint).
PreparedCorpus prepare_corpus(const Corpus& corpus, const RunConfig& config, Vocabulary vocab);

struct TrainState {
  EncoderParams propulsion;  // theta_prime, gradient-trained
  EncoderParams momentum;    // theta, moving average of theta_prime
  AdamWState optimizer;
  NegativeQueue queue{2, 1};
  std::optional<ExemplarTree> tree;  // frozen for the current epoch
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::mt19937_64 rng;
};

/// Both encoders start from the same seeded draw. The queue is filled with
/// momentum features of up to J randomly chosen sentences so the first
/// step already has negatives.
TrainState init_train_state(const PreparedCorpus& corpus, const RunConfig& config);

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double info_nce = 0.0;
  double exem_nce = 0.0;
  double hince = 0.0;
};

std::string to_json_line(const StepLog& row);

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  // Per-instance means over the epoch.
  double info_nce = 0.0;
  double exem_nce = 0.0;
  double hince = 0.0;
  std::vector<std::size_t> cluster_counts;  // of the tree built at epoch end
};

/// Momentum features of every sequence with freshly sampled spans.
FeatureMatrix encode_corpus(const EncoderParams& params, const std::vector<MarkedSequence>& sequences,
                            std::size_t span_count, std::mt19937_64& rng);

/// Tree for the next epoch: hierarchical propagation, or per-layer k-means
/// under `use_kmeans` with k taken from `previous` (a propagation pass
/// supplies the counts when there is no previous tree).
ExemplarTree build_tree(const FeatureMatrix& features, const RunConfig& config,
                        const ExemplarTree* previous, std::uint64_t kmeans_seed);

HpcOptions hpc_options(const RunConfig& config, std::size_t feature_dim);

/// One pass over the shuffled corpus followed by re-clustering.
EpochStats run_epoch(TrainState& state, const PreparedCorpus& corpus, const RunConfig& config,
                     std::vector<StepLog>* log = nullptr);

struct LayerMetrics {
  std::size_t layer = 0;  // 1-based, coarse to fine
  std::size_t level = 0;  // 1-based taxonomy depth
  std::size_t clusters = 0;
  std::size_t classes = 0;
  MetricReport report;
};

/// Every (layer, taxonomy level) pair; empty when any sentence is unlabeled.
std::vector<LayerMetrics> evaluate_tree(const ExemplarTree& tree, const Corpus& corpus);
nlohmann::ordered_json report_json(const ExemplarTree& tree, const std::vector<LayerMetrics>& metrics);

struct TrainOptions {
  /// Artifacts (config, step log, per-epoch checkpoints and trees, final
  /// assignments and report) are written here when set.
  std::optional<std::filesystem::path> output_dir;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  EncoderParams momentum;
  EncoderParams propulsion;
  ExemplarTree tree;
  std::vector<LayerMetrics> metrics;
  std::vector<EpochStats> epochs;
  Vocabulary vocab{Vocabulary::kReserved};
};

TrainResult train(const Corpus& corpus, const RunConfig& config, const TrainOptions& options = {});

}  // namespace relclust
