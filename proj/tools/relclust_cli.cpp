// relclust: generate corpora, train, cluster, evaluate and export features.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "relclust/checkpoint.hpp"
#include "relclust/config.hpp"
#include "relclust/corpus.hpp"
#include "relclust/hpc.hpp"
#include "relclust/io_util.hpp"
#include "relclust/metrics.hpp"
#include "relclust/trainer.hpp"

namespace fs = std::filesystem;
using namespace relclust;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

// Problems with flags or configuration values; reported with exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json read_json_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::optional<fs::path> spec_file;
  std::optional<std::vector<std::size_t>> branching;
  std::optional<std::size_t> per_leaf;
  std::optional<std::size_t> vocab_size;
  std::optional<double> noise;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

TaxonomySpec spec_from_json(const nlohmann::json& j) {
  TaxonomySpec spec;
  std::vector<std::string> problems;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "branching") spec.branching = value.get<std::vector<std::size_t>>();
      else if (key == "sentences_per_leaf") spec.sentences_per_leaf = value.get<std::size_t>();
      else if (key == "vocab_size") spec.vocab_size = value.get<std::size_t>();
      else if (key == "template_noise") spec.template_noise = value.get<double>();
      else if (key == "seed") spec.seed = value.get<std::uint64_t>();
      else if (key == "signal_slots") spec.signal_slots = value.get<std::size_t>();
      else if (key == "background_slots") spec.background_slots = value.get<std::size_t>();
      else if (key == "node_vocab") spec.node_vocab = value.get<std::size_t>();
      else if (key == "entity_vocab") spec.entity_vocab = value.get<std::size_t>();
      else if (key == "ancestor_share") spec.ancestor_share = value.get<double>();
      else problems.push_back("unknown key '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      problems.push_back(key + ": wrong type");
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid corpus spec:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw UsageError(msg);
  }
  return spec;
}

int run_generate(const GenerateArgs& args) {
  TaxonomySpec spec = args.spec_file ? spec_from_json(read_json_file(*args.spec_file)) : TaxonomySpec{};
  if (args.branching) spec.branching = *args.branching;
  if (args.per_leaf) spec.sentences_per_leaf = *args.per_leaf;
  if (args.vocab_size) spec.vocab_size = *args.vocab_size;
  if (args.noise) spec.template_noise = *args.noise;
  if (args.seed) spec.seed = *args.seed;
  try {
    validate_spec(spec);
  } catch (const InvalidSpecError& e) {
    throw UsageError(e.what());
  }
  const Corpus corpus = generate_corpus(spec);
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  save_corpus(corpus, args.out);
  std::cerr << "wrote " << corpus.size() << " sentences to " << args.out.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  fs::path corpus;
  fs::path out;
  std::optional<fs::path> config_file;
  std::vector<std::string> ablations;
  std::optional<std::size_t> epochs, layers, span_count, batch_size, queue_size, target_k;
  std::optional<std::uint64_t> seed;
  std::optional<double> learning_rate, temperature, momentum;
  bool quiet = false;
};

RunConfig effective_config(const TrainArgs& args) {
  RunConfig config;
  if (args.config_file) config = config_from_json(read_json_file(*args.config_file));
  if (args.epochs) config.epochs = *args.epochs;
  if (args.layers) config.layers = *args.layers;
  if (args.span_count) config.span_count = *args.span_count;
  if (args.batch_size) config.batch_size = *args.batch_size;
  if (args.queue_size) config.queue_size = *args.queue_size;
  if (args.target_k) config.target_cluster_count = *args.target_k;
  if (args.seed) config.seed = *args.seed;
  if (args.learning_rate) config.learning_rate = *args.learning_rate;
  if (args.temperature) config.temperature = *args.temperature;
  if (args.momentum) config.momentum = *args.momentum;
  for (const std::string& a : args.ablations) {
    if (a == "no-exemnce") config.disable_exem_nce = true;
    else if (a == "no-hpc") config.use_kmeans = true;
    else if (a == "no-cha") config.disable_cha = true;
  }
  validate_config(config);
  return config;
}

int run_train(const TrainArgs& args) {
  const RunConfig config = effective_config(args);
  const Corpus corpus = load_corpus(args.corpus);
  TrainOptions options;
  options.output_dir = args.out;
  if (!args.quiet) {
    options.on_epoch = [](const EpochStats& s) {
      std::cerr << "epoch " << s.epoch << "  hince " << s.hince << "  info_nce " << s.info_nce
                << "  exem_nce " << s.exem_nce << "  clusters";
      for (std::size_t c : s.cluster_counts) std::cerr << ' ' << c;
      std::cerr << "\n";
    };
  }
  const TrainResult result = train(corpus, config, options);
  std::cout << report_json(result.tree, result.metrics).dump(2) << "\n";
  return 0;
}

// ----------------------------------------------------------------- cluster

struct ClusterArgs {
  fs::path features;
  fs::path out;
  std::size_t layers = 3;
  std::optional<std::size_t> target_k;
  double damping = 0.7;
  std::size_t max_iter = 400;
  std::size_t stable_window = 10;
  std::optional<double> sharpness;
  double mix = 0.5;
  bool no_normalize = false;
};

int run_cluster(const ClusterArgs& args) {
  FeatureTable table = read_feature_csv(args.features);
  if (table.values.rows() < 2) {
    throw std::invalid_argument(args.features.string() + ": clustering needs at least 2 rows, got " +
                                std::to_string(table.values.rows()));
  }
  if (!args.no_normalize) {
    for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
      const double norm = table.values.row(i).norm();
      if (norm > 0.0) table.values.row(i) /= norm;
    }
  }
  HpcOptions opts;
  opts.propagation = {args.damping, args.max_iter, args.stable_window};
  opts.cha = ChaParams::for_dimension(static_cast<std::size_t>(table.values.cols()));
  if (args.sharpness) opts.cha.sharpness = *args.sharpness;
  opts.cha.mix = args.mix;

  nlohmann::ordered_json summary;
  if (args.target_k) {
    const PreferenceSearchResult search =
        preference_for_k(table.values, *args.target_k, opts.propagation);
    opts.bottom_preference = search.preference;
    summary["target_k"] = *args.target_k;
    summary["achieved_k"] = search.achieved_k;
    summary["preference"] = search.preference;
    summary["exact"] = search.exact;
  }
  const ExemplarTree tree = hpc(table.values, args.layers, opts);
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  save_tree(tree, args.out);
  summary["cluster_counts"] = tree.cluster_counts();
  summary["tree"] = args.out.string();
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  fs::path pred;
  std::optional<fs::path> gold;
  std::optional<fs::path> corpus;
  std::size_t level = 0;
};

// id -> label from a two-column `id,label` CSV with an optional header.
std::map<std::string, std::string> read_labels(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 2 columns, got " + std::to_string(cells.size()));
    }
    if (out.empty() && cells[0] == "id") continue;
    if (!out.emplace(cells[0], cells[1]).second) {
      throw std::runtime_error(path.string() + ": duplicate id '" + cells[0] + "'");
    }
  }
  return out;
}

int run_evaluate(const EvaluateArgs& args) {
  const auto pred = read_labels(args.pred);
  std::map<std::string, std::string> gold;
  if (args.gold) {
    gold = read_labels(*args.gold);
  } else {
    const Corpus corpus = load_corpus(*args.corpus);
    if (args.level < 1) throw UsageError("--level is 1-based");
    for (const Sentence& s : corpus.sentences) {
      if (s.label_path.size() < args.level) {
        throw std::runtime_error("sentence " + s.id + " has no label at level " +
                                 std::to_string(args.level));
      }
      gold.emplace(s.id, s.label_path[args.level - 1]);
    }
  }

  std::vector<std::string> missing_in_gold, missing_in_pred;
  for (const auto& [id, _] : pred) {
    if (!gold.count(id)) missing_in_gold.push_back(id);
  }
  for (const auto& [id, _] : gold) {
    if (!pred.count(id)) missing_in_pred.push_back(id);
  }
  if (!missing_in_gold.empty() || !missing_in_pred.empty()) {
    std::string msg = "prediction and gold ids differ";
    auto list = [&msg](const char* what, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      msg += std::string("\n  missing from ") + what + ":";
      for (const auto& id : ids) msg += " " + id;
    };
    list("gold", missing_in_gold);
    list("predictions", missing_in_pred);
    throw std::runtime_error(msg);
  }

  std::map<std::string, int> pred_ids, gold_ids;
  Partition p, g;
  for (const auto& [id, label] : pred) {
    p.push_back(pred_ids.emplace(label, static_cast<int>(pred_ids.size())).first->second);
    const std::string& gl = gold.at(id);
    g.push_back(gold_ids.emplace(gl, static_cast<int>(gold_ids.size())).first->second);
  }
  std::cout << to_json(evaluate_partition(p, g)).dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ export

struct ExportArgs {
  fs::path checkpoint;
  fs::path corpus;
  fs::path out;
  std::optional<std::uint64_t> span_seed;
  std::optional<std::size_t> span_count;
};

int run_export(const ExportArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  if (args.span_count && *args.span_count != ckpt.config.span_count) {
    throw UsageError("--span-count " + std::to_string(*args.span_count) +
                     " does not match the checkpoint's span_count " +
                     std::to_string(ckpt.config.span_count));
  }
  const Corpus corpus = load_corpus(args.corpus);
  const PreparedCorpus prepared = prepare_corpus(
      corpus, ckpt.config, Vocabulary::from_tokens(ckpt.vocabulary, ckpt.config.dims.vocab_size));
  const std::uint64_t span_seed = args.span_seed.value_or(ckpt.config.seed);
  std::mt19937_64 rng(span_seed);

  FeatureTable table;
  table.values = encode_corpus(ckpt.momentum, prepared.sequences, ckpt.config.span_count, rng);
  for (const Sentence& s : corpus.sentences) table.ids.push_back(s.id);
  table.comments.push_back(" span_seed=" + std::to_string(span_seed));
  table.comments.push_back(" span_count=" + std::to_string(ckpt.config.span_count));
  table.comments.push_back(" checkpoint_epoch=" + std::to_string(ckpt.epoch));
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  write_feature_csv(table, args.out);
  std::cerr << "wrote " << table.ids.size() << " feature rows to " << args.out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised relation clustering with hierarchical exemplar contrastive training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "relclust 0.1.0");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic hierarchically labelled corpus");
  g->add_option("--spec", gen.spec_file, "JSON corpus spec; flags override its values")
      ->check(CLI::ExistingFile);
  g->add_option("--branching", gen.branching, "Children per level, e.g. 4,3")->delimiter(',');
  g->add_option("--per-leaf", gen.per_leaf, "Sentences per leaf relation");
  g->add_option("--vocab-size", gen.vocab_size, "Token inventory size");
  g->add_option("--noise", gen.noise, "Probability a template slot is replaced by a random token");
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--out", gen.out, "Output JSONL path")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the encoder and cluster the corpus");
  t->add_option("--corpus", tr.corpus, "JSONL corpus")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Output directory for artifacts")->required();
  t->add_option("--config", tr.config_file, "JSON config with flat keys")->check(CLI::ExistingFile);
  t->add_option("--ablation", tr.ablations, "no-exemnce | no-hpc | no-cha (repeatable)")
      ->check(CLI::IsMember({"no-exemnce", "no-hpc", "no-cha"}));
  t->add_option("--epochs", tr.epochs);
  t->add_option("--layers", tr.layers);
  t->add_option("--span-count", tr.span_count);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--queue-size", tr.queue_size);
  t->add_option("--target-k", tr.target_k, "Cluster count for the finest layer");
  t->add_option("--seed", tr.seed);
  t->add_option("--lr", tr.learning_rate);
  t->add_option("--temperature", tr.temperature);
  t->add_option("--momentum", tr.momentum);
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  ClusterArgs cl;
  auto* c = app.add_subcommand("cluster", "Hierarchical propagation clustering of a feature CSV");
  c->add_option("--features", cl.features, "CSV with id,f0,f1,...")->required()->check(CLI::ExistingFile);
  c->add_option("--out", cl.out, "Tree JSON path")->required();
  c->add_option("--layers", cl.layers, "Number of layers")->capture_default_str();
  c->add_option("--target-k", cl.target_k, "Search the finest preference for this many clusters");
  c->add_option("--damping", cl.damping)->capture_default_str();
  c->add_option("--max-iter", cl.max_iter)->capture_default_str();
  c->add_option("--stable-window", cl.stable_window)->capture_default_str();
  c->add_option("--cha-sharpness", cl.sharpness, "Default 1/sqrt(dim)");
  c->add_option("--cha-mix", cl.mix, "0 disables cross-layer attention")->capture_default_str();
  c->add_flag("--no-normalize", cl.no_normalize, "Use rows as given instead of unit-normalizing");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score predicted clusters against gold labels");
  e->add_option("--pred", ev.pred, "CSV id,cluster")->required()->check(CLI::ExistingFile);
  auto* gold_opt = e->add_option("--gold", ev.gold, "CSV id,label")->check(CLI::ExistingFile);
  auto* corpus_opt =
      e->add_option("--corpus", ev.corpus, "Take gold labels from a corpus")->check(CLI::ExistingFile);
  e->add_option("--level", ev.level, "1-based taxonomy level with --corpus");
  gold_opt->excludes(corpus_opt);
  e->require_option(1, 2);

  ExportArgs ex;
  auto* x = app.add_subcommand("export", "Write momentum-encoder features for a corpus");
  x->add_option("--checkpoint", ex.checkpoint)->required()->check(CLI::ExistingFile);
  x->add_option("--corpus", ex.corpus)->required()->check(CLI::ExistingFile);
  x->add_option("--out", ex.out, "Feature CSV path")->required();
  x->add_option("--span-seed", ex.span_seed, "Default: the run seed");
  x->add_option("--span-count", ex.span_count, "Must match the checkpoint when given");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsageError;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr);
    if (*c) return run_cluster(cl);
    if (*e) {
      if (ev.corpus && ev.level == 0) throw UsageError("--corpus needs --level");
      return run_evaluate(ev);
    }
    if (*x) return run_export(ex);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsageError;
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsageError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageError;
}
