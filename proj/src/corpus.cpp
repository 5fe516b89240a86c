#include "relclust/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace relclust {

using ojson = nlohmann::ordered_json;

std::size_t Sentence::context_token_count() const {
  std::size_t count = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!head.contains(i) && !tail.contains(i)) ++count;
  }
  return count;
}

const char* to_string(SentenceErrorKind kind) {
  switch (kind) {
    case SentenceErrorKind::kEmptySpan: return "empty-span";
    case SentenceErrorKind::kSpanOutOfRange: return "span-out-of-range";
    case SentenceErrorKind::kOverlappingSpans: return "overlapping-spans";
    case SentenceErrorKind::kInsufficientContext: return "insufficient-context";
  }
  return "unknown";
}

namespace {

[[noreturn]] void fail(const Sentence& s, SentenceErrorKind kind, const std::string& detail) {
  throw SentenceValidationError(
      kind, "sentence '" + s.id + "': " + to_string(kind) + ": " + detail);
}

std::string span_str(const TokenSpan& span) {
  return "[" + std::to_string(span.begin) + "," + std::to_string(span.end) + ")";
}

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = std::to_string(problems.size()) + " invalid sentence(s)";
  for (const auto& p : problems) out += "\n  " + p;
  return out;
}

}  // namespace

CorpusValidationError::CorpusValidationError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

const Sentence& validate_sentence(const Sentence& s, std::size_t span_count) {
  const std::size_t n = s.tokens.size();
  if (s.head.size() == 0) fail(s, SentenceErrorKind::kEmptySpan, "head " + span_str(s.head));
  if (s.tail.size() == 0) fail(s, SentenceErrorKind::kEmptySpan, "tail " + span_str(s.tail));
  if (s.head.end > n) {
    fail(s, SentenceErrorKind::kSpanOutOfRange,
         "head " + span_str(s.head) + " with " + std::to_string(n) + " tokens");
  }
  if (s.tail.end > n) {
    fail(s, SentenceErrorKind::kSpanOutOfRange,
         "tail " + span_str(s.tail) + " with " + std::to_string(n) + " tokens");
  }
  if (s.head.overlaps(s.tail)) {
    fail(s, SentenceErrorKind::kOverlappingSpans,
         "head " + span_str(s.head) + " and tail " + span_str(s.tail));
  }
  const std::size_t context = s.context_token_count();
  if (context < span_count) {
    fail(s, SentenceErrorKind::kInsufficientContext,
         std::to_string(context) + " context token(s), need " + std::to_string(span_count));
  }
  return s;
}

void validate_corpus(const Corpus& corpus, std::size_t span_count) {
  std::vector<std::string> problems;
  std::unordered_set<std::string> seen;
  for (const auto& s : corpus.sentences) {
    if (!seen.insert(s.id).second) problems.push_back("sentence '" + s.id + "': duplicate id");
    try {
      validate_sentence(s, span_count);
    } catch (const SentenceValidationError& e) {
      problems.emplace_back(e.what());
    }
    if (s.has_label() && corpus.taxonomy && !corpus.taxonomy->contains(s.label_path)) {
      problems.push_back("sentence '" + s.id + "': label path not in taxonomy");
    }
  }
  if (!problems.empty()) throw CorpusValidationError(std::move(problems));
}

void validate_spec(const TaxonomySpec& spec) {
  if (spec.branching.empty()) throw InvalidSpecError("branching must have at least one level");
  for (std::size_t i = 0; i < spec.branching.size(); ++i) {
    if (spec.branching[i] == 0) {
      throw InvalidSpecError("branching level " + std::to_string(i) + " has size zero");
    }
  }
  if (spec.sentences_per_leaf == 0) throw InvalidSpecError("sentences_per_leaf must be positive");
  if (!(spec.template_noise >= 0.0 && spec.template_noise <= 1.0)) {
    throw InvalidSpecError("template_noise must lie in [0,1]");
  }
  if (!(spec.ancestor_share >= 0.0 && spec.ancestor_share <= 1.0)) {
    throw InvalidSpecError("ancestor_share must lie in [0,1]");
  }
  if (spec.signal_slots == 0 || spec.node_vocab == 0 || spec.entity_vocab == 0) {
    throw InvalidSpecError("signal_slots, node_vocab and entity_vocab must be positive");
  }
  std::size_t nodes = 0;
  std::size_t width = 1;
  for (auto b : spec.branching) {
    width *= b;
    nodes += width;
  }
  const std::size_t reserved = spec.entity_vocab + nodes * spec.node_vocab;
  const std::size_t background_needed = spec.background_slots > 0 ? 1 : 0;
  if (spec.vocab_size < reserved + background_needed) {
    throw InvalidSpecError("vocab_size " + std::to_string(spec.vocab_size) + " too small; need " +
                           std::to_string(reserved + background_needed));
  }
}

namespace {

std::string token_name(std::size_t k) { return "w" + std::to_string(k); }

struct TaxonomyNode {
  LabelPath path;
  std::vector<std::size_t> ancestors;  // node indices, top level first
  std::size_t vocab_begin = 0;
};

}  // namespace

Corpus generate_corpus(const TaxonomySpec& spec) {
  validate_spec(spec);
  std::mt19937_64 rng(spec.seed);

  // Enumerate nodes level by level; each gets a contiguous sub-vocabulary.
  std::vector<TaxonomyNode> nodes;
  std::vector<std::size_t> level_nodes;  // indices of the previous level
  std::size_t next_token = spec.entity_vocab;
  for (std::size_t level = 0; level < spec.branching.size(); ++level) {
    std::vector<std::size_t> current;
    const std::size_t parents = level == 0 ? 1 : level_nodes.size();
    for (std::size_t p = 0; p < parents; ++p) {
      for (std::size_t c = 0; c < spec.branching[level]; ++c) {
        TaxonomyNode node;
        if (level == 0) {
          node.path = {"/r" + std::to_string(c)};
        } else {
          const TaxonomyNode& parent = nodes[level_nodes[p]];
          node.path = parent.path;
          node.path.push_back(parent.path.back() + "/" + std::to_string(c));
          node.ancestors = parent.ancestors;
          node.ancestors.push_back(level_nodes[p]);
        }
        node.vocab_begin = next_token;
        next_token += spec.node_vocab;
        current.push_back(nodes.size());
        nodes.push_back(std::move(node));
      }
    }
    level_nodes = std::move(current);
  }
  const std::size_t background_begin = next_token;
  const std::size_t background_count = spec.vocab_size - background_begin;

  using Dist = std::uniform_int_distribution<std::size_t>;
  auto draw = [&rng](std::size_t begin, std::size_t count) {
    return begin + Dist(0, count - 1)(rng);
  };

  Corpus corpus;
  Taxonomy taxonomy;
  const std::size_t ancestor_slots =
      static_cast<std::size_t>(std::lround(spec.ancestor_share * double(spec.signal_slots)));
  const std::size_t filler = spec.signal_slots + spec.background_slots;
  std::size_t serial = 0;

  for (std::size_t leaf_index : level_nodes) {
    const TaxonomyNode& leaf = nodes[leaf_index];
    taxonomy.leaf_paths.insert(leaf.path);
    for (std::size_t k = 0; k < spec.sentences_per_leaf; ++k) {
      std::vector<std::string> fill;
      fill.reserve(filler);
      for (std::size_t slot = 0; slot < spec.signal_slots; ++slot) {
        std::size_t token;
        if (std::bernoulli_distribution(spec.template_noise)(rng)) {
          token = draw(0, spec.vocab_size);
        } else if (slot < ancestor_slots && !leaf.ancestors.empty()) {
          const std::size_t a = leaf.ancestors[Dist(0, leaf.ancestors.size() - 1)(rng)];
          token = draw(nodes[a].vocab_begin, spec.node_vocab);
        } else {
          token = draw(leaf.vocab_begin, spec.node_vocab);
        }
        fill.push_back(token_name(token));
      }
      for (std::size_t slot = 0; slot < spec.background_slots; ++slot) {
        fill.push_back(token_name(draw(background_begin, background_count)));
      }
      std::shuffle(fill.begin(), fill.end(), rng);

      auto entity = [&] {
        std::vector<std::string> mention(Dist(1, 2)(rng));
        for (auto& t : mention) t = token_name(draw(0, spec.entity_vocab));
        return mention;
      };
      std::vector<std::string> head = entity();
      std::vector<std::string> tail = entity();

      // Two distinct insertion gaps among the filler tokens keep the
      // mentions apart by at least one filler token.
      std::vector<std::size_t> gaps(filler + 1);
      std::iota(gaps.begin(), gaps.end(), 0);
      std::vector<std::size_t> chosen;
      std::sample(gaps.begin(), gaps.end(), std::back_inserter(chosen), 2, rng);
      const bool head_first = std::bernoulli_distribution(0.5)(rng);
      const std::size_t first_gap = chosen[0];
      const std::size_t second_gap = chosen[1];
      const auto& first = head_first ? head : tail;
      const auto& second = head_first ? tail : head;

      Sentence s;
      s.id = "s" + std::to_string(serial++);
      TokenSpan first_span, second_span;
      for (std::size_t g = 0; g <= filler; ++g) {
        if (g == first_gap) {
          first_span.begin = s.tokens.size();
          s.tokens.insert(s.tokens.end(), first.begin(), first.end());
          first_span.end = s.tokens.size();
        }
        if (g == second_gap) {
          second_span.begin = s.tokens.size();
          s.tokens.insert(s.tokens.end(), second.begin(), second.end());
          second_span.end = s.tokens.size();
        }
        if (g < filler) s.tokens.push_back(fill[g]);
      }
      s.head = head_first ? first_span : second_span;
      s.tail = head_first ? second_span : first_span;
      s.label_path = leaf.path;
      corpus.sentences.push_back(std::move(s));
    }
  }
  corpus.taxonomy = std::move(taxonomy);
  return corpus;
}

std::vector<int> labels_at_level(const Corpus& corpus, std::size_t level) {
  std::map<std::string, int> ids;
  std::vector<int> labels;
  labels.reserve(corpus.size());
  for (const auto& s : corpus.sentences) {
    if (level >= s.label_path.size()) {
      throw std::invalid_argument("sentence '" + s.id + "' has no label at level " +
                                  std::to_string(level));
    }
    auto [it, inserted] = ids.emplace(s.label_path[level], static_cast<int>(ids.size()));
    labels.push_back(it->second);
  }
  return labels;
}

std::string sentence_to_json_line(const Sentence& s) {
  ojson j;
  j["id"] = s.id;
  j["tokens"] = s.tokens;
  j["head"] = {s.head.begin, s.head.end};
  j["tail"] = {s.tail.begin, s.tail.end};
  if (s.has_label()) j["label_path"] = s.label_path;
  return j.dump();
}

namespace {

TokenSpan parse_span(const ojson& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) {
    throw std::invalid_argument(std::string("'") + key + "' must be a [start,end] pair");
  }
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

}  // namespace

Sentence sentence_from_json_line(const std::string& line) {
  const ojson j = ojson::parse(line);
  if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
  Sentence s;
  s.id = j.at("id").get<std::string>();
  s.tokens = j.at("tokens").get<std::vector<std::string>>();
  s.head = parse_span(j, "head");
  s.tail = parse_span(j, "tail");
  if (auto it = j.find("label_path"); it != j.end() && !it->is_null()) {
    s.label_path = it->get<std::vector<std::string>>();
  }
  return s;
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  if (format != CorpusFormat::kJsonLines) throw std::invalid_argument("unsupported corpus format");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());

  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      corpus.sentences.push_back(sentence_from_json_line(line));
    } catch (const std::exception& e) {
      throw CorpusParseError(line_no, e.what());
    }
  }

  Taxonomy taxonomy;
  for (const auto& s : corpus.sentences) {
    if (s.has_label()) taxonomy.leaf_paths.insert(s.label_path);
  }
  if (!taxonomy.leaf_paths.empty()) corpus.taxonomy = std::move(taxonomy);
  validate_corpus(corpus, 0);
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format) {
  if (format != CorpusFormat::kJsonLines) throw std::invalid_argument("unsupported corpus format");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file " + path.string());
  for (const auto& s : corpus.sentences) out << sentence_to_json_line(s) << '\n';
  if (!out) throw std::runtime_error("failed writing corpus file " + path.string());
}

}  // namespace relclust
