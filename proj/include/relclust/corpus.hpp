#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace relclust {

/// Half-open token interval [begin, end).
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool contains(std::size_t pos) const { return pos >= begin && pos < end; }
  bool overlaps(const TokenSpan& other) const {
    return begin < other.end && other.begin < end;
  }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

/// A pre-tokenized sentence with one head and one tail entity mention.
/// `label_path` runs from the taxonomy root to the leaf; empty means unlabeled.
struct Sentence {
  std::string id;
  std::vector<std::string> tokens;
  TokenSpan head;
  TokenSpan tail;
  std::vector<std::string> label_path;

  bool has_label() const { return !label_path.empty(); }
  /// Tokens outside both entity spans.
  std::size_t context_token_count() const;
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

using LabelPath = std::vector<std::string>;

/// The label tree, stored as its set of root-to-leaf paths.
struct Taxonomy {
  std::set<LabelPath> leaf_paths;

  bool contains(const LabelPath& path) const { return leaf_paths.count(path) > 0; }
  std::size_t depth() const { return leaf_paths.empty() ? 0 : leaf_paths.begin()->size(); }
  friend bool operator==(const Taxonomy&, const Taxonomy&) = default;
};

struct Corpus {
  std::vector<Sentence> sentences;
  std::optional<Taxonomy> taxonomy;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Parameters of the synthetic hierarchical-relation corpus.
///
/// Vocabulary layout (token strings "w<k>"): entity tokens first, then one
/// sub-vocabulary per taxonomy node (every level, root excluded), then
/// background tokens for everything that is left.
struct TaxonomySpec {
  std::vector<std::size_t> branching{4, 3};
  std::size_t sentences_per_leaf = 100;
  std::size_t vocab_size = 1000;
  double template_noise = 0.0;
  std::uint64_t seed = 1;

  // Template shape.
  std::size_t signal_slots = 6;
  std::size_t background_slots = 6;
  std::size_t node_vocab = 6;
  std::size_t entity_vocab = 200;
  /// Fraction of signal slots drawn from ancestor sub-vocabularies.
  double ancestor_share = 0.5;
};

enum class SentenceErrorKind {
  kEmptySpan,
  kSpanOutOfRange,
  kOverlappingSpans,
  kInsufficientContext,
};

const char* to_string(SentenceErrorKind kind);

class SentenceValidationError : public std::invalid_argument {
 public:
  SentenceValidationError(SentenceErrorKind kind, const std::string& what)
      : std::invalid_argument(what), kind_(kind) {}
  SentenceErrorKind kind() const { return kind_; }

 private:
  SentenceErrorKind kind_;
};

class InvalidSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CorpusParseError : public std::runtime_error {
 public:
  CorpusParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Thrown when sentences parse but violate invariants; lists every offender.
class CorpusValidationError : public std::runtime_error {
 public:
  explicit CorpusValidationError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Returns `s` unchanged when its spans are valid and it has at least
/// `span_count` context tokens; throws SentenceValidationError otherwise.
const Sentence& validate_sentence(const Sentence& s, std::size_t span_count);

/// Checks id uniqueness, per-sentence invariants and taxonomy membership.
void validate_corpus(const Corpus& corpus, std::size_t span_count);

void validate_spec(const TaxonomySpec& spec);
Corpus generate_corpus(const TaxonomySpec& spec);

/// Label at `level` (0 = top) of every sentence, as dense integer ids in
/// order of first appearance. Throws if any sentence lacks that level.
std::vector<int> labels_at_level(const Corpus& corpus, std::size_t level);

enum class CorpusFormat { kJsonLines };

Corpus load_corpus(const std::filesystem::path& path,
                   CorpusFormat format = CorpusFormat::kJsonLines);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path,
                 CorpusFormat format = CorpusFormat::kJsonLines);

std::string sentence_to_json_line(const Sentence& s);
Sentence sentence_from_json_line(const std::string& line);

}  // namespace relclust
