#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "relclust/corpus.hpp"

namespace relclust {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// Row-stacked features, one point per row.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EncoderDims {
  std::size_t model_dim = 64;  // b_R
  std::size_t ff_dim = 128;
  std::size_t vocab_size = 1024;
  std::size_t max_len = 64;

  friend bool operator==(const EncoderDims&, const EncoderDims&) = default;
};

/// Token to id mapping. Ids 0..3 are the entity markers, id 4 is the
/// out-of-vocabulary token; corpus tokens follow in first-seen order.
class Vocabulary {
 public:
  static constexpr int kHeadStart = 0;
  static constexpr int kHeadEnd = 1;
  static constexpr int kTailStart = 2;
  static constexpr int kTailEnd = 3;
  static constexpr int kUnknown = 4;
  static constexpr std::size_t kReserved = 5;
  static constexpr std::array<const char*, kReserved> kReservedTokens{
      "[H_S]", "[H_E]", "[T_S]", "[T_E]", "[UNK]"};

  explicit Vocabulary(std::size_t capacity);
  static Vocabulary build(const Corpus& corpus, std::size_t capacity);
  static Vocabulary from_tokens(std::vector<std::string> tokens, std::size_t capacity);

  /// Adds a token if there is room; returns its id (kUnknown when full).
  int add(const std::string& token);
  int id(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::size_t capacity_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Sentence after entity-marker injection (length T + 4).
struct MarkedSequence {
  std::vector<std::string> tokens;
  std::vector<int> ids;
  std::size_t head_start = 0;
  std::size_t head_end = 0;
  std::size_t tail_start = 0;
  std::size_t tail_end = 0;
  /// Context positions eligible for random spans, ascending.
  std::vector<std::size_t> candidates;

  std::size_t size() const { return tokens.size(); }
};

MarkedSequence inject_markers(const Sentence& s, const Vocabulary& vocab);

/// P distinct candidate positions, uniform without replacement, ascending.
std::vector<std::size_t> sample_random_span(const MarkedSequence& m, std::size_t span_count,
                                            std::mt19937_64& rng);

/// Trainable tensors of the single-block context encoder. Vectors are
/// stored as 1 x k matrices so every tensor can be visited uniformly.
struct EncoderParams {
  EncoderDims dims;
  Matrix token_embeddings;     // V x d
  Matrix position_embeddings;  // T_max x d
  Matrix w_query, w_key, w_value, w_output;  // d x d
  Matrix w_ff1;  // d x d_ff
  Matrix b_ff1;  // 1 x d_ff
  Matrix w_ff2;  // d_ff x d
  Matrix b_ff2;  // 1 x d
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // 1 x d

  static constexpr std::size_t kTensorCount = 14;
  static const std::array<Matrix EncoderParams::*, kTensorCount>& members();
  static const std::array<const char*, kTensorCount>& names();

  Matrix& tensor(std::size_t i) { return this->*members()[i]; }
  const Matrix& tensor(std::size_t i) const { return this->*members()[i]; }

  static EncoderParams zeros(const EncoderDims& dims);
  static EncoderParams random(const EncoderDims& dims, std::uint64_t seed);

  std::size_t parameter_count() const;
  bool same_shape(const EncoderParams& other) const;
  bool all_finite() const;
  void set_zero();
  /// this += scale * other
  void add_scaled(const EncoderParams& other, double scale);
  double max_abs_difference(const EncoderParams& other) const;
};

/// Intermediate activations kept for the backward pass.
struct EncoderCache {
  std::vector<int> ids;
  Matrix embedded;       // e
  Matrix query, key, value;
  Matrix attention;      // softmax probabilities
  Matrix context;        // attention * value
  Matrix ln1_normed;     // (u - mean) / std
  Vector ln1_inv_std;
  Matrix hidden;         // z
  Matrix ff_pre;         // z W1 + b1
  Matrix ff_act;         // gelu(ff_pre)
  Matrix ln2_normed;
  Vector ln2_inv_std;
};

struct EncoderForward {
  Matrix output;  // (T+4) x d token embeddings
  std::optional<EncoderCache> cache;
};

class MissingForwardCache : public std::logic_error {
 public:
  MissingForwardCache() : std::logic_error("encoder backward called without a forward cache") {}
};

/// b = LN2(z + FFN(z)), z = LN1(e + SelfAttention(e)), e = token + position.
/// Unknown ids map to the out-of-vocabulary row; sequences longer than
/// max_len throw std::length_error.
EncoderForward encode_tokens(const EncoderParams& params, const MarkedSequence& m,
                             bool keep_cache = false);

/// [b_HS, b_TS, b_span1..b_spanP] normalized to unit length.
Vector relational_feature(const Matrix& token_embeddings, const MarkedSequence& m,
                          std::span<const std::size_t> span_positions);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(feature).
void encoder_backward(const EncoderParams& params, const EncoderForward& forward,
                      const MarkedSequence& m, std::span<const std::size_t> span_positions,
                      const Vector& feature_grad, EncoderParams& grads);

std::size_t feature_dim(const EncoderDims& dims, std::size_t span_count);

}  // namespace relclust
