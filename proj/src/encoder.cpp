#include "relclust/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relclust {

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::size_t capacity) : capacity_(capacity) {
  if (capacity < kReserved) {
    throw std::invalid_argument("vocabulary capacity must be at least " +
                                std::to_string(kReserved));
  }
  for (const char* t : kReservedTokens) {
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.emplace_back(t);
  }
}

Vocabulary Vocabulary::build(const Corpus& corpus, std::size_t capacity) {
  Vocabulary vocab(capacity);
  for (const auto& s : corpus.sentences) {
    for (const auto& t : s.tokens) vocab.add(t);
  }
  return vocab;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, std::size_t capacity) {
  Vocabulary vocab(capacity);
  if (tokens.size() < kReserved || tokens.size() > capacity) {
    throw std::invalid_argument("vocabulary token list has invalid size");
  }
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (tokens[i] != kReservedTokens[i]) {
      throw std::invalid_argument("vocabulary token list does not start with reserved tokens");
    }
  }
  for (std::size_t i = kReserved; i < tokens.size(); ++i) {
    if (vocab.add(tokens[i]) != static_cast<int>(i)) {
      throw std::invalid_argument("duplicate vocabulary token '" + tokens[i] + "'");
    }
  }
  return vocab;
}

int Vocabulary::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  if (tokens_.size() >= capacity_) return kUnknown;
  const int id = static_cast<int>(tokens_.size());
  ids_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnknown : it->second;
}

// ---------------------------------------------------------------------------
// Marker injection and random spans

MarkedSequence inject_markers(const Sentence& s, const Vocabulary& vocab) {
  MarkedSequence m;
  m.tokens.reserve(s.tokens.size() + 4);
  auto push = [&](const std::string& t, int id) {
    m.tokens.push_back(t);
    m.ids.push_back(id);
  };
  for (std::size_t i = 0; i <= s.tokens.size(); ++i) {
    // Closing markers come before opening ones so adjacent mentions nest
    // as ...[H_E],[T_S]...
    if (i == s.head.end) {
      m.head_end = m.tokens.size();
      push(Vocabulary::kReservedTokens[Vocabulary::kHeadEnd], Vocabulary::kHeadEnd);
    }
    if (i == s.tail.end) {
      m.tail_end = m.tokens.size();
      push(Vocabulary::kReservedTokens[Vocabulary::kTailEnd], Vocabulary::kTailEnd);
    }
    if (i == s.head.begin) {
      m.head_start = m.tokens.size();
      push(Vocabulary::kReservedTokens[Vocabulary::kHeadStart], Vocabulary::kHeadStart);
    }
    if (i == s.tail.begin) {
      m.tail_start = m.tokens.size();
      push(Vocabulary::kReservedTokens[Vocabulary::kTailStart], Vocabulary::kTailStart);
    }
    if (i < s.tokens.size()) {
      if (!s.head.contains(i) && !s.tail.contains(i)) m.candidates.push_back(m.tokens.size());
      push(s.tokens[i], vocab.id(s.tokens[i]));
    }
  }
  return m;
}

std::vector<std::size_t> sample_random_span(const MarkedSequence& m, std::size_t span_count,
                                            std::mt19937_64& rng) {
  if (m.candidates.size() < span_count) {
    throw std::invalid_argument("sequence has " + std::to_string(m.candidates.size()) +
                                " span candidates, need " + std::to_string(span_count));
  }
  std::vector<std::size_t> out;
  out.reserve(span_count);
  std::sample(m.candidates.begin(), m.candidates.end(), std::back_inserter(out), span_count, rng);
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

const std::array<Matrix EncoderParams::*, EncoderParams::kTensorCount>& EncoderParams::members() {
  static const std::array<Matrix EncoderParams::*, kTensorCount> m{
      &EncoderParams::token_embeddings, &EncoderParams::position_embeddings,
      &EncoderParams::w_query,          &EncoderParams::w_key,
      &EncoderParams::w_value,          &EncoderParams::w_output,
      &EncoderParams::w_ff1,            &EncoderParams::b_ff1,
      &EncoderParams::w_ff2,            &EncoderParams::b_ff2,
      &EncoderParams::ln1_gain,         &EncoderParams::ln1_bias,
      &EncoderParams::ln2_gain,         &EncoderParams::ln2_bias};
  return m;
}

const std::array<const char*, EncoderParams::kTensorCount>& EncoderParams::names() {
  static const std::array<const char*, kTensorCount> n{
      "token_embeddings", "position_embeddings", "w_query", "w_key", "w_value",
      "w_output",         "w_ff1",               "b_ff1",   "w_ff2", "b_ff2",
      "ln1_gain",         "ln1_bias",            "ln2_gain", "ln2_bias"};
  return n;
}

EncoderParams EncoderParams::zeros(const EncoderDims& dims) {
  const auto d = static_cast<Eigen::Index>(dims.model_dim);
  const auto f = static_cast<Eigen::Index>(dims.ff_dim);
  EncoderParams p;
  p.dims = dims;
  p.token_embeddings = Matrix::Zero(static_cast<Eigen::Index>(dims.vocab_size), d);
  p.position_embeddings = Matrix::Zero(static_cast<Eigen::Index>(dims.max_len), d);
  p.w_query = Matrix::Zero(d, d);
  p.w_key = Matrix::Zero(d, d);
  p.w_value = Matrix::Zero(d, d);
  p.w_output = Matrix::Zero(d, d);
  p.w_ff1 = Matrix::Zero(d, f);
  p.b_ff1 = Matrix::Zero(1, f);
  p.w_ff2 = Matrix::Zero(f, d);
  p.b_ff2 = Matrix::Zero(1, d);
  p.ln1_gain = Matrix::Zero(1, d);
  p.ln1_bias = Matrix::Zero(1, d);
  p.ln2_gain = Matrix::Zero(1, d);
  p.ln2_bias = Matrix::Zero(1, d);
  return p;
}

EncoderParams EncoderParams::random(const EncoderDims& dims, std::uint64_t seed) {
  if (dims.model_dim == 0 || dims.ff_dim == 0 || dims.max_len == 0 ||
      dims.vocab_size < Vocabulary::kReserved) {
    throw std::invalid_argument("invalid encoder dimensions");
  }
  EncoderParams p = zeros(dims);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Matrix& m, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
    }
  };
  const double d = static_cast<double>(dims.model_dim);
  const double f = static_cast<double>(dims.ff_dim);
  fill(p.token_embeddings, 1.0);
  fill(p.position_embeddings, 0.1);
  fill(p.w_query, 1.0 / std::sqrt(d));
  fill(p.w_key, 1.0 / std::sqrt(d));
  fill(p.w_value, 1.0 / std::sqrt(d));
  fill(p.w_output, 1.0 / std::sqrt(d));
  fill(p.w_ff1, 1.0 / std::sqrt(d));
  fill(p.w_ff2, 1.0 / std::sqrt(f));
  p.ln1_gain.setOnes();
  p.ln2_gain.setOnes();
  return p;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < kTensorCount; ++i) n += static_cast<std::size_t>(tensor(i).size());
  return n;
}

bool EncoderParams::same_shape(const EncoderParams& other) const {
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    if (tensor(i).rows() != other.tensor(i).rows() || tensor(i).cols() != other.tensor(i).cols()) {
      return false;
    }
  }
  return true;
}

bool EncoderParams::all_finite() const {
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    if (!tensor(i).allFinite()) return false;
  }
  return true;
}

void EncoderParams::set_zero() {
  for (std::size_t i = 0; i < kTensorCount; ++i) tensor(i).setZero();
}

void EncoderParams::add_scaled(const EncoderParams& other, double scale) {
  for (std::size_t i = 0; i < kTensorCount; ++i) tensor(i) += scale * other.tensor(i);
}

double EncoderParams::max_abs_difference(const EncoderParams& other) const {
  double m = 0.0;
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    m = std::max(m, (tensor(i) - other.tensor(i)).cwiseAbs().maxCoeff());
  }
  return m;
}

std::size_t feature_dim(const EncoderDims& dims, std::size_t span_count) {
  return (2 + span_count) * dims.model_dim;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// Row-wise layer norm; returns gain * normed + bias.
Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& normed,
                  Vector& inv_std) {
  const Eigen::Index n = x.rows();
  const double d = static_cast<double>(x.cols());
  normed.resize(n, x.cols());
  inv_std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / d;
    const auto centered = x.row(i).array() - mean;
    const double var = centered.square().sum() / d;
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    normed.row(i) = centered * inv_std(i);
  }
  Matrix y = normed.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& normed, const Vector& inv_std,
                           const Matrix& gain, Matrix& dgain, Matrix& dbias) {
  dgain.row(0) += (dy.array() * normed.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Matrix dnormed = dy.array().rowwise() * gain.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double sum = dnormed.row(i).sum();
    const double dot = dnormed.row(i).dot(normed.row(i));
    dx.row(i) = (inv_std(i) / d) *
                (d * dnormed.row(i).array() - sum - normed.row(i).array() * dot).matrix();
  }
  return dx;
}

std::vector<std::size_t> feature_rows(const MarkedSequence& m,
                                      std::span<const std::size_t> span_positions) {
  std::vector<std::size_t> rows;
  rows.reserve(2 + span_positions.size());
  rows.push_back(m.head_start);
  rows.push_back(m.tail_start);
  rows.insert(rows.end(), span_positions.begin(), span_positions.end());
  return rows;
}

Vector gather_rows(const Matrix& b, const std::vector<std::size_t>& rows) {
  const Eigen::Index d = b.cols();
  Vector raw(static_cast<Eigen::Index>(rows.size()) * d);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= static_cast<std::size_t>(b.rows())) {
      throw std::out_of_range("feature row " + std::to_string(rows[k]) + " outside sequence");
    }
    raw.segment(static_cast<Eigen::Index>(k) * d, d) = b.row(static_cast<Eigen::Index>(rows[k]));
  }
  return raw;
}

}  // namespace

EncoderForward encode_tokens(const EncoderParams& params, const MarkedSequence& m,
                             bool keep_cache) {
  const std::size_t len = m.ids.size();
  if (len == 0) throw std::invalid_argument("cannot encode an empty sequence");
  if (len > params.dims.max_len) {
    throw std::length_error("sequence of length " + std::to_string(len) +
                            " exceeds encoder maximum " + std::to_string(params.dims.max_len));
  }
  const auto n = static_cast<Eigen::Index>(len);
  const auto d = static_cast<Eigen::Index>(params.dims.model_dim);

  EncoderCache c;
  c.ids.resize(len);
  c.embedded.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    int id = m.ids[static_cast<std::size_t>(i)];
    if (id < 0 || static_cast<std::size_t>(id) >= params.dims.vocab_size) id = Vocabulary::kUnknown;
    c.ids[static_cast<std::size_t>(i)] = id;
    c.embedded.row(i) = params.token_embeddings.row(id) + params.position_embeddings.row(i);
  }

  c.query = c.embedded * params.w_query;
  c.key = c.embedded * params.w_key;
  c.value = c.embedded * params.w_value;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  c.attention = (c.query * c.key.transpose()) * scale;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = c.attention.row(i).maxCoeff();
    c.attention.row(i) = (c.attention.row(i).array() - mx).exp();
    c.attention.row(i) /= c.attention.row(i).sum();
  }
  c.context = c.attention * c.value;
  const Matrix residual1 = c.embedded + c.context * params.w_output;
  c.hidden = layer_norm(residual1, params.ln1_gain, params.ln1_bias, c.ln1_normed, c.ln1_inv_std);

  c.ff_pre = c.hidden * params.w_ff1;
  c.ff_pre.rowwise() += params.b_ff1.row(0);
  c.ff_act = c.ff_pre.unaryExpr([](double x) { return gelu(x); });
  Matrix residual2 = c.hidden + c.ff_act * params.w_ff2;
  residual2.rowwise() += params.b_ff2.row(0);

  EncoderForward out;
  out.output = layer_norm(residual2, params.ln2_gain, params.ln2_bias, c.ln2_normed, c.ln2_inv_std);
  if (keep_cache) out.cache = std::move(c);
  return out;
}

Vector relational_feature(const Matrix& token_embeddings, const MarkedSequence& m,
                          std::span<const std::size_t> span_positions) {
  Vector raw = gather_rows(token_embeddings, feature_rows(m, span_positions));
  const double norm = raw.norm();
  if (norm > 0.0) raw /= norm;
  return raw;
}

void encoder_backward(const EncoderParams& params, const EncoderForward& forward,
                      const MarkedSequence& m, std::span<const std::size_t> span_positions,
                      const Vector& feature_grad, EncoderParams& grads) {
  if (!forward.cache) throw MissingForwardCache();
  const EncoderCache& c = *forward.cache;
  const Matrix& b = forward.output;
  const Eigen::Index d = b.cols();
  const Eigen::Index n = b.rows();

  // Unit normalization: dh_raw = (g - h (h.g)) / |h_raw|.
  const auto rows = feature_rows(m, span_positions);
  const Vector raw = gather_rows(b, rows);
  if (feature_grad.size() != raw.size()) {
    throw std::invalid_argument("feature gradient has wrong length");
  }
  const double norm = raw.norm();
  if (norm == 0.0) return;
  const Vector h = raw / norm;
  const Vector draw = (feature_grad - h * h.dot(feature_grad)) / norm;

  Matrix dy = Matrix::Zero(n, d);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    dy.row(static_cast<Eigen::Index>(rows[k])) +=
        draw.segment(static_cast<Eigen::Index>(k) * d, d).transpose();
  }

  // Second layer norm and feed-forward block.
  Matrix dres2 = layer_norm_backward(dy, c.ln2_normed, c.ln2_inv_std, params.ln2_gain,
                                     grads.ln2_gain, grads.ln2_bias);
  grads.w_ff2.noalias() += c.ff_act.transpose() * dres2;
  grads.b_ff2.row(0) += dres2.colwise().sum();
  Matrix dpre = dres2 * params.w_ff2.transpose();
  dpre.array() *= c.ff_pre.unaryExpr([](double x) { return gelu_grad(x); }).array();
  grads.w_ff1.noalias() += c.hidden.transpose() * dpre;
  grads.b_ff1.row(0) += dpre.colwise().sum();
  Matrix dhidden = dres2;
  dhidden.noalias() += dpre * params.w_ff1.transpose();

  // First layer norm and attention block.
  const Matrix dres1 = layer_norm_backward(dhidden, c.ln1_normed, c.ln1_inv_std, params.ln1_gain,
                                           grads.ln1_gain, grads.ln1_bias);
  grads.w_output.noalias() += c.context.transpose() * dres1;
  const Matrix dcontext = dres1 * params.w_output.transpose();
  const Matrix dprobs = dcontext * c.value.transpose();
  const Matrix dvalue = c.attention.transpose() * dcontext;
  Matrix dscores(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double dot = dprobs.row(i).dot(c.attention.row(i));
    dscores.row(i) = c.attention.row(i).array() * (dprobs.row(i).array() - dot);
  }
  dscores *= 1.0 / std::sqrt(static_cast<double>(d));
  const Matrix dquery = dscores * c.key;
  const Matrix dkey = dscores.transpose() * c.query;
  grads.w_query.noalias() += c.embedded.transpose() * dquery;
  grads.w_key.noalias() += c.embedded.transpose() * dkey;
  grads.w_value.noalias() += c.embedded.transpose() * dvalue;

  Matrix dembedded = dres1;
  dembedded.noalias() += dquery * params.w_query.transpose();
  dembedded.noalias() += dkey * params.w_key.transpose();
  dembedded.noalias() += dvalue * params.w_value.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    grads.token_embeddings.row(c.ids[static_cast<std::size_t>(i)]) += dembedded.row(i);
    grads.position_embeddings.row(i) += dembedded.row(i);
  }
}

}  // namespace relclust
