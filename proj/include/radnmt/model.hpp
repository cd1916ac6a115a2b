#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "radnmt/autodiff.hpp"
#include "radnmt/corpus.hpp"
#include "radnmt/gradcheck.hpp"
#include "radnmt/rng.hpp"

namespace radnmt {

/// Alignment score between decoder state s and annotation h.
///  - General: s^T W_a h
///  - Dot: s^T (h_fwd + h_bwd), i.e. the two directional halves summed so the
///    dimensions match the decoder state.
enum class AttentionKind { General, Dot };

inline std::string_view to_string(AttentionKind k) { return k == AttentionKind::General ? "general" : "dot"; }

inline AttentionKind parse_attention_kind(std::string_view s) {
  if (s == "general") return AttentionKind::General;
  if (s == "dot") return AttentionKind::Dot;
  throw ConfigError("unknown attention kind `" + std::string(s) + "` (expected general|dot)");
}

struct ModelConfig {
  std::size_t char_embed = 448;    // p1
  std::size_t feature_embed = 64;  // p2; 0 keeps the feature path but with zero width
  std::size_t hidden = 512;        // q
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t feature_vocab = kFeatureVocabSize;
  bool use_features = true;  // false builds the plain character model
  AttentionKind attention = AttentionKind::General;
  bool input_feeding = true;
  std::size_t layers = 1;

  /// Total source embedding size p = p1 + p2.
  std::size_t embed_size() const { return char_embed + (use_features ? feature_embed : 0); }

  void validate() const {
    if (char_embed < 1) throw ConfigError("char embedding size must be >= 1");
    if (hidden < 1) throw ConfigError("hidden size must be >= 1");
    if (layers != 1) throw ConfigError("only single-layer models are supported");
    if (src_vocab <= static_cast<std::size_t>(Vocab::kReserved) ||
        tgt_vocab <= static_cast<std::size_t>(Vocab::kReserved))
      throw ConfigError("vocabularies must contain at least one character");
    if (use_features && feature_vocab < 1) throw ConfigError("feature vocabulary is empty");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Weight tensors of the encoder-decoder, in a fixed order with stable names.
class Model {
 public:
  /// Uniform [-0.1, 0.1) initialization in parameter order; forget-gate biases set to 1.
  Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    for (auto& [name, shape] : layout()) {
      Tensor t = uniform_init(shape, rng);
      if (name == "encoder_fwd.bias" || name == "encoder_bwd.bias" || name == "decoder.bias") {
        const std::size_t q = config_.hidden;
        for (std::size_t j = q; j < 2 * q; ++j) t[j] = 1.0;
      }
      params_.emplace_back(name, std::move(t));
    }
  }

  /// Wraps existing tensors, e.g. from a checkpoint. Shapes must match the layout.
  Model(const ModelConfig& config, std::vector<std::pair<std::string, Tensor>> params)
      : config_(config), params_(std::move(params)) {
    config_.validate();
    const auto expected = layout();
    if (expected.size() != params_.size())
      throw ValidationError("model expects " + std::to_string(expected.size()) + " tensors, got " +
                            std::to_string(params_.size()));
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (expected[i].first != params_[i].first || expected[i].second != params_[i].second.shape())
        throw ValidationError("tensor " + params_[i].first + " " + shape_str(params_[i].second.shape()) +
                              " does not match expected " + expected[i].first + " " + shape_str(expected[i].second));
    }
  }

  const ModelConfig& config() const noexcept { return config_; }

  /// Names and shapes of every tensor for `config`, in storage order.
  std::vector<std::pair<std::string, Shape>> layout() const {
    const auto& c = config_;
    const std::size_t q = c.hidden, p = c.embed_size();
    std::vector<std::pair<std::string, Shape>> out;
    out.push_back({"src_char_embedding", {c.char_embed, c.src_vocab}});
    if (c.use_features) out.push_back({"src_feature_embedding", {c.feature_embed, c.feature_vocab}});
    for (const char* dir : {"encoder_fwd", "encoder_bwd"}) {
      out.push_back({std::string(dir) + ".input", {p, 4 * q}});
      out.push_back({std::string(dir) + ".recurrent", {q, 4 * q}});
      out.push_back({std::string(dir) + ".bias", {1, 4 * q}});
    }
    out.push_back({"bridge.weight", {q, q}});
    out.push_back({"bridge.bias", {1, q}});
    out.push_back({"tgt_embedding", {c.char_embed, c.tgt_vocab}});
    out.push_back({"decoder.input", {c.char_embed + q, 4 * q}});
    out.push_back({"decoder.recurrent", {q, 4 * q}});
    out.push_back({"decoder.bias", {1, 4 * q}});
    if (c.attention == AttentionKind::General) out.push_back({"attention.weight", {q, 2 * q}});
    out.push_back({"attention_output.weight", {3 * q, q}});
    out.push_back({"output.weight", {q, c.tgt_vocab}});
    out.push_back({"output.bias", {1, c.tgt_vocab}});
    return out;
  }

  std::vector<NamedParam> parameters() {
    std::vector<NamedParam> out;
    for (auto& [name, t] : params_) out.push_back({name, &t});
    return out;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : params_) out.push_back(&t);
    return out;
  }

  const std::vector<std::pair<std::string, Tensor>>& named_tensors() const noexcept { return params_; }

  Tensor& param(std::string_view name) {
    for (auto& [n, t] : params_)
      if (n == name) return t;
    throw UsageError("no parameter named " + std::string(name));
  }

  const Tensor& param(std::string_view name) const { return const_cast<Model*>(this)->param(name); }

  bool has_param(std::string_view name) const {
    for (const auto& [n, t] : params_)
      if (n == name) return true;
    return false;
  }

  void set_requires_grad(bool on) {
    for (auto& [n, t] : params_) t.set_requires_grad(on);
  }

  void zero_grad() {
    for (auto& [n, t] : params_) t.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

 private:
  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

struct LstmWeights {
  Var input;      // in x 4q
  Var recurrent;  // q x 4q
  Var bias;       // 1 x 4q
};

struct LstmState {
  Var h;
  Var c;
};

/// Model tensors recorded as leaves of one tape.
struct BoundModel {
  ModelConfig config;
  Var src_char_embedding;
  std::optional<Var> src_feature_embedding;
  LstmWeights encoder_fwd;
  LstmWeights encoder_bwd;
  Var bridge_weight;
  Var bridge_bias;
  Var tgt_embedding;
  LstmWeights decoder;
  std::optional<Var> attention_weight;
  Var attention_output;
  Var output_weight;
  Var output_bias;
};

namespace detail {

template <class Leaf>
BoundModel bind_with(const Model& model, Leaf&& leaf) {
  BoundModel b;
  b.config = model.config();
  auto get = [&](std::string_view name) { return leaf(model.param(name)); };
  auto lstm = [&](const std::string& prefix) {
    return LstmWeights{get(prefix + ".input"), get(prefix + ".recurrent"), get(prefix + ".bias")};
  };
  b.src_char_embedding = get("src_char_embedding");
  if (b.config.use_features) b.src_feature_embedding = get("src_feature_embedding");
  b.encoder_fwd = lstm("encoder_fwd");
  b.encoder_bwd = lstm("encoder_bwd");
  b.bridge_weight = get("bridge.weight");
  b.bridge_bias = get("bridge.bias");
  b.tgt_embedding = get("tgt_embedding");
  b.decoder = lstm("decoder");
  if (b.config.attention == AttentionKind::General) b.attention_weight = get("attention.weight");
  b.attention_output = get("attention_output.weight");
  b.output_weight = get("output.weight");
  b.output_bias = get("output.bias");
  return b;
}

}  // namespace detail

/// Binds parameters so that backward() accumulates into their gradients.
inline BoundModel bind(Tape& tape, Model& model) {
  return detail::bind_with(model, [&](const Tensor& t) { return tape.param(const_cast<Tensor&>(t)); });
}

/// Binds parameters as constants (inference).
inline BoundModel bind_const(Tape& tape, const Model& model) {
  return detail::bind_with(model, [&](const Tensor& t) { return tape.constant_ref(t); });
}

/// Inverted dropout driven by a seeded stream. Inactive without an Rng or with p = 0.
struct Dropout {
  double p = 0.0;
  Rng* rng = nullptr;

  bool active() const noexcept { return rng != nullptr && p > 0.0; }

  Var operator()(const Var& x) const {
    if (!active()) return x;
    const double keep = 1.0 - p;
    std::vector<std::uint8_t> mask(x.value().size());
    for (auto& m : mask) m = rng->bernoulli(keep) ? 1 : 0;
    return dropout_apply(x, mask, 1.0 / keep);
  }
};

/// Per position: concat(E1[:, char], E2[:, feature]). Without a feature
/// embedding this is the plain character lookup.
inline Var embed_with_features(std::span<const int> char_ids, std::span<const int> feat_ids, const Var& char_embedding,
                               const std::optional<Var>& feature_embedding) {
  Var chars = embedding_lookup(char_embedding, char_ids);
  if (!feature_embedding) return chars;
  if (feat_ids.size() != char_ids.size())
    throw ShapeError("embed_with_features: " + std::to_string(char_ids.size()) + " characters but " +
                     std::to_string(feat_ids.size()) + " features");
  return concat({chars, embedding_lookup(*feature_embedding, feat_ids)}, 1);
}

/// Standard LSTM step; gate order in the fused weights is i, f, g, o.
inline LstmState lstm_cell(const Var& x, const LstmState& prev, const LstmWeights& w) {
  const std::size_t q = prev.h.cols();
  if (w.recurrent.rows() != q || w.recurrent.cols() != 4 * q)
    throw ShapeError("lstm_cell: recurrent weights " + shape_str(w.recurrent.value().shape()) + " for hidden size " +
                     std::to_string(q));
  Var gates = add(add(matmul(x, w.input), matmul(prev.h, w.recurrent)), w.bias);
  Var i = sigmoid(slice(gates, 1, 0, q));
  Var f = sigmoid(slice(gates, 1, q, 2 * q));
  Var g = tanh(slice(gates, 1, 2 * q, 3 * q));
  Var o = sigmoid(slice(gates, 1, 3 * q, 4 * q));
  Var c = add(mul(f, prev.c), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

/// Encoder output: one B x 2q annotation per source position.
struct Annotations {
  std::vector<Var> states;
  std::vector<std::uint8_t> mask;  // B x L, row-major
  Var backward_final;              // backward state after reading the whole sentence
  std::size_t rows = 0;
};

/// Bidirectional LSTM over embedded positions. Rows whose mask is off at a
/// position keep their previous state, so padding never reaches real positions.
inline Annotations encode(const BoundModel& m, std::span<const Var> embedded, std::span<const std::uint8_t> mask,
                          std::size_t rows) {
  const std::size_t len = embedded.size();
  if (len == 0) throw UsageError("encode: empty source sequence");
  if (mask.size() != rows * len) throw ShapeError("encode: mask does not match batch shape");
  Tape& tape = embedded[0].tape();
  const std::size_t q = m.config.hidden;
  auto column = [&](std::size_t j) {
    std::vector<std::uint8_t> col(rows);
    for (std::size_t i = 0; i < rows; ++i) col[i] = mask[i * len + j];
    return col;
  };
  auto run = [&](const LstmWeights& w, bool forward) {
    std::vector<Var> out(len);
    LstmState state{tape.constant(Tensor::matrix(rows, q)), tape.constant(Tensor::matrix(rows, q))};
    for (std::size_t step = 0; step < len; ++step) {
      const std::size_t j = forward ? step : len - 1 - step;
      const auto col = column(j);
      LstmState next = lstm_cell(embedded[j], state, w);
      state = {select_rows(col, next.h, state.h), select_rows(col, next.c, state.c)};
      out[j] = state.h;
    }
    return out;
  };
  const auto fwd = run(m.encoder_fwd, true);
  const auto bwd = run(m.encoder_bwd, false);
  Annotations a;
  a.rows = rows;
  a.mask.assign(mask.begin(), mask.end());
  for (std::size_t j = 0; j < len; ++j) a.states.push_back(concat({fwd[j], bwd[j]}, 1));
  a.backward_final = bwd[0];
  return a;
}

struct AttentionResult {
  Var context;  // B x 2q
  Var weights;  // B x L
};

inline AttentionResult attention(const BoundModel& m, const Var& state, const Annotations& ann) {
  Var query = m.config.attention == AttentionKind::General ? matmul(state, *m.attention_weight)
                                                           : concat({state, state}, 1);
  Var scores = row_dots(query, ann.states);
  Var weights = masked_softmax(scores, ann.mask);
  return {weighted_sum(weights, ann.states), weights};
}

struct DecoderState {
  LstmState lstm;
  Var feed;  // previous attentional output h~, B x q
};

/// Zero-feed initial decoder state from the encoder's final backward state.
inline DecoderState initial_decoder_state(const BoundModel& m, const Annotations& ann) {
  Tape& tape = ann.backward_final.tape();
  const std::size_t q = m.config.hidden;
  Var h0 = tanh(add(matmul(ann.backward_final, m.bridge_weight), m.bridge_bias));
  return {{h0, tape.constant(Tensor::matrix(ann.rows, q))}, tape.constant(Tensor::matrix(ann.rows, q))};
}

struct StepOutput {
  Var logits;  // B x tgt_vocab
  DecoderState state;
  AttentionResult attention;
};

/// One input-feeding decoder step: LSTM over [embed(y_prev); h~_prev], global
/// attention, h~ = tanh(W_c [s; c]), logits from the (dropped-out) h~.
inline StepOutput decode_step(const BoundModel& m, std::span<const int> prev_tokens, const DecoderState& prev,
                              const Annotations& ann, const Dropout& dropout = {}) {
  Tape& tape = prev.feed.tape();
  Var emb = dropout(embedding_lookup(m.tgt_embedding, prev_tokens));
  Var feed = m.config.input_feeding ? prev.feed : tape.constant(Tensor::matrix(prev_tokens.size(), m.config.hidden));
  LstmState s = lstm_cell(concat({emb, feed}, 1), prev.lstm, m.decoder);
  AttentionResult att = attention(m, s.h, ann);
  Var attn_out = dropout(tanh(matmul(concat({s.h, att.context}, 1), m.attention_output)));
  Var logits = add(matmul(attn_out, m.output_weight), m.output_bias);
  return {logits, {s, attn_out}, att};
}

/// Embedded source positions for a batch.
inline std::vector<Var> embed_source(const BoundModel& m, const Batch& batch, const Dropout& dropout = {}) {
  std::vector<Var> out;
  for (std::size_t j = 0; j < batch.src_len; ++j) {
    const auto ids = batch.src_column(j);
    const auto feats = batch.feat_column(j);
    out.push_back(dropout(embed_with_features(ids, feats, m.src_char_embedding, m.src_feature_embedding)));
  }
  return out;
}

struct LossResult {
  Var total;  // summed NLL, 1 x 1
  std::size_t tokens = 0;
};

/// Teacher-forced summed negative log-likelihood over real target positions
/// (everything after BOS, EOS included).
inline LossResult forward_loss(const BoundModel& m, const Batch& batch, const Dropout& dropout = {}) {
  if (batch.rows == 0 || batch.tgt_len < 2) throw UsageError("forward_loss: empty batch");
  const auto embedded = embed_source(m, batch, dropout);
  const Annotations ann = encode(m, embedded, batch.src_mask, batch.rows);
  DecoderState state = initial_decoder_state(m, ann);
  std::optional<Var> total;
  for (std::size_t t = 0; t + 1 < batch.tgt_len; ++t) {
    const auto prev = batch.tgt_column(t);
    StepOutput step = decode_step(m, prev, state, ann, dropout);
    Var nll = masked_nll(step.logits, batch.tgt_column(t + 1), batch.tgt_mask_column(t + 1));
    total = total ? add(*total, nll) : nll;
    state = step.state;
  }
  return {*total, batch.target_tokens()};
}

/// Summed NLL and token count without dropout or gradients.
inline std::pair<double, std::size_t> evaluate_loss(const Model& model, const Batch& batch) {
  Tape tape;
  const BoundModel m = bind_const(tape, model);
  const LossResult r = forward_loss(m, batch);
  return {r.total.value()[0], r.tokens};
}

/// Encoder output for one sentence, detached from any tape.
struct EncodedSource {
  std::vector<Tensor> annotations;  // L tensors of 1 x 2q
  Tensor h0;
  Tensor c0;
};

/// Recurrent decoder state for one hypothesis.
struct HypothesisState {
  Tensor h;
  Tensor c;
  Tensor feed;
};

inline EncodedSource encode_source(const Model& model, std::span<const int> src_ids, std::span<const int> feat_ids) {
  if (src_ids.empty()) throw UsageError("encode_source: empty source");
  Tape tape;
  const BoundModel m = bind_const(tape, model);
  std::vector<Var> embedded;
  for (std::size_t j = 0; j < src_ids.size(); ++j)
    embedded.push_back(embed_with_features(src_ids.subspan(j, 1), feat_ids.empty() ? feat_ids : feat_ids.subspan(j, 1),
                                           m.src_char_embedding, m.src_feature_embedding));
  const std::vector<std::uint8_t> mask(src_ids.size(), 1);
  const Annotations ann = encode(m, embedded, mask, 1);
  const DecoderState init = initial_decoder_state(m, ann);
  EncodedSource out;
  for (const Var& v : ann.states) out.annotations.push_back(v.value());
  out.h0 = init.lstm.h.value();
  out.c0 = init.lstm.c.value();
  return out;
}

inline HypothesisState initial_state(const EncodedSource& src) {
  return {src.h0, src.c0, Tensor::matrix(1, src.h0.cols())};
}

struct StepScores {
  std::vector<double> log_probs;
  HypothesisState next;
  std::vector<double> attention;
};

/// Log-softmax over the target vocabulary after feeding `prev_token`.
inline StepScores score_step(const Model& model, const EncodedSource& src, const HypothesisState& state,
                             int prev_token) {
  Tape tape;
  const BoundModel m = bind_const(tape, model);
  Annotations ann;
  ann.rows = 1;
  ann.mask.assign(src.annotations.size(), 1);
  for (const Tensor& a : src.annotations) ann.states.push_back(tape.constant_ref(a));
  DecoderState prev{{tape.constant_ref(state.h), tape.constant_ref(state.c)}, tape.constant_ref(state.feed)};
  const int tok[1] = {prev_token};
  StepOutput out = decode_step(m, tok, prev, ann);
  const Tensor& logits = out.logits.value();
  StepScores r;
  double mx = logits[0];
  for (double v : logits.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (double v : logits.data()) r.log_probs.push_back(v - lse);
  r.next = {out.state.lstm.h.value(), out.state.lstm.c.value(), out.state.feed.value()};
  const auto w = out.attention.weights.value().data();
  r.attention.assign(w.begin(), w.end());
  return r;
}

}  // namespace radnmt
