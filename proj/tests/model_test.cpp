#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "radnmt/checkpoint.hpp"
#include "radnmt/gradcheck_suite.hpp"
#include "radnmt/model.hpp"

namespace {

using namespace radnmt;

ModelConfig tiny_config(std::size_t p1 = 6, std::size_t p2 = 2, std::size_t q = 5, bool features = true) {
  ModelConfig c;
  c.char_embed = p1;
  c.feature_embed = p2;
  c.hidden = q;
  c.src_vocab = 9;
  c.tgt_vocab = 8;
  c.use_features = features;
  return c;
}

// Scalar-loop forward pass for one sentence, written against the raw tensors.
namespace reference {

using Vec = std::vector<double>;

Vec column(const Tensor& E, int id) {
  Vec v(E.rows());
  for (std::size_t i = 0; i < E.rows(); ++i) v[i] = E(i, static_cast<std::size_t>(id));
  return v;
}

Vec affine(const Vec& x, const Tensor& W) {
  Vec y(W.cols(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < W.cols(); ++j) y[j] += x[i] * W(i, j);
  return y;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec cat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void lstm(const Model& m, const std::string& prefix, const Vec& x, Vec& h, Vec& c) {
  const std::size_t q = h.size();
  Vec g = affine(x, m.param(prefix + ".input"));
  const Vec r = affine(h, m.param(prefix + ".recurrent"));
  const Tensor& b = m.param(prefix + ".bias");
  for (std::size_t k = 0; k < 4 * q; ++k) g[k] += r[k] + b[k];
  for (std::size_t k = 0; k < q; ++k) {
    const double i = sig(g[k]), f = sig(g[q + k]), cand = std::tanh(g[2 * q + k]), o = sig(g[3 * q + k]);
    c[k] = f * c[k] + i * cand;
    h[k] = o * std::tanh(c[k]);
  }
}

double sentence_nll(const Model& m, const ExamplePair& ex) {
  const auto& cfg = m.config();
  const std::size_t q = cfg.hidden, L = ex.src_chars.size();
  std::vector<Vec> x(L);
  for (std::size_t j = 0; j < L; ++j) {
    x[j] = column(m.param("src_char_embedding"), ex.src_chars[j]);
    if (cfg.use_features) x[j] = cat(x[j], column(m.param("src_feature_embedding"), ex.src_feats[j]));
  }
  std::vector<Vec> fwd(L), bwd(L);
  Vec h(q, 0.0), c(q, 0.0);
  for (std::size_t j = 0; j < L; ++j) {
    lstm(m, "encoder_fwd", x[j], h, c);
    fwd[j] = h;
  }
  h.assign(q, 0.0);
  c.assign(q, 0.0);
  for (std::size_t j = L; j-- > 0;) {
    lstm(m, "encoder_bwd", x[j], h, c);
    bwd[j] = h;
  }
  std::vector<Vec> ann(L);
  for (std::size_t j = 0; j < L; ++j) ann[j] = cat(fwd[j], bwd[j]);
  Vec s = affine(bwd[0], m.param("bridge.weight"));
  for (std::size_t k = 0; k < q; ++k) s[k] = std::tanh(s[k] + m.param("bridge.bias")[k]);
  Vec cell(q, 0.0), feed(q, 0.0);
  double nll = 0.0;
  for (std::size_t t = 0; t + 1 < ex.tgt_chars.size(); ++t) {
    const Vec emb = column(m.param("tgt_embedding"), ex.tgt_chars[t]);
    lstm(m, "decoder", cat(emb, cfg.input_feeding ? feed : Vec(q, 0.0)), s, cell);
    const Vec query = cfg.attention == AttentionKind::General ? affine(s, m.param("attention.weight")) : cat(s, s);
    Vec score(L);
    double mx = -1e300;
    for (std::size_t j = 0; j < L; ++j) {
      score[j] = 0.0;
      for (std::size_t k = 0; k < 2 * q; ++k) score[j] += query[k] * ann[j][k];
      mx = std::max(mx, score[j]);
    }
    double z = 0.0;
    for (double& v : score) z += (v = std::exp(v - mx));
    Vec ctx(2 * q, 0.0);
    for (std::size_t j = 0; j < L; ++j)
      for (std::size_t k = 0; k < 2 * q; ++k) ctx[k] += score[j] / z * ann[j][k];
    Vec ht = affine(cat(s, ctx), m.param("attention_output.weight"));
    for (double& v : ht) v = std::tanh(v);
    Vec logits = affine(ht, m.param("output.weight"));
    double lmx = -1e300;
    for (std::size_t k = 0; k < logits.size(); ++k) lmx = std::max(lmx, logits[k] += m.param("output.bias")[k]);
    double lz = 0.0;
    for (double v : logits) lz += std::exp(v - lmx);
    nll += lmx + std::log(lz) - logits[static_cast<std::size_t>(ex.tgt_chars[t + 1])];
    feed = ht;
  }
  return nll;
}

}  // namespace reference

std::vector<ExamplePair> random_pairs(const ModelConfig& c, std::size_t n, Rng& rng, std::size_t max_len = 5) {
  std::vector<ExamplePair> out;
  for (std::size_t k = 0; k < n; ++k) {
    ExamplePair ex;
    const std::size_t ls = 1 + rng.index(max_len), lt = rng.index(max_len);
    for (std::size_t i = 0; i < ls; ++i) {
      ex.src_chars.push_back(3 + static_cast<int>(rng.index(c.src_vocab - 3)));
      ex.src_feats.push_back(1 + static_cast<int>(rng.index(214)));
    }
    ex.src_chars.push_back(Vocab::kEos);
    ex.src_feats.push_back(kNoFeature);
    ex.tgt_chars.push_back(Vocab::kBos);
    for (std::size_t i = 0; i < lt; ++i) ex.tgt_chars.push_back(3 + static_cast<int>(rng.index(c.tgt_vocab - 3)));
    ex.tgt_chars.push_back(Vocab::kEos);
    out.push_back(std::move(ex));
  }
  return out;
}

double batch_loss(const Model& m, const std::vector<ExamplePair>& pairs) {
  return evaluate_loss(m, make_batch(pairs)).first;
}

TEST(Model, LayoutAndInit) {
  const Model m(tiny_config(), 3);
  EXPECT_EQ(m.param("src_char_embedding").shape(), (Shape{6, 9}));
  EXPECT_EQ(m.param("src_feature_embedding").shape(), (Shape{2, 215}));
  EXPECT_EQ(m.param("encoder_fwd.input").shape(), (Shape{8, 20}));
  EXPECT_EQ(m.param("decoder.input").shape(), (Shape{6 + 5, 20}));
  EXPECT_EQ(m.param("attention.weight").shape(), (Shape{5, 10}));
  EXPECT_EQ(m.param("output.weight").shape(), (Shape{5, 8}));
  for (const auto& [name, t] : m.named_tensors()) {
    const bool lstm_bias = name == "encoder_fwd.bias" || name == "encoder_bwd.bias" || name == "decoder.bias";
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (lstm_bias && i >= 5 && i < 10) {
        EXPECT_EQ(t[i], 1.0) << name;
      } else {
        EXPECT_GE(t[i], -0.1) << name;
        EXPECT_LT(t[i], 0.1) << name;
      }
    }
  }
  EXPECT_FALSE(Model(tiny_config(6, 2, 5, false), 3).has_param("src_feature_embedding"));
}

TEST(Model, RejectsMismatchedTensors) {
  const Model m(tiny_config(), 1);
  auto tensors = m.named_tensors();
  tensors[0].second = Tensor({6, 10});
  EXPECT_THROW(Model(tiny_config(), tensors), ValidationError);
}

TEST(Embedding, ConcatenationLength) {
  const Model m(tiny_config(6, 2), 1);
  Tape tape;
  const BoundModel b = bind_const(tape, m);
  const std::vector<int> ids = {4, 5, 6}, feats = {1, 2, 3};
  EXPECT_EQ(embed_with_features(ids, feats, b.src_char_embedding, b.src_feature_embedding).cols(), 8u);
}

TEST(Embedding, ZeroWidthFeatureMatchesPlainLookup) {
  const Model m(tiny_config(6, 0), 1);
  Tape tape;
  const BoundModel b = bind_const(tape, m);
  const std::vector<int> ids = {4, 5, 6}, feats = {1, 2, 3};
  EXPECT_EQ(embed_with_features(ids, feats, b.src_char_embedding, b.src_feature_embedding).value(),
            embedding_lookup(b.src_char_embedding, ids).value());
}

TEST(Embedding, RadicalChangesVectorIffFeatureWidth) {
  for (std::size_t p2 : {0u, 2u}) {
    const Model m(tiny_config(6, p2), 7);
    Tape tape;
    const BoundModel b = bind_const(tape, m);
    const std::vector<int> ids = {4, 4}, feats = {10, 11};
    const Tensor e = embed_with_features(ids, feats, b.src_char_embedding, b.src_feature_embedding).value();
    bool same = true;
    for (std::size_t k = 0; k < e.cols(); ++k) same = same && e(0, k) == e(1, k);
    EXPECT_EQ(same, p2 == 0);
  }
}

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  Tape tape;
  const std::size_t q = 3;
  LstmWeights w{tape.constant(Tensor::matrix(4, 4 * q)), tape.constant(Tensor::matrix(q, 4 * q)),
                tape.constant(Tensor::matrix(1, 4 * q))};
  Rng rng(1);
  const LstmState prev{tape.constant(Tensor::matrix(2, q)), tape.constant(Tensor::matrix(2, q))};
  const LstmState s = lstm_cell(tape.constant(uniform_init({2, 4}, rng, -5, 5)), prev, w);
  for (double v : s.h.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, HiddenBoundedForLargeWeights) {
  Rng rng(2);
  Tape tape;
  const std::size_t q = 4;
  LstmWeights w{tape.constant(uniform_init({3, 4 * q}, rng, -20, 20)),
                tape.constant(uniform_init({q, 4 * q}, rng, -20, 20)),
                tape.constant(uniform_init({1, 4 * q}, rng, -20, 20))};
  LstmState s{tape.constant(Tensor::matrix(1, q)), tape.constant(Tensor::matrix(1, q))};
  for (int t = 0; t < 10; ++t) {
    s = lstm_cell(tape.constant(uniform_init({1, 3}, rng, -3, 3)), s, w);
    for (double v : s.h.value().data()) EXPECT_LE(std::abs(v), 1.0);
  }
}

TEST(Encoder, LengthOneAnnotation) {
  const Model m(tiny_config(), 4);
  Tape tape;
  const BoundModel b = bind_const(tape, m);
  const std::vector<int> ids = {5}, feats = {30};
  const Var x = embed_with_features(ids, feats, b.src_char_embedding, b.src_feature_embedding);
  const std::vector<Var> xs = {x};
  const std::vector<std::uint8_t> mask = {1};
  const Annotations a = encode(b, xs, mask, 1);
  ASSERT_EQ(a.states.size(), 1u);
  EXPECT_EQ(a.states[0].cols(), 10u);
  const LstmState zero{tape.constant(Tensor::matrix(1, 5)), tape.constant(Tensor::matrix(1, 5))};
  const Var f = lstm_cell(x, zero, b.encoder_fwd).h, bk = lstm_cell(x, zero, b.encoder_bwd).h;
  EXPECT_EQ(a.states[0].value(), concat({f, bk}, 1).value());
}

TEST(Encoder, PaddingDoesNotLeak) {
  Rng rng(8);
  const auto cfg = tiny_config();
  const Model m(cfg, 5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pairs = random_pairs(cfg, 3, rng);
    std::vector<const ExamplePair*> group;
    for (const auto& p : pairs) group.push_back(&p);
    const Batch padded = make_batch(group, 9, 0);
    Tape tape;
    const BoundModel b = bind_const(tape, m);
    const Annotations all = encode(b, embed_source(b, padded), padded.src_mask, padded.rows);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const Batch single = make_batch(std::span(pairs).subspan(i, 1));
      const Annotations one = encode(b, embed_source(b, single), single.src_mask, 1);
      for (std::size_t j = 0; j < single.src_len; ++j)
        for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(all.states[j].value()(i, k), one.states[j].value()(0, k), 1e-12);
    }
  }
}

TEST(Attention, SingletonAndUniform) {
  const Model m(tiny_config(), 6);
  Tape tape;
  const BoundModel b = bind_const(tape, m);
  Rng rng(3);
  Annotations ann;
  ann.rows = 1;
  const Tensor h1 = uniform_init({1, 10}, rng);
  ann.states = {tape.constant(h1), tape.constant(uniform_init({1, 10}, rng))};
  ann.mask = {1, 0};
  const auto r = attention(b, tape.constant(uniform_init({1, 5}, rng)), ann);
  EXPECT_EQ(r.weights.value()[0], 1.0);
  EXPECT_EQ(r.weights.value()[1], 0.0);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_DOUBLE_EQ(r.context.value()[k], h1[k]);

  ann.states = {tape.constant(h1), tape.constant(h1), tape.constant(h1)};
  ann.mask = {1, 1, 1};
  const auto u = attention(b, tape.constant(uniform_init({1, 5}, rng)), ann);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(u.weights.value()[j], 1.0 / 3.0, 1e-15);
}

TEST(Attention, RandomDistributionAndContext) {
  Rng rng(4);
  for (AttentionKind kind : {AttentionKind::General, AttentionKind::Dot}) {
    auto cfg = tiny_config();
    cfg.attention = kind;
    const Model m(cfg, 9);
    Tape tape;
    const BoundModel b = bind_const(tape, m);
    Annotations ann;
    ann.rows = 2;
    std::vector<Tensor> hs;
    for (int j = 0; j < 4; ++j) hs.push_back(uniform_init({2, 10}, rng, -1, 1));
    for (const auto& h : hs) ann.states.push_back(tape.constant(h));
    ann.mask = {1, 1, 1, 0, 1, 1, 1, 1};
    const auto r = attention(b, tape.constant(uniform_init({2, 5}, rng, -1, 1)), ann);
    for (std::size_t i = 0; i < 2; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) s += r.weights.value()(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
      for (std::size_t k = 0; k < 10; ++k) {
        double c = 0;
        for (std::size_t j = 0; j < 4; ++j) c += r.weights.value()(i, j) * hs[j](i, k);
        EXPECT_NEAR(r.context.value()(i, k), c, 1e-12);
      }
    }
    EXPECT_EQ(r.weights.value()(0, 3), 0.0);
  }
}

TEST(DecodeStep, LogitShapeAndInputFeeding) {
  Rng rng(5);
  auto cfg = tiny_config();
  const Model m(cfg, 10);
  const auto pairs = random_pairs(cfg, 1, rng);
  const std::vector<int> prev = {Vocab::kBos};
  auto step_logits = [&](bool feeding, bool nonzero_feed) {
    auto c = cfg;
    c.input_feeding = feeding;
    const Model mm(c, m.named_tensors());
    Tape tape;
    const BoundModel b = bind_const(tape, mm);
    const Batch batch = make_batch(pairs);
    const Annotations ann = encode(b, embed_source(b, batch), batch.src_mask, 1);
    DecoderState st = initial_decoder_state(b, ann);
    if (nonzero_feed) st.feed = tape.constant(Tensor::matrix(1, 5, 0.7));
    return decode_step(b, prev, st, ann).logits.value();
  };
  EXPECT_EQ(step_logits(true, false).cols(), 8u);
  EXPECT_EQ(step_logits(true, false), step_logits(true, false));
  EXPECT_NE(step_logits(true, true), step_logits(false, true));
  EXPECT_EQ(step_logits(false, true), step_logits(false, false));
}

TEST(ForwardLoss, MatchesScalarReference) {
  Rng rng(11);
  for (AttentionKind kind : {AttentionKind::General, AttentionKind::Dot}) {
    for (bool feeding : {true, false}) {
      for (bool features : {true, false}) {
        auto cfg = tiny_config(6, 2, 5, features);
        cfg.attention = kind;
        cfg.input_feeding = feeding;
        Model m(cfg, 12);
        for (auto* t : m.tensors())
          for (double& v : t->data()) v = rng.uniform(-0.8, 0.8);
        const auto pairs = random_pairs(cfg, 4, rng);
        double expected = 0.0;
        for (const auto& p : pairs) expected += reference::sentence_nll(m, p);
        EXPECT_NEAR(batch_loss(m, pairs), expected, 1e-10);
      }
    }
  }
}

TEST(ForwardLoss, UniformLogitsGiveLogV) {
  Rng rng(12);
  auto cfg = tiny_config();
  Model m(cfg, 3);
  for (double& v : m.param("output.weight").data()) v = 0.0;
  for (double& v : m.param("output.bias").data()) v = 0.0;
  const auto pairs = random_pairs(cfg, 5, rng);
  const auto [nll, count] = evaluate_loss(m, make_batch(pairs));
  EXPECT_NEAR(nll / static_cast<double>(count), std::log(8.0), 1e-12);
}

TEST(ForwardLoss, BatchEqualsSumOfSentences) {
  Rng rng(13);
  const auto cfg = tiny_config();
  const Model m(cfg, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pairs = random_pairs(cfg, 4, rng);
    double individual = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) individual += batch_loss(m, {pairs[i]});
    EXPECT_NEAR(batch_loss(m, pairs), individual, 1e-10);
  }
}

TEST(ForwardLoss, ExtraPaddingChangesNothing) {
  Rng rng(14);
  const auto cfg = tiny_config();
  const Model m(cfg, 4);
  const auto pairs = random_pairs(cfg, 3, rng);
  std::vector<const ExamplePair*> group;
  for (const auto& p : pairs) group.push_back(&p);
  const auto tight = evaluate_loss(m, make_batch(group));
  const auto padded = evaluate_loss(m, make_batch(group, 12, 12));
  EXPECT_NEAR(tight.first, padded.first, 1e-12);
  EXPECT_EQ(tight.second, padded.second);
}

TEST(ForwardLoss, ZeroFeatureWidthIsBitIdenticalToBaseline) {
  Rng rng(15);
  const auto with = tiny_config(6, 0, 5, true), without = tiny_config(6, 0, 5, false);
  Model a(with, 77), b(without, 77);
  for (std::size_t k = 0; k < b.named_tensors().size(); ++k) {
    const auto& name = b.named_tensors()[k].first;
    EXPECT_EQ(a.param(name), b.param(name)) << name;
  }
  const auto pairs = random_pairs(with, 6, rng);
  const Batch batch = make_batch(pairs);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  double la, lb;
  {
    Tape t;
    const auto r = forward_loss(bind(t, a), batch);
    la = r.total.value()[0];
    t.backward(r.total);
  }
  {
    Tape t;
    const auto r = forward_loss(bind(t, b), batch);
    lb = r.total.value()[0];
    t.backward(r.total);
  }
  EXPECT_EQ(la, lb);
  for (const auto& [name, t] : b.named_tensors()) {
    const std::span<const double> ga = a.param(name).grad(), gb = t.grad();
    EXPECT_TRUE(std::equal(ga.begin(), ga.end(), gb.begin(), gb.end())) << name;
  }
}

TEST(GradCheck, FullModelTinyConfig) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto f = make_grad_check_fixture(seed);
    worst = std::max(worst, run_model_grad_check(f).max_rel_error);
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(GradCheck, LstmCellOverSeeds) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Tensor win = uniform_init({3, 8}, rng, -1, 1), wrec = uniform_init({2, 8}, rng, -1, 1),
           bias = uniform_init({1, 8}, rng, -1, 1), x = uniform_init({2, 3}, rng, -1, 1),
           h = uniform_init({2, 2}, rng, -1, 1), c = uniform_init({2, 2}, rng, -1, 1);
    const NamedParam params[] = {{"input", &win}, {"recurrent", &wrec}, {"bias", &bias}, {"h", &h}, {"c", &c}};
    LossFn loss = [&](Tape& t) {
      const LstmWeights w{t.param(win), t.param(wrec), t.param(bias)};
      const LstmState s = lstm_cell(t.constant(x), {t.param(h), t.param(c)}, w);
      return add(sum(s.h), sum(scale(s.c, 0.5)));
    };
    EXPECT_LE(grad_check(loss, params).max_rel_error, 1e-4) << seed;
  }
}

TEST(Checkpoint, RoundTripReproducesLoss) {
  Rng rng(16);
  const auto cfg = tiny_config();
  const Model m(cfg, 21);
  const std::vector<std::u32string> src = {U"abc"}, tgt = {U"xyz"};
  const Checkpoint ck{m, Vocab::build(src), Vocab::build(tgt), {{"note", "x"}}};
  std::stringstream buf;
  save_checkpoint(buf, ck);
  const Checkpoint back = load_checkpoint(buf);
  EXPECT_EQ(back.model.config(), cfg);
  EXPECT_EQ(back.src_vocab, ck.src_vocab);
  EXPECT_EQ(back.meta["note"], "x");
  for (const auto& [name, t] : m.named_tensors()) EXPECT_EQ(back.model.param(name), t) << name;
  const auto pairs = random_pairs(cfg, 4, rng);
  EXPECT_EQ(batch_loss(m, pairs), batch_loss(back.model, pairs));
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(load_checkpoint(bad), DataError);
  const Model m(tiny_config(), 1);
  const std::vector<std::u32string> s = {U"a"};
  std::stringstream buf;
  save_checkpoint(buf, Checkpoint{m, Vocab::build(s), Vocab::build(s), {}});
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 9);
  std::stringstream truncated(bytes);
  EXPECT_THROW(load_checkpoint(truncated), DataError);
}

}  // namespace
