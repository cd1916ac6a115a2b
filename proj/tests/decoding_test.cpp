#include <gtest/gtest.h>

#include <cmath>

#include "radnmt/decoding.hpp"
#include "decode_oracles.hpp"
#include "test_support.hpp"

namespace {

using namespace radnmt;
using namespace radnmt::testing;

TEST(BeamSearch, BeamOneMatchesGreedy) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Case c = random_case(seed, 6 + seed % 4);
    BeamOptions opt;
    opt.beam_size = 1;
    const Hypothesis h = beam_search(c.model, c.src, c.feats, opt);
    EXPECT_EQ(h.tokens, greedy(c, resolve_max_len(opt, c.src.size() - 1))) << seed;
  }
}

TEST(BeamSearch, MatchesExhaustiveSearch) {
  for (std::size_t max_len : {1u, 2u, 3u}) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const Case c = random_case(seed * 31 + max_len);
      const auto [best, best_lp] = exhaustive_best(c, max_len);
      BeamOptions opt;
      opt.max_len = max_len;
      const Hypothesis h = beam_search(c.model, c.src, c.feats, opt);
      EXPECT_EQ(h.tokens, best) << seed << " max_len " << max_len;
      EXPECT_NEAR(h.log_prob, best_lp, 1e-10);
    }
  }
}

TEST(BeamSearch, LogProbMatchesTeacherForcedRecomputation) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Case c = random_case(seed, 9);
    BeamOptions opt;
    opt.n_best = 5;
    for (const Hypothesis& h : beam_search_nbest(c.model, c.src, c.feats, opt)) {
      EXPECT_NEAR(h.log_prob, sequence_log_prob(c, h.tokens), 1e-10) << seed;
      EXPECT_TRUE(h.finished);
      EXPECT_EQ(h.tokens.back(), Vocab::kEos);
      for (int t : h.tokens) EXPECT_GE(t, Vocab::kEos);
    }
  }
}

TEST(BeamSearch, LargerBeamNeverWorse) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Case c = random_case(seed, 8);
    BeamOptions one, five;
    one.beam_size = 1;
    EXPECT_LE(beam_search(c.model, c.src, c.feats, one).score, beam_search(c.model, c.src, c.feats, five).score)
        << seed;
  }
}

TEST(BeamSearch, SharpModelFollowsArgmaxChain) {
  std::size_t cases = 0;
  for (std::uint64_t seed = 1; seed <= 80; ++seed) {
    Case c = random_case(seed, 8);
    for (double& v : c.model.param("output.weight").data()) v *= 200.0;
    for (double& v : c.model.param("output.bias").data()) v *= 200.0;
    const std::size_t max_len = resolve_max_len({}, c.src.size() - 1);
    const auto chain = greedy(c, max_len);
    // chain must hold more than half the probability mass
    if (chain.size() == max_len || sequence_log_prob(c, chain) <= std::log(0.5)) continue;
    ++cases;
    for (std::size_t k = 1; k <= 5; ++k) {
      BeamOptions opt;
      opt.beam_size = k;
      EXPECT_EQ(beam_search(c.model, c.src, c.feats, opt).tokens, chain) << seed << " beam " << k;
    }
  }
  EXPECT_GE(cases, 10u);
}

TEST(BeamSearch, NBestSortedAndBounded) {
  const Case c = random_case(3, 8);
  BeamOptions opt;
  opt.n_best = 3;
  const auto hyps = beam_search_nbest(c.model, c.src, c.feats, opt);
  ASSERT_FALSE(hyps.empty());
  EXPECT_LE(hyps.size(), 3u);
  for (std::size_t i = 1; i < hyps.size(); ++i) EXPECT_GE(hyps[i - 1].score, hyps[i].score);
}

TEST(BeamSearch, MaxLenForcesEos) {
  Case c = random_case(4, 8);
  for (double& v : c.model.param("output.bias").data()) v = 0.0;
  c.model.param("output.bias")[Vocab::kEos] = -50.0;
  BeamOptions opt;
  opt.max_len = 4;
  const Hypothesis h = beam_search(c.model, c.src, c.feats, opt);
  EXPECT_EQ(h.tokens.size(), 4u);
  EXPECT_EQ(h.tokens.back(), Vocab::kEos);
  EXPECT_TRUE(h.truncated);
  EXPECT_EQ(resolve_max_len({}, 7), 24u);
}

TEST(BeamSearch, LengthNormalizationScores) {
  EXPECT_EQ(hypothesis_score(-6.0, 3, 0.0), -6.0);
  EXPECT_DOUBLE_EQ(hypothesis_score(-6.0, 4, 1.0), -1.5);
  EXPECT_DOUBLE_EQ(hypothesis_score(-6.0, 4, 0.5), -3.0);
  const Case c = random_case(5, 8);
  BeamOptions opt;
  opt.length_norm = 0.7;
  const Hypothesis h = beam_search(c.model, c.src, c.feats, opt);
  EXPECT_DOUBLE_EQ(h.score, hypothesis_score(h.log_prob, h.tokens.size(), 0.7));
}

TEST(BeamSearch, RejectsEmptySource) {
  const Case c = random_case(1);
  const std::vector<int> eos = {Vocab::kEos}, none = {kNoFeature};
  EXPECT_THROW(beam_search(c.model, eos, none), UsageError);
  BeamOptions opt;
  opt.beam_size = 0;
  EXPECT_THROW(beam_search(c.model, c.src, c.feats, opt), UsageError);
}

TEST(Translator, FileRoundTrip) {
  const auto corpus = toy_corpus();
  ModelConfig cfg;
  cfg.char_embed = 8;
  cfg.feature_embed = 4;
  cfg.hidden = 8;
  cfg.src_vocab = corpus.src_vocab.size();
  cfg.tgt_vocab = corpus.tgt_vocab.size();
  const Model m(cfg, 2);
  BeamOptions opt;
  opt.max_len = 6;
  const Translator tr{m, corpus.src_vocab, corpus.tgt_vocab, bundled_table(), opt};
  TempDir dir("translate");
  write_file(dir / "empty.txt", "");
  EXPECT_EQ(translate_file(tr, dir / "empty.txt", dir / "empty.out"), 0u);
  EXPECT_EQ(read_file(dir / "empty.out"), "");

  write_file(dir / "in.txt", "鉄道\n\n未知の字Ω\n");
  EXPECT_EQ(translate_file(tr, dir / "in.txt", dir / "a.out"), 3u);
  EXPECT_EQ(translate_file(tr, dir / "in.txt", dir / "b.out"), 3u);
  const std::string a = read_file(dir / "a.out");
  EXPECT_EQ(a, read_file(dir / "b.out"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 3);
  EXPECT_EQ(a.substr(a.find('\n') + 1, 1), "\n");
}

}  // namespace
