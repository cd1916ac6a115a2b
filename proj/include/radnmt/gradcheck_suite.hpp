#pragma once

#include <cstdint>
#include <vector>

#include "radnmt/corpus.hpp"
#include "radnmt/gradcheck.hpp"
#include "radnmt/model.hpp"

namespace radnmt {

/// A tiny model and a two-sentence batch drawn from one seed. Parameters are
/// uniform in [-init_range, init_range).
struct GradCheckFixture {
  Model model;
  std::vector<ExamplePair> pairs;
  double dropout = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr double kGradCheckInitRange = 1.0;
inline constexpr double kGradCheckEps = 1e-4;

inline GradCheckFixture make_grad_check_fixture(std::uint64_t seed, AttentionKind attention = AttentionKind::General,
                                                double dropout = 0.0, double init_range = kGradCheckInitRange) {
  Rng rng = Rng::derive(seed, 0x6C);
  ModelConfig cfg;
  cfg.char_embed = 4;
  cfg.feature_embed = 2;
  cfg.hidden = 4;
  cfg.src_vocab = 6 + rng.index(3);
  cfg.tgt_vocab = 6 + rng.index(3);
  cfg.attention = attention;
  GradCheckFixture f{Model(cfg, seed), {}, dropout, seed};
  Rng init = Rng::derive(seed, 0x1A);
  for (Tensor* t : f.model.tensors())
    for (double& v : t->data()) v = init.uniform(-init_range, init_range);
  for (int s = 0; s < 2; ++s) {
    ExamplePair ex;
    const std::size_t src_len = 1 + rng.index(3), tgt_len = 1 + rng.index(3);
    for (std::size_t i = 0; i < src_len; ++i) {
      ex.src_chars.push_back(Vocab::kUnk + static_cast<int>(rng.index(cfg.src_vocab - Vocab::kUnk)));
      ex.src_feats.push_back(1 + static_cast<int>(rng.index(RadicalId::kCount)));
    }
    ex.src_chars.push_back(Vocab::kEos);
    ex.src_feats.push_back(kNoFeature);
    ex.tgt_chars.push_back(Vocab::kBos);
    for (std::size_t i = 0; i < tgt_len; ++i)
      ex.tgt_chars.push_back(Vocab::kUnk + static_cast<int>(rng.index(cfg.tgt_vocab - Vocab::kUnk)));
    ex.tgt_chars.push_back(Vocab::kEos);
    f.pairs.push_back(std::move(ex));
  }
  return f;
}

/// Gradient check of the batch NLL with respect to every model parameter.
inline GradCheckResult run_model_grad_check(GradCheckFixture& f, double eps = kGradCheckEps) {
  const Batch batch = make_batch(f.pairs);
  Model& model = f.model;
  const double p = f.dropout;
  const std::uint64_t seed = f.seed;
  LossFn loss = [&model, &batch, p, seed](Tape& tape) {
    Rng rng = Rng::derive(seed, 0xD0);
    const Dropout dropout{p, &rng};
    return forward_loss(bind(tape, model), batch, dropout).total;
  };
  const auto params = model.parameters();
  return grad_check(loss, params, eps);
}

}  // namespace radnmt
