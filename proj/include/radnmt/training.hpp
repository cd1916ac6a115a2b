#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "radnmt/checkpoint.hpp"
#include "radnmt/corpus.hpp"
#include "radnmt/model.hpp"

namespace radnmt {

enum class LrSchedule { Plateau, Fixed };

inline std::string_view to_string(LrSchedule s) { return s == LrSchedule::Plateau ? "plateau" : "fixed"; }

inline LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "plateau") return LrSchedule::Plateau;
  if (s == "fixed") return LrSchedule::Fixed;
  throw ConfigError("unknown lr schedule `" + std::string(s) + "` (expected plateau|fixed)");
}

struct TrainConfig {
  double lr_start = 1.0;
  double lr_decay = 0.5;
  LrSchedule schedule = LrSchedule::Plateau;
  /// Plateau: decay unless dev ppl improves on the best so far by more than this fraction.
  double plateau_tolerance = 0.001;
  /// Fixed: decay after every epoch starting at this one (1-based).
  std::size_t decay_start = 10;
  double max_norm = 1.0;
  std::size_t batch_size = 10;
  double dropout = 0.8;
  std::size_t epochs = 30;
  /// Stop after this many epochs without dev improvement; 0 disables.
  std::size_t early_stop = 5;
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_dir;
  /// Batches between progress log lines; 0 disables.
  std::size_t eval_every = 0;

  void validate() const {
    if (!(lr_start > 0)) throw ConfigError("lr must be > 0");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr_decay must be in (0, 1]");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(max_norm > 0)) throw ConfigError("max_norm must be > 0");
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_nll = 0.0;  // per target token
  double dev_ppl = 0.0;
  double lr = 0.0;         // rate used during the epoch
  double seconds = 0.0;    // wall time; excluded from equality
  std::size_t steps = 0;

  friend bool operator==(const EpochStats& a, const EpochStats& b) {
    return a.epoch == b.epoch && a.train_nll == b.train_nll && a.dev_ppl == b.dev_ppl && a.lr == b.lr &&
           a.steps == b.steps;
  }
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::vector<std::string> checkpoints;
  std::size_t steps = 0;
  double best_dev_ppl = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  friend bool operator==(const TrainReport&, const TrainReport&) = default;

  /// epoch, train_nll, dev_ppl, lr, seconds
  void write_tsv(std::ostream& out, bool with_time = true) const {
    out << "epoch\ttrain_nll\tdev_ppl\tlr\tseconds\n";
    char buf[160];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.3f\n", e.epoch, e.train_nll, e.dev_ppl, e.lr,
                    with_time ? e.seconds : 0.0);
      out << buf;
    }
  }
};

struct StepInfo {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double batch_nll = 0.0;
  std::size_t tokens = 0;
  double pre_clip_norm = 0.0;
  double post_clip_norm = 0.0;
};

struct TrainHooks {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(const EpochStats&)> on_epoch;
  std::ostream* log = nullptr;
};

/// p <- p - lr * g for every parameter. No momentum, no weight decay.
inline void sgd_step(std::span<const NamedParam> params, double lr) {
  for (const auto& p : params) {
    auto data = p.tensor->data();
    const auto grad = p.tensor->grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double v = data[i] - lr * grad[i];
      if (!std::isfinite(v)) throw NumericError("sgd_step: non-finite update in " + p.name);
      data[i] = v;
    }
  }
}

/// exp(total NLL / total target tokens) with dropout disabled.
inline double perplexity(const Model& model, std::span<const ExamplePair> data, std::size_t batch_size = 10) {
  if (data.empty()) throw DataError("perplexity: empty dataset");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const Batch& b : batches_in_order(data, batch_size)) {
    const auto [n, t] = evaluate_loss(model, b);
    nll += n;
    tokens += t;
  }
  return std::exp(nll / static_cast<double>(tokens));
}

/// Training batches of one epoch, reshuffled from a (seed, epoch) stream.
inline std::vector<Batch> epoch_batches(std::span<const ExamplePair> train, const TrainConfig& cfg, std::size_t epoch) {
  return make_batches(train, cfg.batch_size, Rng::derive(cfg.seed, epoch).next());
}

/// Plain SGD over mini-batches: forward (train mode) -> backward on the
/// per-sentence mean loss -> global-norm clipping -> update. After each epoch:
/// dev perplexity, learning-rate schedule, checkpoint.
inline TrainReport train(const TrainConfig& cfg, std::span<const ExamplePair> train_set,
                         std::span<const ExamplePair> dev_set, Model& model, const Vocab& src_vocab,
                         const Vocab& tgt_vocab, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (dev_set.empty()) throw DataError("train: empty dev set");
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  TrainReport report;
  double lr = cfg.lr_start;
  std::size_t stale = 0;
  model.set_requires_grad(true);
  const auto params = model.parameters();
  const auto tensors = model.tensors();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng dropout_rng = Rng::derive(cfg.seed ^ 0xD80D80ULL, epoch);
    const Dropout dropout{cfg.dropout, &dropout_rng};
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    for (const Batch& batch : epoch_batches(train_set, cfg, epoch)) {
      model.zero_grad();
      Tape tape;
      const BoundModel bound = bind(tape, model);
      const LossResult loss = forward_loss(bound, batch, dropout);
      const double nll = loss.total.value()[0];
      tape.backward(scale(loss.total, 1.0 / static_cast<double>(batch.rows)));
      StepInfo info;
      info.step = ++report.steps;
      info.epoch = epoch;
      info.batch_nll = nll;
      info.tokens = loss.tokens;
      info.pre_clip_norm = clip_by_global_norm(tensors, cfg.max_norm);
      info.post_clip_norm = global_grad_norm(tensors);
      sgd_step(params, lr);
      epoch_nll += nll;
      epoch_tokens += loss.tokens;
      ++stats.steps;
      if (hooks.on_step) hooks.on_step(info);
      if (hooks.log && cfg.eval_every && info.step % cfg.eval_every == 0)
        *hooks.log << "step " << info.step << " nll/token " << nll / static_cast<double>(loss.tokens) << " norm "
                   << info.pre_clip_norm << '\n';
    }
    stats.train_nll = epoch_nll / static_cast<double>(epoch_tokens);
    stats.dev_ppl = perplexity(model, dev_set, cfg.batch_size);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const bool improved = stats.dev_ppl < report.best_dev_ppl * (1.0 - cfg.plateau_tolerance);
    if (stats.dev_ppl < report.best_dev_ppl) {
      report.best_dev_ppl = stats.dev_ppl;
      report.best_epoch = epoch;
    }
    stale = improved ? 0 : stale + 1;
    if (cfg.schedule == LrSchedule::Plateau ? !improved : epoch >= cfg.decay_start) lr *= cfg.lr_decay;

    if (!cfg.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch%03zu.rnmt", epoch);
      Checkpoint ckpt{model, src_vocab, tgt_vocab, {{"epoch", epoch}, {"dev_ppl", stats.dev_ppl}}};
      save_checkpoint(cfg.checkpoint_dir / name, ckpt);
      report.checkpoints.emplace_back(name);
      if (report.best_epoch == epoch) save_checkpoint(cfg.checkpoint_dir / "best.rnmt", ckpt);
    }
    if (hooks.log)
      *hooks.log << "epoch " << epoch << " train_nll " << stats.train_nll << " dev_ppl " << stats.dev_ppl << " lr "
                 << stats.lr << " (" << stats.seconds << "s)\n";
    report.epochs.push_back(stats);
    if (hooks.on_epoch) hooks.on_epoch(stats);
    if (cfg.early_stop && stale >= cfg.early_stop) break;
  }
  return report;
}

}  // namespace radnmt
