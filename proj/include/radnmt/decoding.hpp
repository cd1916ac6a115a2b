#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "radnmt/corpus.hpp"
#include "radnmt/model.hpp"
#include "radnmt/radicals.hpp"
#include "radnmt/utf8.hpp"

namespace radnmt {

struct Hypothesis {
  std::vector<int> tokens;  // emitted ids, EOS last when finished
  double log_prob = 0.0;
  double score = 0.0;
  HypothesisState state;
  bool finished = false;
  /// EOS was forced because max_len was reached.
  bool truncated = false;
};

struct BeamOptions {
  std::size_t beam_size = 5;
  /// Maximum emitted tokens including EOS; 0 means 2 * source length + 10.
  std::size_t max_len = 0;
  /// score = log_prob / length^alpha
  double length_norm = 0.0;
  std::size_t n_best = 1;
};

inline double hypothesis_score(double log_prob, std::size_t length, double alpha) {
  if (alpha == 0.0) return log_prob;
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), alpha);
}

inline std::size_t resolve_max_len(const BeamOptions& opt, std::size_t source_chars) {
  return opt.max_len ? opt.max_len : 2 * source_chars + 10;
}

namespace detail {

inline bool emittable(int token) { return token != Vocab::kPad && token != Vocab::kBos; }

/// Higher score first, then lower token id, then earlier parent.
struct Candidate {
  double score;
  double log_prob;
  int token;
  std::size_t parent;
};

inline bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.token != b.token) return a.token < b.token;
  return a.parent < b.parent;
}

inline bool better_finished(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace detail

/// Beam search over `src_ids` (EOS-terminated) and aligned features. Returns
/// completed hypotheses best first, at most n_best of them.
inline std::vector<Hypothesis> beam_search_nbest(const Model& model, std::span<const int> src_ids,
                                                 std::span<const int> feat_ids, const BeamOptions& opt = {}) {
  if (src_ids.empty() || (src_ids.size() == 1 && src_ids[0] == Vocab::kEos))
    throw UsageError("beam_search: empty source");
  if (opt.beam_size < 1) throw UsageError("beam_search: beam size must be >= 1");
  const std::size_t source_chars = src_ids.back() == Vocab::kEos ? src_ids.size() - 1 : src_ids.size();
  const std::size_t max_len = resolve_max_len(opt, source_chars);
  if (max_len < 1) throw UsageError("beam_search: max_len must be >= 1");

  const EncodedSource src = encode_source(model, src_ids, feat_ids);
  std::vector<Hypothesis> live(1);
  live[0].state = initial_state(src);
  std::vector<Hypothesis> done;

  for (std::size_t step = 1; step <= max_len && !live.empty(); ++step) {
    const bool last = step == max_len;
    std::vector<detail::Candidate> cands;
    std::vector<HypothesisState> next_states;
    for (std::size_t k = 0; k < live.size(); ++k) {
      const Hypothesis& h = live[k];
      const int prev = h.tokens.empty() ? Vocab::kBos : h.tokens.back();
      StepScores s = score_step(model, src, h.state, prev);
      next_states.push_back(std::move(s.next));
      for (std::size_t v = 0; v < s.log_probs.size(); ++v) {
        const int tok = static_cast<int>(v);
        if (!detail::emittable(tok) || (last && tok != Vocab::kEos)) continue;
        const double lp = h.log_prob + s.log_probs[v];
        cands.push_back({hypothesis_score(lp, h.tokens.size() + 1, opt.length_norm), lp, tok, k});
      }
    }
    const std::size_t keep = std::min(opt.beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), detail::better);
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const detail::Candidate& c = cands[i];
      Hypothesis h;
      h.tokens = live[c.parent].tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      h.score = c.score;
      h.state = next_states[c.parent];
      if (c.token == Vocab::kEos) {
        h.finished = true;
        h.truncated = last;
        done.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    // alpha = 0: stop once a finished hypothesis beats every live one
    if (opt.length_norm == 0.0 && !done.empty() && !live.empty()) {
      const double best_done =
          std::max_element(done.begin(), done.end(), [](auto& a, auto& b) { return a.score < b.score; })->score;
      if (best_done > live.front().score) live.clear();
    }
  }
  std::stable_sort(done.begin(), done.end(), detail::better_finished);
  if (done.size() > std::max<std::size_t>(opt.n_best, 1)) done.resize(std::max<std::size_t>(opt.n_best, 1));
  return done;
}

inline Hypothesis beam_search(const Model& model, std::span<const int> src_ids, std::span<const int> feat_ids,
                              const BeamOptions& opt = {}) {
  return beam_search_nbest(model, src_ids, feat_ids, opt).front();
}

/// Target text of a hypothesis without EOS.
inline std::string hypothesis_text(const Hypothesis& h, const Vocab& tgt_vocab, std::string_view unk = "<unk>") {
  std::vector<int> ids;
  for (int t : h.tokens)
    if (t != Vocab::kEos) ids.push_back(t);
  return tgt_vocab.decode(ids, unk);
}

struct Translator {
  const Model& model;
  const Vocab& src_vocab;
  const Vocab& tgt_vocab;
  const RadicalTable& table;
  BeamOptions options;
  std::string unk_placeholder = "<unk>";

  /// Empty input yields empty output.
  std::string translate(std::u32string_view sentence) const {
    if (sentence.empty()) return {};
    std::vector<int> ids, feats;
    encode_source(sentence, src_vocab, table, ids, feats);
    return hypothesis_text(beam_search(model, ids, feats, options), tgt_vocab, unk_placeholder);
  }
};

/// One output line per input line, in order. Returns the number of lines written.
inline std::size_t translate_file(const Translator& tr, const std::filesystem::path& input,
                                  const std::filesystem::path& output) {
  const auto lines = read_lines(input);
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + output.string());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out << tr.translate(lines[i]) << '\n';
    } catch (const UsageError& e) {
      throw DataError(input.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (!out) throw DataError("write failed: " + output.string());
  return lines.size();
}

}  // namespace radnmt
