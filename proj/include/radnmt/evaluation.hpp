#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "radnmt/decoding.hpp"
#include "radnmt/training.hpp"

namespace radnmt {

enum class Tokenization { Char, Whitespace };

inline std::string_view to_string(Tokenization t) { return t == Tokenization::Char ? "char" : "whitespace"; }

inline Tokenization parse_tokenization(std::string_view s) {
  if (s == "char") return Tokenization::Char;
  if (s == "whitespace") return Tokenization::Whitespace;
  throw ConfigError("unknown tokenization `" + std::string(s) + "` (expected char|whitespace)");
}

inline std::vector<std::u32string> tokenize(std::u32string_view line, Tokenization mode) {
  std::vector<std::u32string> out;
  auto space = [](char32_t c) { return c == U' ' || c == U'\t' || c == U'　' || c == U'\r' || c == U'\n'; };
  if (mode == Tokenization::Char) {
    for (char32_t c : line)
      if (!space(c)) out.emplace_back(1, c);
    return out;
  }
  std::u32string cur;
  for (char32_t c : line) {
    if (space(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline constexpr std::size_t kBleuOrder = 4;

struct BleuReport {
  double bleu = 0.0;  // 0..100
  std::array<double, kBleuOrder> precisions{};
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  double brevity_penalty = 0.0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  Tokenization tokenization = Tokenization::Char;
  bool smoothed = false;
};

/// Corpus BLEU-4: clipped n-gram counts pooled over all sentences, geometric
/// mean of p_1..p_4, BP = min(1, exp(1 - r/c)).
inline BleuReport bleu(std::span<const std::u32string> hyps, std::span<const std::u32string> refs,
                       Tokenization mode = Tokenization::Char, bool smooth = false) {
  if (hyps.size() != refs.size())
    throw DataError("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " + std::to_string(refs.size()) +
                    " references");
  BleuReport r;
  r.tokenization = mode;
  r.smoothed = smooth;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = tokenize(hyps[s], mode);
    const auto ref = tokenize(refs[s], mode);
    r.hyp_len += h.size();
    r.ref_len += ref.size();
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
      std::map<std::vector<std::u32string>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        r.matches[n - 1] += std::min(count, it == ref_counts.end() ? 0 : it->second);
        r.totals[n - 1] += count;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    const double m = static_cast<double>(r.matches[n]) + (smooth ? 1.0 : 0.0);
    const double t = static_cast<double>(r.totals[n]) + (smooth ? 1.0 : 0.0);
    r.precisions[n] = t > 0 ? m / t : 0.0;
    if (r.precisions[n] == 0.0)
      zero = true;
    else
      log_sum += std::log(r.precisions[n]);
  }
  if (r.hyp_len == 0)
    r.brevity_penalty = 0.0;
  else
    r.brevity_penalty =
        std::min(1.0, std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.hyp_len)));
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / static_cast<double>(kBleuOrder));
  return r;
}

struct EvalExample {
  std::u32string source;
  std::u32string reference;
  std::string hypothesis;
};

struct EvalReport {
  double ppl = 0.0;
  BleuReport bleu;
  std::vector<EvalExample> examples;
  std::size_t sentences = 0;

  void write_metrics_tsv(std::ostream& out) const {
    char buf[96];
    out << "metric\tvalue\n";
    auto row = [&](const char* name, double v) {
      std::snprintf(buf, sizeof buf, "%s\t%.6f\n", name, v);
      out << buf;
    };
    row("ppl", ppl);
    row("bleu", bleu.bleu);
    for (std::size_t n = 0; n < kBleuOrder; ++n) {
      const std::string name = "p" + std::to_string(n + 1);
      row(name.c_str(), bleu.precisions[n]);
    }
    row("brevity_penalty", bleu.brevity_penalty);
    out << "hyp_len\t" << bleu.hyp_len << "\nref_len\t" << bleu.ref_len << "\nsentences\t" << sentences
        << "\ntokenization\t" << to_string(bleu.tokenization) << '\n';
  }

  /// Source / reference / hypothesis blocks.
  void write_examples(std::ostream& out) const {
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto& e = examples[i];
      out << "# " << (i + 1) << "\nSRC\t" << utf8::encode(e.source) << "\nREF\t" << utf8::encode(e.reference)
          << "\nHYP\t" << e.hypothesis << "\n\n";
    }
  }
};

struct EvalOptions {
  BeamOptions beam;
  Tokenization tokenization = Tokenization::Char;
  bool smooth = false;
  std::size_t batch_size = 10;
  std::string unk_placeholder = "<unk>";
};

/// Teacher-forced perplexity plus beam translation and BLEU over a test set.
inline EvalReport evaluate(const Model& model, const Vocab& src_vocab, const Vocab& tgt_vocab,
                           const RadicalTable& table, std::span<const RawPair> test, const EvalOptions& opt = {}) {
  if (test.empty()) throw DataError("evaluate: empty test set");
  EvalReport report;
  report.sentences = test.size();
  const auto encoded = encode_corpus(test, src_vocab, tgt_vocab, table);
  report.ppl = perplexity(model, encoded, opt.batch_size);
  const Translator tr{model, src_vocab, tgt_vocab, table, opt.beam, opt.unk_placeholder};
  std::vector<std::u32string> hyps, refs;
  for (const auto& p : test) {
    std::string out = tr.translate(p.src);
    hyps.push_back(utf8::decode(out));
    refs.push_back(p.tgt);
    report.examples.push_back({p.src, p.tgt, std::move(out)});
  }
  report.bleu = bleu(hyps, refs, opt.tokenization, opt.smooth);
  return report;
}

}  // namespace radnmt
