#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "radnmt/error.hpp"
#include "radnmt/radicals.hpp"
#include "radnmt/rng.hpp"
#include "radnmt/utf8.hpp"

namespace radnmt {

/// Character inventory with four reserved ids.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocab() = default;

  /// Characters with frequency >= min_count, most frequent first, ties by codepoint.
  /// `max_size` bounds the total size including the reserved ids.
  static Vocab build(std::span<const std::u32string> sentences, std::size_t min_count = 1,
                     std::optional<std::size_t> max_size = std::nullopt) {
    std::map<char32_t, std::size_t> counts;
    for (const auto& s : sentences)
      for (char32_t c : s) ++counts[c];
    std::vector<std::pair<char32_t, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<char32_t> chars;
    for (const auto& [c, n] : ranked) {
      if (n < min_count) continue;
      if (max_size && chars.size() + kReserved >= *max_size) break;
      chars.push_back(c);
    }
    return Vocab(std::move(chars));
  }

  explicit Vocab(std::vector<char32_t> chars) : chars_(std::move(chars)) {
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      if (!ids_.emplace(chars_[i], static_cast<int>(i) + kReserved).second)
        throw ValidationError("duplicate vocabulary character U+" + hex(chars_[i]));
    }
  }

  std::size_t size() const noexcept { return chars_.size() + kReserved; }

  /// Id of `c`, or UNK.
  int id(char32_t c) const {
    auto it = ids_.find(c);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(char32_t c) const { return ids_.contains(c); }

  static bool is_reserved(int id) noexcept { return id >= 0 && id < kReserved; }

  /// Character of a non-reserved id.
  char32_t character(int id) const {
    if (id < kReserved || static_cast<std::size_t>(id) >= size())
      throw ValidationError("vocabulary id " + std::to_string(id) + " has no character");
    return chars_[static_cast<std::size_t>(id - kReserved)];
  }

  std::span<const char32_t> characters() const noexcept { return chars_; }

  /// Ids back to text. Reserved ids are skipped, except UNK which renders as `unk`.
  std::string decode(std::span<const int> ids, std::string_view unk = "") const {
    std::string out;
    for (int id : ids) {
      if (id == kUnk) {
        out += unk;
      } else if (!is_reserved(id)) {
        utf8::append(out, character(id));
      }
    }
    return out;
  }

  static const char* reserved_name(int id) {
    static constexpr const char* kNames[] = {"<pad>", "<s>", "</s>", "<unk>"};
    return kNames[id];
  }

  /// `id<TAB>char` per line. Whitespace and control characters are written as U+XXXX.
  void save(std::ostream& out) const {
    for (int i = 0; i < kReserved; ++i) out << i << '\t' << reserved_name(i) << '\n';
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      out << i + kReserved << '\t';
      const char32_t c = chars_[i];
      if (needs_escape(c))
        out << "U+" << hex(c);
      else
        out << utf8::encode(c);
      out << '\n';
    }
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary " + path.string());
    save(out);
  }

  static Vocab load(std::istream& in, const std::string& name = "<vocab>") {
    std::vector<char32_t> chars;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError(name, lineno, "expected `id<TAB>char`");
      int id = -1;
      auto [p, ec] = std::from_chars(line.data(), line.data() + tab, id);
      if (ec != std::errc{} || p != line.data() + tab)
        throw ParseError(name, lineno, "bad id `" + line.substr(0, tab) + "`");
      if (id != static_cast<int>(lineno) - 1) throw ParseError(name, lineno, "ids must be consecutive from 0");
      const std::string field = line.substr(tab + 1);
      if (id < kReserved) {
        if (field != reserved_name(id))
          throw ParseError(name, lineno, std::string("expected reserved token ") + reserved_name(id));
        continue;
      }
      std::u32string decoded;
      try {
        decoded = utf8::decode(field);
      } catch (const DataError& e) {
        throw ParseError(name, lineno, e.what());
      }
      if (decoded.size() == 1) {
        chars.push_back(decoded[0]);
      } else if (field.size() > 2 && field.starts_with("U+")) {
        std::uint32_t cp = 0;
        auto [q, e2] = std::from_chars(field.data() + 2, field.data() + field.size(), cp, 16);
        if (e2 != std::errc{} || q != field.data() + field.size() || !utf8::is_scalar_value(cp))
          throw ParseError(name, lineno, "bad escaped character `" + field + "`");
        chars.push_back(cp);
      } else {
        throw ParseError(name, lineno, "expected a single character");
      }
    }
    if (lineno < kReserved) throw ParseError(name, lineno, "vocabulary is missing reserved entries");
    return Vocab(std::move(chars));
  }

  static Vocab load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary " + path.string());
    return load(in, path.string());
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.chars_ == b.chars_; }

 private:
  static bool needs_escape(char32_t c) { return c <= 0x20 || c == 0x7F || (c >= 0x80 && c <= 0xA0); }

  static std::string hex(char32_t c) {
    char buf[12];
    std::snprintf(buf, sizeof buf, "%04X", static_cast<unsigned>(c));
    return buf;
  }

  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> ids_;
};

/// One aligned sentence pair as decoded text.
struct RawPair {
  std::u32string src;
  std::u32string tgt;
};

/// Reads every line of a UTF-8 file. A trailing newline does not add an empty line.
inline std::vector<std::u32string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::u32string> lines;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t raw = line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    try {
      lines.push_back(utf8::decode(line, offset));
    } catch (const DataError& e) {
      throw DataError(path.string() + ": " + e.what());
    }
    offset += raw;
  }
  return lines;
}

/// Line i of each file forms pair i.
inline std::vector<RawPair> read_parallel(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path) {
  auto src = read_lines(src_path);
  auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size())
    throw DataError("parallel corpus line-count mismatch: " + std::to_string(src.size()) + " vs " +
                    std::to_string(tgt.size()) + " (" + src_path.string() + ", " + tgt_path.string() + ")");
  std::vector<RawPair> pairs;
  pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) pairs.push_back({std::move(src[i]), std::move(tgt[i])});
  return pairs;
}

/// Feature id carried at EOS and PAD positions; real radicals use 1..214.
inline constexpr int kNoFeature = 0;
inline constexpr int kFeatureVocabSize = RadicalId::kCount + 1;

struct ExamplePair {
  std::vector<int> src_chars;  // ..., EOS
  std::vector<int> src_feats;  // aligned; kNoFeature at EOS
  std::vector<int> tgt_chars;  // BOS, ..., EOS
};

/// Source ids and features for translation (no target side).
inline void encode_source(std::u32string_view src, const Vocab& vocab, const RadicalTable& table,
                          std::vector<int>& ids, std::vector<int>& feats) {
  ids.clear();
  feats.clear();
  for (char32_t c : src) {
    ids.push_back(vocab.id(c));
    feats.push_back(table.radical_of(c).index());
  }
  ids.push_back(Vocab::kEos);
  feats.push_back(kNoFeature);
}

inline ExamplePair encode_pair(std::u32string_view src, std::u32string_view tgt, const Vocab& src_vocab,
                               const Vocab& tgt_vocab, const RadicalTable& table) {
  ExamplePair ex;
  encode_source(src, src_vocab, table, ex.src_chars, ex.src_feats);
  ex.tgt_chars.reserve(tgt.size() + 2);
  ex.tgt_chars.push_back(Vocab::kBos);
  for (char32_t c : tgt) ex.tgt_chars.push_back(tgt_vocab.id(c));
  ex.tgt_chars.push_back(Vocab::kEos);
  return ex;
}

/// Padded B x L grids, row-major. Masks are 1 on real positions.
struct Batch {
  std::size_t rows = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src;
  std::vector<int> feats;
  std::vector<std::uint8_t> src_mask;
  std::vector<int> tgt;
  std::vector<std::uint8_t> tgt_mask;

  int src_at(std::size_t i, std::size_t j) const { return src[i * src_len + j]; }
  int feat_at(std::size_t i, std::size_t j) const { return feats[i * src_len + j]; }
  bool src_real(std::size_t i, std::size_t j) const { return src_mask[i * src_len + j] != 0; }
  int tgt_at(std::size_t i, std::size_t j) const { return tgt[i * tgt_len + j]; }
  bool tgt_real(std::size_t i, std::size_t j) const { return tgt_mask[i * tgt_len + j] != 0; }

  /// Column j of the source grid (one id per row).
  std::vector<int> src_column(std::size_t j) const { return column(src, src_len, j); }
  std::vector<int> feat_column(std::size_t j) const { return column(feats, src_len, j); }
  std::vector<std::uint8_t> src_mask_column(std::size_t j) const { return column(src_mask, src_len, j); }
  std::vector<int> tgt_column(std::size_t j) const { return column(tgt, tgt_len, j); }
  std::vector<std::uint8_t> tgt_mask_column(std::size_t j) const { return column(tgt_mask, tgt_len, j); }

  /// Number of predicted target tokens (everything real after BOS).
  std::size_t target_tokens() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 1; j < tgt_len; ++j) n += tgt_real(i, j);
    return n;
  }

 private:
  template <class T>
  std::vector<T> column(const std::vector<T>& grid, std::size_t width, std::size_t j) const {
    std::vector<T> out(rows);
    for (std::size_t i = 0; i < rows; ++i) out[i] = grid[i * width + j];
    return out;
  }
};

/// Pads a group of examples into one batch, preserving their order.
/// `min_src_len` / `min_tgt_len` force extra PAD columns.
inline Batch make_batch(std::span<const ExamplePair* const> group, std::size_t min_src_len = 0,
                        std::size_t min_tgt_len = 0) {
  Batch b;
  b.rows = group.size();
  b.src_len = min_src_len;
  b.tgt_len = min_tgt_len;
  for (const auto* ex : group) {
    b.src_len = std::max(b.src_len, ex->src_chars.size());
    b.tgt_len = std::max(b.tgt_len, ex->tgt_chars.size());
  }
  b.src.assign(b.rows * b.src_len, Vocab::kPad);
  b.feats.assign(b.rows * b.src_len, kNoFeature);
  b.src_mask.assign(b.rows * b.src_len, 0);
  b.tgt.assign(b.rows * b.tgt_len, Vocab::kPad);
  b.tgt_mask.assign(b.rows * b.tgt_len, 0);
  for (std::size_t i = 0; i < b.rows; ++i) {
    const auto& ex = *group[i];
    for (std::size_t j = 0; j < ex.src_chars.size(); ++j) {
      b.src[i * b.src_len + j] = ex.src_chars[j];
      b.feats[i * b.src_len + j] = ex.src_feats[j];
      b.src_mask[i * b.src_len + j] = 1;
    }
    for (std::size_t j = 0; j < ex.tgt_chars.size(); ++j) {
      b.tgt[i * b.tgt_len + j] = ex.tgt_chars[j];
      b.tgt_mask[i * b.tgt_len + j] = 1;
    }
  }
  return b;
}

inline Batch make_batch(std::span<const ExamplePair> examples) {
  std::vector<const ExamplePair*> group;
  for (const auto& ex : examples) group.push_back(&ex);
  return make_batch(group);
}

/// Shuffles with `seed`, groups similar source lengths, cuts groups of at most
/// `batch_size`, then shuffles the batch order.
inline std::vector<Batch> make_batches(std::span<const ExamplePair> pairs, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw UsageError("batch_size must be >= 1");
  std::vector<const ExamplePair*> order;
  order.reserve(pairs.size());
  for (const auto& p : pairs) order.push_back(&p);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const ExamplePair* a, const ExamplePair* b) { return a->src_chars.size() < b->src_chars.size(); });
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    batches.push_back(make_batch(std::span(order).subspan(start, n)));
  }
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

/// Consecutive batches in corpus order, for evaluation.
inline std::vector<Batch> batches_in_order(std::span<const ExamplePair> pairs, std::size_t batch_size) {
  if (batch_size == 0) throw UsageError("batch_size must be >= 1");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    std::vector<const ExamplePair*> group;
    for (std::size_t i = start; i < std::min(pairs.size(), start + batch_size); ++i) group.push_back(&pairs[i]);
    batches.push_back(make_batch(group));
  }
  return batches;
}

/// Drops pairs whose source or target exceeds `max_chars`; returns how many were dropped.
inline std::size_t drop_long_pairs(std::vector<RawPair>& pairs, std::size_t max_chars) {
  const auto before = pairs.size();
  std::erase_if(pairs, [&](const RawPair& p) { return p.src.size() > max_chars || p.tgt.size() > max_chars; });
  return before - pairs.size();
}

inline std::vector<ExamplePair> encode_corpus(std::span<const RawPair> pairs, const Vocab& src_vocab,
                                              const Vocab& tgt_vocab, const RadicalTable& table) {
  std::vector<ExamplePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p.src, p.tgt, src_vocab, tgt_vocab, table));
  return out;
}

}  // namespace radnmt
