#pragma once

#include <array>
#include <charconv>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "radnmt/error.hpp"
#include "radnmt/utf8.hpp"

namespace radnmt {

/// One of the 214 Kangxi radicals, numbered in stroke-count order.
class RadicalId {
 public:
  static constexpr int kCount = 214;

  constexpr RadicalId() = default;
  constexpr explicit RadicalId(int index) : index_(index) {
    if (index < 1 || index > kCount) throw ValidationError("radical index out of 1..214: " + std::to_string(index));
  }

  constexpr int index() const noexcept { return index_; }

  /// Glyph in the Kangxi Radicals block (U+2F00..U+2FD5).
  constexpr char32_t glyph() const noexcept { return static_cast<char32_t>(0x2F00 + index_ - 1); }

  /// Equivalent CJK unified ideograph, e.g. 金 for #167.
  constexpr char32_t unified() const noexcept;

  friend constexpr auto operator<=>(RadicalId, RadicalId) = default;

 private:
  int index_ = 1;
};

namespace detail {

// Unified ideograph for each Kangxi radical 1..214 (CJKRadicals.txt).
inline constexpr std::array<char32_t, RadicalId::kCount> kRadicalUnified = {
    0x4E00, 0x4E28, 0x4E36, 0x4E3F, 0x4E59, 0x4E85, 0x4E8C, 0x4EA0, 0x4EBA, 0x513F,
    0x5165, 0x516B, 0x5182, 0x5196, 0x51AB, 0x51E0, 0x51F5, 0x5200, 0x529B, 0x52F9,
    0x5315, 0x531A, 0x5338, 0x5341, 0x535C, 0x5369, 0x5382, 0x53B6, 0x53C8, 0x53E3,
    0x56D7, 0x571F, 0x58EB, 0x5902, 0x590A, 0x5915, 0x5927, 0x5973, 0x5B50, 0x5B80,
    0x5BF8, 0x5C0F, 0x5C22, 0x5C38, 0x5C6E, 0x5C71, 0x5DDB, 0x5DE5, 0x5DF1, 0x5DFE,
    0x5E72, 0x5E7A, 0x5E7F, 0x5EF4, 0x5EFE, 0x5F0B, 0x5F13, 0x5F50, 0x5F61, 0x5F73,
    0x5FC3, 0x6208, 0x6236, 0x624B, 0x652F, 0x6534, 0x6587, 0x6597, 0x65A4, 0x65B9,
    0x65E0, 0x65E5, 0x66F0, 0x6708, 0x6728, 0x6B20, 0x6B62, 0x6B79, 0x6BB3, 0x6BCB,
    0x6BD4, 0x6BDB, 0x6C0F, 0x6C14, 0x6C34, 0x706B, 0x722A, 0x7236, 0x723B, 0x723F,
    0x7247, 0x7259, 0x725B, 0x72AC, 0x7384, 0x7389, 0x74DC, 0x74E6, 0x7518, 0x751F,
    0x7528, 0x7530, 0x758B, 0x7592, 0x7676, 0x767D, 0x76AE, 0x76BF, 0x76EE, 0x77DB,
    0x77E2, 0x77F3, 0x793A, 0x79B8, 0x79BE, 0x7A74, 0x7ACB, 0x7AF9, 0x7C73, 0x7CF8,
    0x7F36, 0x7F51, 0x7F8A, 0x7FBD, 0x8001, 0x800C, 0x8012, 0x8033, 0x807F, 0x8089,
    0x81E3, 0x81EA, 0x81F3, 0x81FC, 0x820C, 0x821B, 0x821F, 0x826E, 0x8272, 0x8278,
    0x864D, 0x866B, 0x8840, 0x884C, 0x8863, 0x897E, 0x898B, 0x89D2, 0x8A00, 0x8C37,
    0x8C46, 0x8C55, 0x8C78, 0x8C9D, 0x8D64, 0x8D70, 0x8DB3, 0x8EAB, 0x8ECA, 0x8F9B,
    0x8FB0, 0x8FB5, 0x9091, 0x9149, 0x91C6, 0x91CC, 0x91D1, 0x9577, 0x9580, 0x961C,
    0x96B6, 0x96B9, 0x96E8, 0x9751, 0x975E, 0x9762, 0x9769, 0x97CB, 0x97ED, 0x97F3,
    0x9801, 0x98A8, 0x98DB, 0x98DF, 0x9996, 0x9999, 0x99AC, 0x9AA8, 0x9AD8, 0x9ADF,
    0x9B25, 0x9B2F, 0x9B32, 0x9B3C, 0x9B5A, 0x9CE5, 0x9E75, 0x9E7F, 0x9EA5, 0x9EBB,
    0x9EC3, 0x9ECD, 0x9ED1, 0x9EF9, 0x9EFD, 0x9F0E, 0x9F13, 0x9F20, 0x9F3B, 0x9F4A,
    0x9F52, 0x9F8D, 0x9F9C, 0x9FA0,
};

}  // namespace detail

constexpr char32_t RadicalId::unified() const noexcept { return detail::kRadicalUnified[index_ - 1]; }

using FeatureSeq = std::vector<RadicalId>;

/// Which assignment rule produced a radical.
enum class RadicalRule { Han, Kana, Numeral, Latin, Symbol, UnknownHan };

struct RadicalResolution {
  RadicalId radical;
  RadicalRule rule;
};

/// True for codepoints in the CJK ideograph blocks and the ideographic planes.
constexpr bool is_han_codepoint(char32_t c) noexcept {
  return (c >= 0x2E80 && c <= 0x2FDF)      // radical blocks
         || (c >= 0x3400 && c <= 0x4DBF)   // extension A
         || (c >= 0x4E00 && c <= 0x9FFF)   // unified ideographs
         || (c >= 0xF900 && c <= 0xFAFF)   // compatibility ideographs
         || (c >= 0x20000 && c <= 0x3FFFF);  // SIP and TIP
}

constexpr bool is_kana_codepoint(char32_t c) noexcept {
  return (c >= 0x3041 && c <= 0x3096) || (c >= 0x30A1 && c <= 0x30FA);
}

/// Folds fullwidth ASCII variants (U+FF01..U+FF5E) onto ASCII.
constexpr char32_t fold_fullwidth(char32_t c) noexcept {
  return (c >= 0xFF01 && c <= 0xFF5E) ? c - 0xFEE0 : c;
}

/// Character to Kangxi radical mapping with the rules for kana, digits,
/// Latin letters and symbols. Immutable after loading.
class RadicalTable {
 public:
  /// Loads the Han table (`U+XXXX<TAB>index`) and the kana table
  /// (`kana<TAB>source kanji`).
  static RadicalTable load(const std::filesystem::path& han_path, const std::filesystem::path& kana_path) {
    std::ifstream han(han_path, std::ios::binary);
    if (!han) throw DataError("cannot open Han radical table " + han_path.string());
    std::ifstream kana(kana_path, std::ios::binary);
    if (!kana) throw DataError("cannot open kana table " + kana_path.string());
    return parse(han, kana, han_path.string(), kana_path.string());
  }

  static RadicalTable parse(std::istream& han, std::istream& kana, const std::string& han_name = "<han>",
                            const std::string& kana_name = "<kana>") {
    RadicalTable t;
    t.read_han(han, han_name);
    t.read_kana(kana, kana_name);
    t.resolve_derived();
    return t;
  }

  RadicalResolution resolve(char32_t c) const {
    if (auto it = han_.find(c); it != han_.end()) return {RadicalId(it->second), RadicalRule::Han};
    if (is_han_codepoint(c)) return {symbol_, RadicalRule::UnknownHan};
    if (auto it = kana_.find(c); it != kana_.end()) return {it->second.radical, RadicalRule::Kana};
    const char32_t f = fold_fullwidth(c);
    if (f >= U'0' && f <= U'9') return {numerals_[f - U'0'], RadicalRule::Numeral};
    if ((f >= U'A' && f <= U'Z') || (f >= U'a' && f <= U'z')) return {latin_, RadicalRule::Latin};
    return {symbol_, RadicalRule::Symbol};
  }

  RadicalId radical_of(char32_t c) const { return resolve(c).radical; }

  RadicalId latin_radical() const noexcept { return latin_; }
  RadicalId symbol_radical() const noexcept { return symbol_; }
  RadicalId numeral_radical(int digit) const { return numerals_.at(static_cast<std::size_t>(digit)); }

  /// Source kanji for a kana entry, or 0 when absent.
  char32_t kana_source(char32_t kana) const {
    auto it = kana_.find(kana);
    return it == kana_.end() ? 0 : it->second.source;
  }

  std::size_t han_size() const noexcept { return han_.size(); }
  std::size_t kana_size() const noexcept { return kana_.size(); }

 private:
  struct KanaEntry {
    char32_t source;
    RadicalId radical;
  };

  static bool is_comment_or_blank(std::string_view line) {
    return line.empty() || line.front() == '#';
  }

  static void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
  }

  void read_han(std::istream& in, const std::string& name) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      strip_cr(line);
      if (is_comment_or_blank(line)) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
        throw ParseError(name, lineno, "expected `U+XXXX<TAB>radical_index`");
      const std::string_view cp_field(line.data(), tab);
      const std::string_view idx_field(line.data() + tab + 1, line.size() - tab - 1);
      if (cp_field.size() < 6 || cp_field.size() > 8 || cp_field.substr(0, 2) != "U+")
        throw ParseError(name, lineno, "bad codepoint field `" + std::string(cp_field) + "`");
      std::uint32_t cp = 0;
      auto [p1, e1] = std::from_chars(cp_field.data() + 2, cp_field.data() + cp_field.size(), cp, 16);
      if (e1 != std::errc{} || p1 != cp_field.data() + cp_field.size() || !utf8::is_scalar_value(cp))
        throw ParseError(name, lineno, "bad codepoint field `" + std::string(cp_field) + "`");
      int idx = 0;
      auto [p2, e2] = std::from_chars(idx_field.data(), idx_field.data() + idx_field.size(), idx);
      if (e2 != std::errc{} || p2 != idx_field.data() + idx_field.size() || idx_field.empty())
        throw ParseError(name, lineno, "bad radical index `" + std::string(idx_field) + "`");
      if (idx < 1 || idx > RadicalId::kCount)
        throw ValidationError(name + ":" + std::to_string(lineno) + ": radical index " + std::to_string(idx) +
                              " outside 1..214");
      han_[static_cast<char32_t>(cp)] = static_cast<std::uint8_t>(idx);
    }
  }

  void read_kana(std::istream& in, const std::string& name) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      strip_cr(line);
      if (is_comment_or_blank(line)) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError(name, lineno, "expected `kana<TAB>source_kanji`");
      std::u32string kana, source;
      try {
        kana = utf8::decode(std::string_view(line).substr(0, tab));
        source = utf8::decode(std::string_view(line).substr(tab + 1));
      } catch (const DataError& e) {
        throw ParseError(name, lineno, e.what());
      }
      if (kana.size() != 1 || source.size() != 1)
        throw ParseError(name, lineno, "each field must hold exactly one character");
      auto it = han_.find(source[0]);
      if (it == han_.end())
        throw ValidationError(name + ":" + std::to_string(lineno) + ": source kanji " + utf8::encode(source[0]) +
                              " is not in the Han table");
      kana_[kana[0]] = KanaEntry{source[0], RadicalId(it->second)};
    }
    std::size_t missing = 0;
    char32_t first_missing = 0;
    for (char32_t c = 0x3041; c <= 0x30FA; ++c) {
      if (!is_kana_codepoint(c) || kana_.contains(c)) continue;
      if (missing++ == 0) first_missing = c;
    }
    if (missing > 0) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(first_missing));
      throw ValidationError(name + ": missing kana coverage for " + std::to_string(missing) +
                            " hiragana/katakana characters (first " + buf + ")");
    }
  }

  RadicalId required(char32_t c, const char* role) const {
    auto it = han_.find(c);
    if (it == han_.end())
      throw ConfigError(std::string("Han table lacks ") + utf8::encode(c) + ", required for the " + role + " rule");
    return RadicalId(it->second);
  }

  void resolve_derived() {
    static constexpr std::u32string_view kNumerals = U"零一二三四五六七八九";
    for (std::size_t d = 0; d < 10; ++d) numerals_[d] = required(kNumerals[d], "numeral");
    latin_ = required(U'英', "Latin letter");
    symbol_ = required(U'符', "symbol");
  }

  std::unordered_map<char32_t, std::uint8_t> han_;
  std::unordered_map<char32_t, KanaEntry> kana_;
  std::array<RadicalId, 10> numerals_{};
  RadicalId latin_;
  RadicalId symbol_;
};

/// Position-aligned radical features for a character sequence.
inline FeatureSeq annotate(std::u32string_view sentence, const RadicalTable& table) {
  FeatureSeq out;
  out.reserve(sentence.size());
  for (char32_t c : sentence) out.push_back(table.radical_of(c));
  return out;
}

/// Number of characters in `sentence` that are Han but missing from the table.
inline std::size_t count_unknown_han(std::u32string_view sentence, const RadicalTable& table) {
  std::size_t n = 0;
  for (char32_t c : sentence) n += table.resolve(c).rule == RadicalRule::UnknownHan;
  return n;
}

/// One line of `annotate` CLI output: space-separated `char|radical` pairs.
inline std::string format_annotation(std::u32string_view sentence, const FeatureSeq& features) {
  std::string out;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (i) out.push_back(' ');
    utf8::append(out, sentence[i]);
    out.push_back('|');
    out += std::to_string(features[i].index());
  }
  return out;
}

}  // namespace radnmt
