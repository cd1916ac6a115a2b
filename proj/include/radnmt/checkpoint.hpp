#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "radnmt/corpus.hpp"
#include "radnmt/model.hpp"

namespace radnmt {

// Layout:
//   "RNMT" | u32 version | u64 manifest bytes | manifest (UTF-8 JSON) | payload
// The manifest lists every tensor with its shape and byte offset into the
// payload; the payload is raw little-endian IEEE-754 binary64.
inline constexpr char kCheckpointMagic[4] = {'R', 'N', 'M', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  Vocab src_vocab;
  Vocab tgt_vocab;
  nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
}

template <class T>
T read_le(std::istream& in) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int b = in.get();
    if (b == EOF) throw DataError("checkpoint truncated");
    value |= static_cast<T>(static_cast<std::uint64_t>(b) << (8 * i));
  }
  return value;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"char_embed", c.char_embed},       {"feature_embed", c.feature_embed},
          {"hidden", c.hidden},               {"src_vocab", c.src_vocab},
          {"tgt_vocab", c.tgt_vocab},         {"feature_vocab", c.feature_vocab},
          {"use_features", c.use_features},   {"attention", std::string(to_string(c.attention))},
          {"input_feeding", c.input_feeding}, {"layers", c.layers}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.char_embed = j.at("char_embed").get<std::size_t>();
  c.feature_embed = j.at("feature_embed").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.src_vocab = j.at("src_vocab").get<std::size_t>();
  c.tgt_vocab = j.at("tgt_vocab").get<std::size_t>();
  c.feature_vocab = j.at("feature_vocab").get<std::size_t>();
  c.use_features = j.at("use_features").get<bool>();
  c.attention = parse_attention_kind(j.at("attention").get<std::string>());
  c.input_feeding = j.at("input_feeding").get<bool>();
  c.layers = j.at("layers").get<std::size_t>();
  return c;
}

inline nlohmann::json vocab_to_json(const Vocab& v) {
  auto arr = nlohmann::json::array();
  for (char32_t c : v.characters()) arr.push_back(static_cast<std::uint32_t>(c));
  return arr;
}

inline Vocab vocab_from_json(const nlohmann::json& j) {
  std::vector<char32_t> chars;
  for (const auto& c : j) chars.push_back(static_cast<char32_t>(c.get<std::uint32_t>()));
  return Vocab(std::move(chars));
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["config"] = detail::config_to_json(ckpt.model.config());
  manifest["src_vocab"] = detail::vocab_to_json(ckpt.src_vocab);
  manifest["tgt_vocab"] = detail::vocab_to_json(ckpt.tgt_vocab);
  manifest["meta"] = ckpt.meta;
  auto tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.model.named_tensors()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  manifest["tensors"] = tensors;
  manifest["payload_bytes"] = offset;
  const std::string text = manifest.dump();

  out.write(kCheckpointMagic, 4);
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  detail::write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ckpt.model.named_tensors())
    for (double v : t.data()) detail::write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw DataError("failed writing checkpoint");
}

/// Writes to `path` through a temporary file so an existing checkpoint is
/// never left half-written.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    save_checkpoint(out, ckpt);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(std::istream& in, const std::string& name = "<checkpoint>") {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError(name + ": not a checkpoint (bad magic)");
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw DataError(name + ": unsupported checkpoint version " + std::to_string(version));
  const auto length = detail::read_le<std::uint64_t>(in);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError(name + ": checkpoint truncated in manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(name + ": bad manifest: " + e.what());
  }
  try {
    const ModelConfig config = detail::config_from_json(manifest.at("config"));
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::uint64_t expected_offset = 0;
    for (const auto& entry : manifest.at("tensors")) {
      const Shape shape = entry.at("shape").get<Shape>();
      if (entry.at("offset").get<std::uint64_t>() != expected_offset)
        throw DataError(name + ": tensor offsets are not contiguous");
      Tensor t(shape);
      for (double& v : t.data()) v = std::bit_cast<double>(detail::read_le<std::uint64_t>(in));
      expected_offset += t.size() * sizeof(double);
      tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return Checkpoint{Model(config, std::move(tensors)), detail::vocab_from_json(manifest.at("src_vocab")),
                      detail::vocab_from_json(manifest.at("tgt_vocab")), manifest.value("meta", nlohmann::json::object())};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(name + ": bad manifest: " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return load_checkpoint(in, path.string());
}

}  // namespace radnmt
