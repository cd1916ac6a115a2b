#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "radnmt/evaluation.hpp"
#include "radnmt/model.hpp"
#include "radnmt/training.hpp"

namespace radnmt {

/// Every tunable of a run, resolved from defaults, profile, preset, file and flags.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  BeamOptions beam;
  std::size_t embed = 512;  // p = p1 + p2
  std::size_t min_count = 1;
  std::size_t max_vocab = 0;  // 0: unbounded
  std::size_t max_chars = 400;  // drop longer training pairs; 0 keeps all
  Tokenization tokenization = Tokenization::Char;
  std::string unk_placeholder = "<unk>";

  RunConfig() {
    model.hidden = 512;
    model.feature_embed = 64;
    sync();
  }

  /// Derives p1 from p and p2.
  void sync() {
    const std::size_t p2 = model.use_features ? model.feature_embed : 0;
    if (embed <= p2)
      throw ConfigError("embed (" + std::to_string(embed) + ") must exceed feature_embed (" + std::to_string(p2) + ")");
    model.char_embed = embed - p2;
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v, const char* type) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || v.empty())
    throw ConfigError("config key `" + key + "`: expected " + type + ", got `" + v + "`");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key `" + key + "`: expected bool, got `" + v + "`");
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[32];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  } else {
    return std::to_string(v);
  }
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string type;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_value;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto size_key = [&](const char* name, const char* help, auto member) {
      k.push_back({name, "size", help,
                   [=](RunConfig& c, const std::string& v) { member(c) = detail::parse_number<std::size_t>(name, v, "size"); },
                   [=](const RunConfig& c) { return format_value(member(const_cast<RunConfig&>(c))); }});
    };
    auto real_key = [&](const char* name, const char* help, auto member) {
      k.push_back({name, "real", help,
                   [=](RunConfig& c, const std::string& v) { member(c) = detail::parse_number<double>(name, v, "real"); },
                   [=](const RunConfig& c) { return format_value(member(const_cast<RunConfig&>(c))); }});
    };
    auto bool_key = [&](const char* name, const char* help, auto member) {
      k.push_back({name, "bool", help,
                   [=](RunConfig& c, const std::string& v) { member(c) = detail::parse_bool(name, v); },
                   [=](const RunConfig& c) { return format_value(member(const_cast<RunConfig&>(c))); }});
    };
    size_key("hidden", "LSTM cells per layer (q)", [](RunConfig& c) -> std::size_t& { return c.model.hidden; });
    size_key("embed", "source embedding size p = p1 + p2", [](RunConfig& c) -> std::size_t& { return c.embed; });
    size_key("feature_embed", "radical embedding size p2", [](RunConfig& c) -> std::size_t& { return c.model.feature_embed; });
    bool_key("use_features", "radical feature path", [](RunConfig& c) -> bool& { return c.model.use_features; });
    bool_key("input_feeding", "feed h~ into the next decoder step", [](RunConfig& c) -> bool& { return c.model.input_feeding; });
    k.push_back({"attention", "general|dot", "alignment score function",
                 [](RunConfig& c, const std::string& v) { c.model.attention = parse_attention_kind(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.model.attention)); }});
    real_key("lr", "initial SGD learning rate", [](RunConfig& c) -> double& { return c.train.lr_start; });
    real_key("lr_decay", "learning-rate decay factor", [](RunConfig& c) -> double& { return c.train.lr_decay; });
    k.push_back({"lr_schedule", "plateau|fixed", "learning-rate decay trigger",
                 [](RunConfig& c, const std::string& v) { c.train.schedule = parse_lr_schedule(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.train.schedule)); }});
    real_key("plateau_tolerance", "relative dev ppl improvement required", [](RunConfig& c) -> double& { return c.train.plateau_tolerance; });
    size_key("decay_start", "first decaying epoch for the fixed schedule", [](RunConfig& c) -> std::size_t& { return c.train.decay_start; });
    real_key("clip", "global gradient norm bound", [](RunConfig& c) -> double& { return c.train.max_norm; });
    size_key("batch_size", "sentences per mini-batch", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    real_key("dropout", "drop probability", [](RunConfig& c) -> double& { return c.train.dropout; });
    size_key("epochs", "maximum training epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    size_key("early_stop", "patience in epochs; 0 disables", [](RunConfig& c) -> std::size_t& { return c.train.early_stop; });
    k.push_back({"seed", "u64", "global seed",
                 [](RunConfig& c, const std::string& v) { c.train.seed = detail::parse_number<std::uint64_t>("seed", v, "u64"); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    size_key("eval_every", "batches between progress lines; 0 disables", [](RunConfig& c) -> std::size_t& { return c.train.eval_every; });
    size_key("beam", "beam size", [](RunConfig& c) -> std::size_t& { return c.beam.beam_size; });
    size_key("max_len", "decode length bound; 0 = 2 * source + 10", [](RunConfig& c) -> std::size_t& { return c.beam.max_len; });
    real_key("length_norm", "length normalization exponent", [](RunConfig& c) -> double& { return c.beam.length_norm; });
    size_key("min_count", "minimum character frequency", [](RunConfig& c) -> std::size_t& { return c.min_count; });
    size_key("max_vocab", "vocabulary cap; 0 = unbounded", [](RunConfig& c) -> std::size_t& { return c.max_vocab; });
    size_key("max_chars", "drop training pairs longer than this; 0 keeps all", [](RunConfig& c) -> std::size_t& { return c.max_chars; });
    k.push_back({"tokenization", "char|whitespace", "BLEU tokenization",
                 [](RunConfig& c, const std::string& v) { c.tokenization = parse_tokenization(v); },
                 [](const RunConfig& c) { return std::string(to_string(c.tokenization)); }});
    k.push_back({"unk_placeholder", "string", "rendering of unknown target ids",
                 [](RunConfig& c, const std::string& v) { c.unk_placeholder = v; },
                 [](const RunConfig& c) { return c.unk_placeholder; }});
    return k;
  }();
  return keys;
}

inline const ConfigKey& config_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  std::string valid;
  for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k.name;
  throw ConfigError("unknown config key `" + std::string(name) + "` (valid: " + valid + ")");
}

using ConfigValues = std::map<std::string, std::string>;

inline ConfigValues profile_values(std::string_view profile) {
  if (profile == "paper") return {};
  if (profile == "toy") return {{"hidden", "64"}, {"embed", "64"}, {"feature_embed", "16"}};
  throw ConfigError("unknown profile `" + std::string(profile) + "` (expected paper|toy)");
}

inline ConfigValues preset_values(std::string_view preset) {
  if (preset == "paper-default") return {{"dropout", "0.8"}};
  if (preset == "paper-best") return {{"dropout", "0.3"}};
  throw ConfigError("unknown preset `" + std::string(preset) + "` (expected paper-default|paper-best)");
}

/// Flat key=value lines; '#' starts a comment line. Keys are checked on the spot.
inline ConfigValues parse_config(std::istream& in, const std::string& name = "<config>") {
  ConfigValues out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(name + ":" + std::to_string(no) + ": expected key=value");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    try {
      config_key(key);
    } catch (const ConfigError& e) {
      throw ConfigError(name + ":" + std::to_string(no) + ": " + e.what());
    }
    out[key] = detail::trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

inline ConfigValues load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

/// One layer of the precedence chain.
struct ConfigLayers {
  std::string profile = "paper";
  std::string preset;
  ConfigValues file;
  ConfigValues flags;
  /// RADNMT_SEED, used only when neither file nor flags set a seed.
  std::optional<std::string> env_seed;
};

inline std::optional<std::string> env_seed() {
  if (const char* s = std::getenv("RADNMT_SEED"); s && *s) return std::string(s);
  return std::nullopt;
}

/// defaults < profile < preset < RADNMT_SEED < file < flags
inline RunConfig resolve_config(const ConfigLayers& layers) {
  RunConfig c;
  auto apply = [&](const ConfigValues& values) {
    for (const auto& [k, v] : values) config_key(k).set(c, v);
  };
  apply(profile_values(layers.profile));
  if (!layers.preset.empty()) apply(preset_values(layers.preset));
  if (layers.env_seed) apply({{"seed", *layers.env_seed}});
  apply(layers.file);
  apply(layers.flags);
  c.sync();
  c.train.validate();
  if (c.model.hidden < 1) throw ConfigError("hidden must be >= 1");
  if (c.beam.beam_size < 1) throw ConfigError("beam must be >= 1");
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path, const ConfigValues& flags = {},
                             std::string_view profile = "paper") {
  ConfigLayers layers;
  layers.profile = profile;
  if (!path.empty()) layers.file = load_config_file(path);
  layers.flags = flags;
  layers.env_seed = env_seed();
  return resolve_config(layers);
}

/// Every key with its resolved value, in registry order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, k.get(c));
  return out;
}

}  // namespace radnmt
