#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "radnmt/checkpoint.hpp"
#include "radnmt/config.hpp"
#include "radnmt/decoding.hpp"
#include "radnmt/evaluation.hpp"
#include "radnmt/gradcheck_suite.hpp"
#include "radnmt/radicals.hpp"
#include "radnmt/training.hpp"

#ifndef RADNMT_DATA_DIR
#define RADNMT_DATA_DIR "data"
#endif

namespace radnmt {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

inline std::filesystem::path default_han_table() { return std::filesystem::path(RADNMT_DATA_DIR) / "han_radicals.tsv"; }
inline std::filesystem::path default_kana_table() { return std::filesystem::path(RADNMT_DATA_DIR) / "kana_sources.tsv"; }

/// Hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Record of one invocation: what ran, with which settings and inputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::vector<std::pair<std::string, std::string>> config;
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<std::filesystem::path> inputs;
  std::string started = utc_timestamp();

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tool"] = "radnmt";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["argv"] = argv;
    auto cfg = nlohmann::json::object();
    for (const auto& [k, v] : config) cfg[k] = v;
    j["config"] = cfg;
    j["seeds"] = seeds;
    auto files = nlohmann::json::array();
    for (const auto& p : inputs)
      files.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}, {"bytes", std::filesystem::file_size(p)}});
    j["inputs"] = files;
    j["started"] = started;
    j["finished"] = utc_timestamp();
    return j;
  }

  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << to_json().dump(2) << '\n';
  }
};

namespace detail {

inline ConfigValues parse_overrides(const std::vector<std::string>& sets) {
  ConfigValues out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got `" + s + "`");
    const std::string key = trim(std::string_view(s).substr(0, eq));
    config_key(key);
    out[key] = trim(std::string_view(s).substr(eq + 1));
  }
  return out;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

inline std::filesystem::path manifest_beside(const std::filesystem::path& output) {
  auto p = output;
  p += ".manifest.json";
  return p;
}

/// First `--flag` that the selected subcommand does not define, checked
/// before CLI11 so it is reported ahead of missing required flags.
inline std::optional<std::pair<std::string, CLI::App*>> unknown_flag(CLI::App& app, int argc, const char* const* argv) {
  CLI::App* sub = nullptr;
  for (int i = 1; i < argc; ++i) {
    const std::string_view a = argv[i];
    if (!sub) {
      if (!a.starts_with("-")) sub = app.get_subcommand_no_throw(std::string(a));
      if (!a.starts_with("-") && !sub) return std::nullopt;
      continue;
    }
    if (!a.starts_with("--") || a == "--") continue;
    const std::string name(a.substr(0, a.find('=')));
    if (name == "--help") return std::nullopt;
    bool known = false;
    for (const CLI::Option* opt : sub->get_options())
      known = known || opt->check_lname(name.substr(2));
    if (!known) return std::pair{name, sub};
  }
  return std::nullopt;
}

}  // namespace detail

/// Runs one command line. Returns the process exit code.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Character-level Japanese to Chinese translation with radical features", "radnmt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  std::vector<std::string> args(argv, argv + argc);
  RunManifest manifest;
  manifest.argv = args;
  std::filesystem::path manifest_path;
  std::function<int()> action;

  const std::string han_default = default_han_table().string(), kana_default = default_kana_table().string();

  // annotate
  auto* annotate = app.add_subcommand("annotate", "Print char|radical pairs for each input line");
  std::string han_path = han_default, kana_path = kana_default, input, output;
  annotate->add_option("--han-table", han_path, "Han radical table")->capture_default_str();
  annotate->add_option("--kana-table", kana_path, "Kana source table")->capture_default_str();
  annotate->add_option("--input", input, "UTF-8 text, one sentence per line")->required();
  annotate->add_option("--output", output, "Annotated output")->required();
  annotate->add_option("--manifest", manifest_path, "Run manifest path (default: OUTPUT.manifest.json)");
  annotate->callback([&] {
    action = [&] {
      const RadicalTable table = RadicalTable::load(han_path, kana_path);
      std::vector<std::string> lines;
      std::size_t unknown = 0;
      for (const auto& line : read_lines(input)) {
        unknown += count_unknown_han(line, table);
        lines.push_back(format_annotation(line, radnmt::annotate(line, table)));
      }
      detail::write_lines(output, lines);
      if (unknown) err << "warning: " << unknown << " Han characters missing from the table (assigned the symbol radical)\n";
      manifest.inputs = {input, han_path, kana_path};
      if (manifest_path.empty()) manifest_path = detail::manifest_beside(output);
      return kExitOk;
    };
  });

  // build-vocab
  auto* build_vocab = app.add_subcommand("build-vocab", "Build a character vocabulary from a text file");
  std::size_t min_count = 1, max_size = 0;
  build_vocab->add_option("--input", input, "UTF-8 text")->required();
  build_vocab->add_option("--output", output, "Vocabulary TSV")->required();
  build_vocab->add_option("--min-count", min_count, "Minimum frequency")->capture_default_str();
  build_vocab->add_option("--max-size", max_size, "Maximum size including reserved ids; 0 = unbounded");
  build_vocab->add_option("--manifest", manifest_path, "Run manifest path (default: OUTPUT.manifest.json)");
  build_vocab->callback([&] {
    action = [&] {
      const auto lines = read_lines(input);
      const Vocab v = Vocab::build(lines, min_count, max_size ? std::optional(max_size) : std::nullopt);
      v.save(std::filesystem::path(output));
      out << "vocabulary size " << v.size() << '\n';
      manifest.inputs = {input};
      manifest.config = {{"min_count", std::to_string(min_count)}, {"max_size", std::to_string(max_size)}};
      if (manifest_path.empty()) manifest_path = detail::manifest_beside(output);
      return kExitOk;
    };
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model with plain SGD");
  std::string config_path, train_src, train_tgt, dev_src, dev_tgt, out_dir, profile = "toy", preset;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed_flag;
  train_cmd->add_option("--config", config_path, "Flat key=value config file");
  train_cmd->add_option("--train-src", train_src, "Training source (Japanese)")->required();
  train_cmd->add_option("--train-tgt", train_tgt, "Training target (Chinese)")->required();
  train_cmd->add_option("--dev-src", dev_src, "Dev source")->required();
  train_cmd->add_option("--dev-tgt", dev_tgt, "Dev target")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--han-table", han_path, "Han radical table")->capture_default_str();
  train_cmd->add_option("--kana-table", kana_path, "Kana source table")->capture_default_str();
  train_cmd->add_option("--profile", profile, "paper|toy")->capture_default_str();
  train_cmd->add_option("--preset", preset, "paper-default|paper-best");
  train_cmd->add_option("--set", sets, "Override a config key (key=value), repeatable");
  train_cmd->add_option("--seed", seed_flag, "Seed (overrides config and RADNMT_SEED)");
  train_cmd->add_option("--manifest", manifest_path, "Run manifest path (default: OUT/manifest.json)");
  train_cmd->callback([&] {
    action = [&] {
      ConfigLayers layers;
      layers.profile = profile;
      layers.preset = preset;
      if (!config_path.empty()) layers.file = load_config_file(config_path);
      layers.flags = detail::parse_overrides(sets);
      if (seed_flag) layers.flags["seed"] = std::to_string(*seed_flag);
      layers.env_seed = env_seed();
      RunConfig cfg = resolve_config(layers);

      auto train_raw = read_parallel(train_src, train_tgt);
      const auto dev_raw = read_parallel(dev_src, dev_tgt);
      if (cfg.max_chars) {
        const auto dropped = drop_long_pairs(train_raw, cfg.max_chars);
        if (dropped) err << "dropped " << dropped << " training pairs longer than " << cfg.max_chars << '\n';
      }
      std::vector<std::u32string> src_lines, tgt_lines;
      for (const auto& p : train_raw) {
        src_lines.push_back(p.src);
        tgt_lines.push_back(p.tgt);
      }
      std::optional<std::size_t> cap;
      if (cfg.max_vocab) cap = cfg.max_vocab;
      const Vocab src_vocab = Vocab::build(src_lines, cfg.min_count, cap);
      const Vocab tgt_vocab = Vocab::build(tgt_lines, cfg.min_count, cap);
      const RadicalTable table = RadicalTable::load(han_path, kana_path);
      const auto train_set = encode_corpus(train_raw, src_vocab, tgt_vocab, table);
      const auto dev_set = encode_corpus(dev_raw, src_vocab, tgt_vocab, table);

      cfg.model.src_vocab = src_vocab.size();
      cfg.model.tgt_vocab = tgt_vocab.size();
      Model model(cfg.model, Rng::derive(cfg.train.seed, 0x1417).next());
      const std::filesystem::path dir(out_dir);
      std::filesystem::create_directories(dir);
      cfg.train.checkpoint_dir = dir / "checkpoints";
      src_vocab.save(dir / "src.vocab");
      tgt_vocab.save(dir / "tgt.vocab");

      std::ofstream log(dir / "train.log", std::ios::trunc);
      TrainHooks hooks;
      hooks.log = &log;
      hooks.on_epoch = [&](const EpochStats& e) {
        out << "epoch " << e.epoch << "  train_nll " << e.train_nll << "  dev_ppl " << e.dev_ppl << "  lr " << e.lr
            << '\n';
      };
      out << "training " << model.parameter_count() << " parameters on " << train_set.size() << " pairs\n";
      const TrainReport report = train(cfg.train, train_set, dev_set, model, src_vocab, tgt_vocab, hooks);
      {
        std::ofstream tsv(dir / "report.tsv", std::ios::trunc);
        report.write_tsv(tsv);
      }
      nlohmann::json meta = {{"epochs", report.epochs.size()}, {"best_epoch", report.best_epoch},
                             {"best_dev_ppl", report.best_dev_ppl}};
      save_checkpoint(dir / "model.rnmt", Checkpoint{model, src_vocab, tgt_vocab, meta});
      out << "best dev ppl " << report.best_dev_ppl << " at epoch " << report.best_epoch << '\n';

      manifest.config = config_entries(cfg);
      manifest.config.emplace_back("profile", profile);
      if (!preset.empty()) manifest.config.emplace_back("preset", preset);
      manifest.seeds = {{"seed", cfg.train.seed}};
      manifest.inputs = {train_src, train_tgt, dev_src, dev_tgt, han_path, kana_path};
      if (!config_path.empty()) manifest.inputs.emplace_back(config_path);
      if (manifest_path.empty()) manifest_path = dir / "manifest.json";
      return kExitOk;
    };
  });

  // translate
  auto* translate = app.add_subcommand("translate", "Beam-search translation of a text file");
  std::string model_path, unk = "<unk>";
  std::size_t beam = 5, max_len = 0;
  double length_norm = 0.0;
  translate->add_option("--model", model_path, "Checkpoint")->required();
  translate->add_option("--han-table", han_path, "Han radical table")->capture_default_str();
  translate->add_option("--kana-table", kana_path, "Kana source table")->capture_default_str();
  translate->add_option("--input", input, "Source sentences")->required();
  translate->add_option("--output", output, "Translations")->required();
  translate->add_option("--beam", beam, "Beam size")->capture_default_str()->check(CLI::PositiveNumber);
  translate->add_option("--max-len", max_len, "Maximum output length; 0 = 2 * source + 10")->capture_default_str();
  translate->add_option("--length-norm", length_norm, "Length normalization exponent")->capture_default_str();
  translate->add_option("--unk", unk, "Placeholder for unknown target characters")->capture_default_str();
  translate->add_option("--manifest", manifest_path, "Run manifest path (default: OUTPUT.manifest.json)");
  translate->callback([&] {
    action = [&] {
      const Checkpoint ckpt = load_checkpoint(std::filesystem::path(model_path));
      const RadicalTable table = RadicalTable::load(han_path, kana_path);
      BeamOptions opt;
      opt.beam_size = beam;
      opt.max_len = max_len;
      opt.length_norm = length_norm;
      const Translator tr{ckpt.model, ckpt.src_vocab, ckpt.tgt_vocab, table, opt, unk};
      const auto n = translate_file(tr, input, output);
      out << "translated " << n << " lines\n";
      manifest.config = {{"beam", std::to_string(beam)},
                         {"max_len", std::to_string(max_len)},
                         {"length_norm", detail::format_value(length_norm)},
                         {"unk_placeholder", unk}};
      manifest.inputs = {model_path, input, han_path, kana_path};
      if (manifest_path.empty()) manifest_path = detail::manifest_beside(output);
      return kExitOk;
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Perplexity, BLEU and translation examples on a test set");
  std::string src_path, ref_path, tokenization = "char", eval_out;
  bool smooth = false;
  eval->add_option("--model", model_path, "Checkpoint")->required();
  eval->add_option("--src", src_path, "Test source")->required();
  eval->add_option("--ref", ref_path, "Test reference")->required();
  eval->add_option("--tokenization", tokenization, "char|whitespace")->capture_default_str();
  eval->add_option("--out", eval_out, "Directory for metrics.tsv and examples.txt");
  eval->add_option("--han-table", han_path, "Han radical table")->capture_default_str();
  eval->add_option("--kana-table", kana_path, "Kana source table")->capture_default_str();
  eval->add_option("--beam", beam, "Beam size")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--max-len", max_len, "Maximum output length; 0 = 2 * source + 10");
  eval->add_flag("--smooth", smooth, "Add-one smoothing of n-gram precisions");
  eval->add_option("--manifest", manifest_path, "Run manifest path (default: OUT/manifest.json, else ./radnmt-eval.manifest.json)");
  eval->callback([&] {
    action = [&] {
      EvalOptions opt;
      opt.tokenization = parse_tokenization(tokenization);
      opt.smooth = smooth;
      opt.beam.beam_size = beam;
      opt.beam.max_len = max_len;
      const Checkpoint ckpt = load_checkpoint(std::filesystem::path(model_path));
      const RadicalTable table = RadicalTable::load(han_path, kana_path);
      const auto test = read_parallel(src_path, ref_path);
      const EvalReport report = evaluate(ckpt.model, ckpt.src_vocab, ckpt.tgt_vocab, table, test, opt);
      report.write_metrics_tsv(out);
      if (!eval_out.empty()) {
        const std::filesystem::path dir(eval_out);
        std::filesystem::create_directories(dir);
        std::ofstream metrics(dir / "metrics.tsv", std::ios::trunc), examples(dir / "examples.txt", std::ios::trunc);
        report.write_metrics_tsv(metrics);
        report.write_examples(examples);
        if (manifest_path.empty()) manifest_path = dir / "manifest.json";
      }
      manifest.config = {{"beam", std::to_string(beam)},
                         {"max_len", std::to_string(max_len)},
                         {"tokenization", tokenization},
                         {"smooth", smooth ? "true" : "false"}};
      manifest.inputs = {model_path, src_path, ref_path, han_path, kana_path};
      return kExitOk;
    };
  });

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the model gradients");
  std::size_t count = 1;
  double eps = kGradCheckEps, tolerance = 1e-4;
  gradcheck->add_option("--seed", seed_flag, "First seed (default: RADNMT_SEED or 1)");
  gradcheck->add_option("--count", count, "Number of consecutive seeds")->capture_default_str();
  gradcheck->add_option("--eps", eps, "Central-difference step")->capture_default_str();
  gradcheck->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();
  gradcheck->add_option("--manifest", manifest_path, "Run manifest path (default: ./radnmt-gradcheck.manifest.json)");
  gradcheck->callback([&] {
    action = [&] {
      std::uint64_t first = 1;
      if (seed_flag)
        first = *seed_flag;
      else if (const auto s = env_seed())
        first = detail::parse_number<std::uint64_t>("RADNMT_SEED", *s, "u64");
      double worst = 0.0;
      for (std::uint64_t s = first; s < first + count; ++s) {
        for (AttentionKind kind : {AttentionKind::General, AttentionKind::Dot}) {
          GradCheckFixture f = make_grad_check_fixture(s, kind);
          const GradCheckResult r = run_model_grad_check(f, eps);
          worst = std::max(worst, r.max_rel_error);
          out << "seed " << s << " " << to_string(kind) << "  max_rel_error " << r.max_rel_error << "  ("
              << r.coordinates << " coordinates, worst " << r.worst_param << "[" << r.worst_index << "])\n";
        }
      }
      const bool pass = worst <= tolerance;
      out << "max_rel_error " << worst << " " << (pass ? "PASS" : "FAIL") << " at " << tolerance << '\n';
      manifest.seeds = {{"first", first}, {"count", count}};
      manifest.config = {{"eps", detail::format_value(eps)}, {"tolerance", detail::format_value(tolerance)}};
      return pass ? kExitOk : kExitNumeric;
    };
  });

  if (const auto unknown = detail::unknown_flag(app, argc, argv)) {
    err << "unknown flag " << unknown->first << " for `" << unknown->second->get_name() << "`; valid flags:";
    for (const CLI::Option* opt : unknown->second->get_options())
      if (!opt->get_lnames().empty()) err << " --" << opt->get_lnames().front();
    err << '\n';
    return kExitUsage;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  for (auto* sub : app.get_subcommands()) manifest.command = sub->get_name();
  try {
    const int code = action();
    if (manifest_path.empty()) manifest_path = "radnmt-" + manifest.command + ".manifest.json";
    manifest.write(manifest_path);
    return code;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace radnmt
