#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "radnmt/cli.hpp"
#include "test_support.hpp"

namespace {

using namespace radnmt;
using namespace radnmt::testing;

struct RunResult {
  int code;
  std::string out, err;
};

RunResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "radnmt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string shell_sha256(const std::filesystem::path& p) {
  const std::string cmd = "sha256sum '" + p.string() + "'";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {};
  std::array<char, 65> buf{};
  const std::size_t n = std::fread(buf.data(), 1, 64, pipe);
  pclose(pipe);
  return std::string(buf.data(), n);
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(RADNMT_CLI_BINARY) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string toy(const char* name) { return (data_dir() / "toy" / name).string(); }

TEST(Cli, HelpAndVersion) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"annotate", "build-vocab", "train", "translate", "eval", "gradcheck"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  EXPECT_EQ(run({"--version"}).code, 0);
  EXPECT_EQ(run_binary("--help"), 0);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 1);
  const auto r = run({"train"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--train-src"), std::string::npos);
  const auto bad = run({"translate", "--bogus", "x"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("--bogus"), std::string::npos);
  EXPECT_EQ(run_binary("train"), 1);
}

TEST(Cli, ConfigErrorsExitOne) {
  TempDir dir("cli_cfg");
  write_file(dir / "bad.cfg", "hidden=abc\n");
  const std::vector<std::string> base = {"train",     "--train-src", toy("train.ja"), "--train-tgt", toy("train.zh"),
                                         "--dev-src", toy("dev.ja"),   "--dev-tgt",     toy("dev.zh"),   "--out",
                                         (dir / "out").string()};
  auto args = base;
  args.insert(args.end(), {"--config", (dir / "bad.cfg").string()});
  EXPECT_EQ(run(args).code, 1);
  args = base;
  args.insert(args.end(), {"--set", "unknown_key=1"});
  const auto r = run(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown_key"), std::string::npos);
}

TEST(Cli, MissingInputExitsTwo) {
  TempDir dir("cli_missing");
  const auto r = run({"annotate", "--input", (dir / "nope.txt").string(), "--output", (dir / "o.txt").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(run_binary("translate --model " + (dir / "none.rnmt").string() + " --input x --output y"), 2);
}

TEST(Cli, GradCheck) {
  TempDir dir("cli_grad");
  const auto r = run({"gradcheck", "--seed", "7", "--manifest", (dir / "m.json").string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("max_rel_error"), std::string::npos);
  EXPECT_NE(r.out.find("PASS at 0.0001"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "m.json"));
  const auto strict = run({"gradcheck", "--seed", "7", "--tolerance", "0", "--manifest", (dir / "s.json").string()});
  EXPECT_EQ(strict.code, 3);
  EXPECT_NE(strict.out.find("FAIL"), std::string::npos);

  ::setenv("RADNMT_SEED", "12", 1);
  const auto env = run({"gradcheck", "--manifest", (dir / "e.json").string()});
  ::unsetenv("RADNMT_SEED");
  EXPECT_NE(env.out.find("seed 12 "), std::string::npos);
}

TEST(Cli, EndToEndOnToyCorpus) {
  TempDir dir("cli_e2e");
  const auto out = dir / "run";

  auto r = run({"annotate", "--input", toy("dev.ja"), "--output", (dir / "dev.ann").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_lines(dir / "dev.ann").size(), read_lines(toy("dev.ja")).size());
  EXPECT_TRUE(std::filesystem::exists(dir / "dev.ann.manifest.json"));

  r = run({"build-vocab", "--input", toy("train.zh"), "--output", (dir / "zh.vocab").string()});
  ASSERT_EQ(r.code, 0) << r.err;

  const std::vector<std::string> train_args = {
      "train",     "--train-src", toy("train.ja"), "--train-tgt", toy("train.zh"), "--dev-src", toy("dev.ja"),
      "--dev-tgt", toy("dev.zh"),   "--set",         "epochs=2",    "--set",         "hidden=16", "--seed",
      "3",         "--out"};
  auto args = train_args;
  args.push_back(out.string());
  r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"src.vocab", "tgt.vocab", "train.log", "report.tsv", "model.rnmt", "manifest.json",
                        "checkpoints/epoch001.rnmt", "checkpoints/epoch002.rnmt", "checkpoints/best.rnmt"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  EXPECT_EQ(Vocab::load(out / "tgt.vocab"), Vocab::load(dir / "zh.vocab"));

  const auto manifest = nlohmann::json::parse(read_file(out / "manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["seeds"]["seed"], 3);
  EXPECT_EQ(manifest["config"]["hidden"], "16");
  EXPECT_EQ(manifest["config"]["profile"], "toy");
  EXPECT_EQ(manifest["inputs"][0]["sha256"], shell_sha256(toy("train.ja")));

  args = train_args;
  args.push_back((dir / "again").string());
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(read_file(out / "model.rnmt"), read_file(dir / "again" / "model.rnmt"));

  const std::string model = (out / "model.rnmt").string();
  r = run({"translate", "--model", model, "--input", toy("dev.ja"), "--output", (dir / "a.zh").string(), "--max-len",
           "12"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"translate", "--model", model, "--input", toy("dev.ja"), "--output", (dir / "b.zh").string(), "--max-len",
           "12"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(read_file(dir / "a.zh"), read_file(dir / "b.zh"));
  EXPECT_EQ(read_lines(dir / "a.zh").size(), 5u);

  r = run({"eval", "--model", model, "--src", toy("dev.ja"), "--ref", toy("dev.zh"), "--out", (dir / "eval").string(),
           "--max-len", "12"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("bleu\t"), std::string::npos);
  EXPECT_EQ(read_file(dir / "eval" / "metrics.tsv"), r.out);
  EXPECT_TRUE(std::filesystem::exists(dir / "eval" / "examples.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "eval" / "manifest.json"));

  r = run({"eval", "--model", model, "--src", toy("dev.ja"), "--ref", toy("train.zh"), "--manifest",
           (dir / "m.json").string()});
  EXPECT_EQ(r.code, 2);
}

}  // namespace
