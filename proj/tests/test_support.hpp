#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "radnmt/corpus.hpp"
#include "radnmt/radicals.hpp"

namespace radnmt::testing {

inline std::filesystem::path data_dir() { return RADNMT_DATA_DIR; }

inline const RadicalTable& bundled_table() {
  static const RadicalTable table =
      RadicalTable::load(data_dir() / "han_radicals.tsv", data_dir() / "kana_sources.tsv");
  return table;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("radnmt_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// The bundled 50/5 pair toy corpus, encoded with vocabularies built from its training side.
struct ToyCorpus {
  std::vector<RawPair> train_raw, dev_raw;
  Vocab src_vocab, tgt_vocab;
  std::vector<ExamplePair> train, dev;
};

inline ToyCorpus toy_corpus(bool copy = false) {
  ToyCorpus c;
  const auto toy = data_dir() / "toy";
  c.train_raw = read_parallel(toy / "train.ja", copy ? toy / "train.ja" : toy / "train.zh");
  c.dev_raw = read_parallel(toy / "dev.ja", copy ? toy / "dev.ja" : toy / "dev.zh");
  std::vector<std::u32string> src, tgt;
  for (const auto& p : c.train_raw) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
  c.src_vocab = Vocab::build(src);
  c.tgt_vocab = Vocab::build(tgt);
  c.train = encode_corpus(c.train_raw, c.src_vocab, c.tgt_vocab, bundled_table());
  c.dev = encode_corpus(c.dev_raw, c.src_vocab, c.tgt_vocab, bundled_table());
  return c;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace radnmt::testing
