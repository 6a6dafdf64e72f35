#ifndef SAME_TEXT_HPP
#define SAME_TEXT_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "same/rng.hpp"

namespace same {

uint64_t fnv1a(const std::string& s);

// UTF-8 helpers; mutation operators work on codepoints so multi-byte
// homoglyphs count as single characters.
std::vector<uint32_t> utf8_decode(const std::string& s);
std::string utf8_encode(const std::vector<uint32_t>& cps);

class Vocabulary {
 public:
  static constexpr const char* kPad = "<pad>";
  static constexpr const char* kSep = "<sep>";

  // Builds from a word list; specials are added first.
  static Vocabulary build(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(id_to_word_.size()); }
  int pad_id() const { return 0; }
  int sep_id() const { return 1; }
  std::optional<int> lookup(const std::string& lower_word) const;
  const std::string& word(int id) const { return id_to_word_.at(id); }
  const std::vector<std::string>& words() const { return id_to_word_; }
  uint64_t fingerprint() const { return fingerprint_; }
  bool is_special(int id) const { return id < 2; }

  // Token id for any word: vocab id if known, else a hash bucket offset by
  // vocab size. Distinct misspellings land in distinct buckets.
  int token_id(const std::string& lower_word, int n_hash_buckets) const;

 private:
  std::unordered_map<std::string, int> word_to_id_;
  std::vector<std::string> id_to_word_;
  uint64_t fingerprint_ = 0;
};

struct Sentence {
  std::string raw;
  std::vector<std::string> words;
  std::vector<int> token_ids;
  int label = -1;

  std::string joined() const;  // words joined with single spaces
};

// Lowercases and splits on whitespace/punctuation boundaries; every word maps
// to exactly one token. Throws std::domain_error when nothing survives.
Sentence tokenize(const Vocabulary& vocab, const std::string& raw_text,
                  int n_hash_buckets);
std::vector<std::string> split_words(const std::string& raw_text);

class HomoglyphTable {
 public:
  static HomoglyphTable load(const std::string& path);
  static HomoglyphTable builtin();
  std::optional<uint32_t> replacement(uint32_t cp) const;
  bool mappable(const std::string& word) const;
  size_t size() const { return map_.size(); }

 private:
  std::map<uint32_t, uint32_t> map_;
};

enum class CharMutation { kSwap, kInsert, kDelete, kHomoglyph };

// Up to count_per_kind candidates per applicable kind, deduplicated. Swap and
// deletion are skipped (not errored) for single-character words.
std::vector<std::string> char_mutations(const std::string& word,
                                        const HomoglyphTable& table, Rng& rng,
                                        int count_per_kind);

int levenshtein(const std::string& a, const std::string& b);  // on codepoints

struct DatasetLoadResult {
  std::vector<Sentence> sentences;
  std::vector<std::string> warnings;  // malformed lines, one entry each
};

// Line-delimited JSON records {"text": ..., "label": ...}.
DatasetLoadResult load_dataset(const Vocabulary& vocab, const std::string& path,
                               int n_hash_buckets);
void save_dataset(const std::vector<Sentence>& data, const std::string& path);

struct RawDataset {
  std::vector<std::string> texts;
  std::vector<int> labels;
  int n_classes = 2;
};

enum class SynthTask { kKeywordSentiment, kParityOfMarkers, kTemplatedNli };
SynthTask synth_task_from_string(const std::string& s);

RawDataset synth_task(SynthTask kind, int n_samples, uint64_t seed);

// Vocabulary over every word occurring in the texts.
Vocabulary build_vocab(const std::vector<std::string>& texts);

}  // namespace same

#endif
