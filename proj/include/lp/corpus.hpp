#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lp/common.hpp"
#include "lp/tokenizer.hpp"

namespace lp {

// Synthetic pretraining corpus: templated fact sentences mixed with filler
// prose. QA probes the facts, so knowledge loss under pruning shows up as an
// accuracy drop while the filler keeps next-token loss non-trivial.
struct SynthSpec {
  int num_facts = 64;
  int num_relations = 4;
  int values_per_relation = 16;
  int entity_chars = 6;       // fixed length keeps QA options token-aligned
  int fact_repeats = 40;      // occurrences of each fact sentence
  int filler_sentences = 3000;
  std::uint64_t seed = 7;
};

struct Fact {
  std::string subject;
  int relation = 0;
  int value = 0;
};

struct FactTable {
  std::vector<std::string> relations;
  std::vector<std::vector<std::string>> values;  // per-relation option pool
  std::vector<Fact> facts;

  // "the color of npwoqa is velnor."
  std::string sentence(int fact_idx) const;
  // the sentence up to and including "is" (the QA prompt)
  std::string question(int fact_idx) const;
  // " velnor." — leading space, fixed byte length within a pool
  std::string option_text(int relation, int value_idx) const;
};

FactTable make_fact_table(const SynthSpec& spec);
std::string make_corpus_text(const SynthSpec& spec, const FactTable& table);
void write_corpus_file(const std::string& path, const SynthSpec& spec);

enum class Split { kTrain, kValidation };

inline const char* split_name(Split s) {
  return s == Split::kTrain ? "train" : "validation";
}

struct CorpusSpec {
  std::string path;
  int seq_len = 128;  // window length in tokens; model input adds BOS
  std::uint64_t shuffle_seed = 11;
  double val_fraction = 0.1;
};

// Deterministic windowed view over a byte corpus. Windows are shuffled once
// by the seed and partitioned, so the train and validation splits are
// disjoint by construction.
class CorpusStream {
 public:
  CorpusStream(const CorpusSpec& spec, Split split);
  static CorpusStream from_text(std::string text, const CorpusSpec& spec, Split split);

  std::int64_t size() const { return static_cast<std::int64_t>(window_ids_.size()); }
  std::int64_t sequence_id(std::int64_t i) const { return window_ids_.at(i); }
  // BOS followed by seq_len corpus tokens.
  std::vector<std::int32_t> sequence(std::int64_t i) const;

  const CorpusSpec& spec() const { return spec_; }
  Split split() const { return split_; }
  std::string tokenizer_id() const { return tokenizer_.id(); }
  int vocab_size() const { return tokenizer_.vocab_size(); }
  std::string fingerprint() const { return fingerprint_; }

 private:
  CorpusStream() = default;
  void build(std::string text);

  CorpusSpec spec_;
  Split split_ = Split::kTrain;
  ByteTokenizer tokenizer_;
  std::vector<std::int32_t> tokens_;
  std::vector<std::int64_t> window_ids_;
  std::string fingerprint_;
};

}  // namespace lp
