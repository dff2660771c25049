#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lp/corpus.hpp"

namespace lp {

struct QAItem {
  std::vector<std::int32_t> context;
  std::vector<std::int32_t> question;
  std::vector<std::vector<std::int32_t>> options;
  int correct = 0;
};

struct SyntheticQASet {
  int k = 4;
  std::uint64_t seed = 0;
  std::string rule_id;
  std::string tokenizer_id;
  std::vector<QAItem> items;
  std::string fingerprint() const;
};

// Multiple-choice probes over the fact table. Every option in an item comes
// from the same relation pool, so options have identical token length and
// exactly one is the memorized continuation. Blind guessing scores 1/k.
SyntheticQASet make_qa_set(const FactTable& table, int count, int k, std::uint64_t seed);

void save_qa_set(const std::string& path, const SyntheticQASet& set);
SyntheticQASet load_qa_set(const std::string& path);

}  // namespace lp
