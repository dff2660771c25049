#include "lp/qa.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace lp {

namespace {

using Json = nlohmann::json;

Json qa_to_json(const SyntheticQASet& set) {
  Json items = Json::array();
  for (const auto& it : set.items)
    items.push_back({{"context", it.context},
                     {"question", it.question},
                     {"options", it.options},
                     {"correct", it.correct}});
  return Json{{"schema", "qa-set v1"},
              {"k", set.k},
              {"seed", set.seed},
              {"rule", set.rule_id},
              {"tokenizer", set.tokenizer_id},
              {"items", items}};
}

}  // namespace

std::string SyntheticQASet::fingerprint() const {
  const std::string text = qa_to_json(*this).dump();
  return to_hex(fnv1a64(text.data(), text.size()));
}

SyntheticQASet make_qa_set(const FactTable& table, int count, int k, std::uint64_t seed) {
  if (count < 1) throw InputError("make_qa_set: count must be positive");
  if (k != 2 && k != 4) throw InputError("make_qa_set: k must be 2 or 4");
  for (const auto& pool : table.values)
    if (static_cast<int>(pool.size()) < k)
      throw InputError("make_qa_set: relation pool smaller than k");

  ByteTokenizer tok;
  SyntheticQASet set;
  set.k = k;
  set.seed = seed;
  set.rule_id = "facts-v1";
  set.tokenizer_id = tok.id();
  Rng rng = Rng(seed).fork(0x71617365);
  for (int i = 0; i < count; ++i) {
    const int f = static_cast<int>(rng.below(table.facts.size()));
    const Fact& fact = table.facts[f];
    QAItem item;
    item.question = tok.tokenize(table.question(f));
    // Distinct distractor values from the same pool.
    std::vector<int> picked = {fact.value};
    while (static_cast<int>(picked.size()) < k) {
      const int v = static_cast<int>(rng.below(table.values[fact.relation].size()));
      bool dup = false;
      for (int p : picked) dup |= (p == v);
      if (!dup) picked.push_back(v);
    }
    const int correct_pos = static_cast<int>(rng.below(k));
    std::vector<int> arranged(k, -1);
    arranged[correct_pos] = fact.value;
    std::size_t next = 1;
    for (int pos = 0; pos < k; ++pos) {
      if (pos == correct_pos) continue;
      arranged[pos] = picked[next++];
    }
    for (int pos = 0; pos < k; ++pos)
      item.options.push_back(tok.tokenize(table.option_text(fact.relation, arranged[pos])));
    item.correct = correct_pos;
    set.items.push_back(std::move(item));
  }
  return set;
}

void save_qa_set(const std::string& path, const SyntheticQASet& set) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  const std::string text = qa_to_json(set).dump(1);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

SyntheticQASet load_qa_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  try {
    if (j.at("schema").get<std::string>() != "qa-set v1")
      throw VersionError(path + ": unsupported qa-set schema");
    SyntheticQASet set;
    set.k = j.at("k").get<int>();
    set.seed = j.at("seed").get<std::uint64_t>();
    set.rule_id = j.at("rule").get<std::string>();
    set.tokenizer_id = j.at("tokenizer").get<std::string>();
    for (const auto& ji : j.at("items")) {
      QAItem it;
      it.context = ji.at("context").get<std::vector<std::int32_t>>();
      it.question = ji.at("question").get<std::vector<std::int32_t>>();
      it.options = ji.at("options").get<std::vector<std::vector<std::int32_t>>>();
      it.correct = ji.at("correct").get<int>();
      if (it.options.empty() || it.correct < 0 ||
          it.correct >= static_cast<int>(it.options.size()))
        throw FormatError(path + ": malformed qa item");
      set.items.push_back(std::move(it));
    }
    return set;
  } catch (const Json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace lp
