#include "lp/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace lp {

namespace {

const char* kRelationWords[] = {"color", "home",  "craft", "drink",
                                "totem", "motto", "badge", "charm"};
constexpr int kMaxRelations = 8;

std::string random_word(int len, Rng& rng) {
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz";
  std::string w(len, 'a');
  for (int i = 0; i < len; ++i) w[i] = alphabet[rng.below(26)];
  return w;
}

std::string unique_word(int len, Rng& rng, std::set<std::string>& used) {
  for (int tries = 0; tries < 10000; ++tries) {
    std::string w = random_word(len, rng);
    if (used.insert(w).second) return w;
  }
  throw InputError("synthetic corpus: word space exhausted; increase entity_chars");
}

}  // namespace

std::string FactTable::sentence(int fact_idx) const {
  const Fact& f = facts.at(fact_idx);
  return "the " + relations.at(f.relation) + " of " + f.subject + " is " +
         values.at(f.relation).at(f.value) + ".";
}

std::string FactTable::question(int fact_idx) const {
  const Fact& f = facts.at(fact_idx);
  return "the " + relations.at(f.relation) + " of " + f.subject + " is";
}

std::string FactTable::option_text(int relation, int value_idx) const {
  return " " + values.at(relation).at(value_idx) + ".";
}

FactTable make_fact_table(const SynthSpec& spec) {
  if (spec.num_facts < 1 || spec.num_relations < 1 || spec.values_per_relation < 2)
    throw InputError("SynthSpec: need at least 1 fact, 1 relation, 2 values per relation");
  if (spec.num_relations > kMaxRelations)
    throw InputError("SynthSpec: at most 8 relations supported");
  if (spec.entity_chars < 2) throw InputError("SynthSpec: entity_chars must be >= 2");
  Rng rng = Rng(spec.seed).fork(0x66616374);
  FactTable t;
  std::set<std::string> used;
  for (int r = 0; r < spec.num_relations; ++r) {
    t.relations.push_back(kRelationWords[r]);
    std::vector<std::string> pool;
    for (int v = 0; v < spec.values_per_relation; ++v)
      pool.push_back(unique_word(spec.entity_chars, rng, used));
    t.values.push_back(std::move(pool));
  }
  for (int i = 0; i < spec.num_facts; ++i) {
    Fact f;
    f.subject = unique_word(spec.entity_chars, rng, used);
    f.relation = static_cast<int>(rng.below(spec.num_relations));
    f.value = static_cast<int>(rng.below(spec.values_per_relation));
    t.facts.push_back(std::move(f));
  }
  return t;
}

std::string make_corpus_text(const SynthSpec& spec, const FactTable& table) {
  Rng rng = Rng(spec.seed).fork(0x636f7270);

  // Filler lexicon: fixed function words plus generated content words.
  std::vector<std::string> lexicon = {"the", "a",  "of", "and", "in",   "on",
                                      "was", "is", "to", "it",  "near", "with"};
  std::set<std::string> used(lexicon.begin(), lexicon.end());
  for (int i = 0; i < 200; ++i)
    lexicon.push_back(unique_word(3 + static_cast<int>(rng.below(5)), rng, used));

  std::vector<std::string> sentences;
  sentences.reserve(static_cast<std::size_t>(table.facts.size()) * spec.fact_repeats +
                    spec.filler_sentences);
  for (std::size_t f = 0; f < table.facts.size(); ++f)
    for (int r = 0; r < spec.fact_repeats; ++r)
      sentences.push_back(table.sentence(static_cast<int>(f)));
  for (int i = 0; i < spec.filler_sentences; ++i) {
    const int words = 4 + static_cast<int>(rng.below(6));
    std::string s;
    for (int w = 0; w < words; ++w) {
      if (w) s += " ";
      s += lexicon[rng.below(lexicon.size())];
    }
    s += ".";
    sentences.push_back(std::move(s));
  }
  // Fisher-Yates, fixed stream.
  for (std::size_t i = sentences.size(); i > 1; --i)
    std::swap(sentences[i - 1], sentences[rng.below(i)]);

  std::string text;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i) text += " ";
    text += sentences[i];
  }
  text += "\n";
  return text;
}

void write_corpus_file(const std::string& path, const SynthSpec& spec) {
  const FactTable table = make_fact_table(spec);
  const std::string text = make_corpus_text(spec, table);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

CorpusStream::CorpusStream(const CorpusSpec& spec, Split split) {
  std::ifstream in(spec.path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + spec.path);
  std::ostringstream ss;
  ss << in.rdbuf();
  spec_ = spec;
  split_ = split;
  build(ss.str());
}

CorpusStream CorpusStream::from_text(std::string text, const CorpusSpec& spec, Split split) {
  CorpusStream c;
  c.spec_ = spec;
  c.split_ = split;
  c.build(std::move(text));
  return c;
}

void CorpusStream::build(std::string text) {
  if (spec_.seq_len < 1) throw InputError("CorpusSpec: seq_len must be positive");
  if (spec_.val_fraction < 0.0 || spec_.val_fraction >= 1.0)
    throw InputError("CorpusSpec: val_fraction must be in [0, 1)");
  std::uint64_t h = fnv1a64(text.data(), text.size());
  const std::string salt = "|" + std::to_string(spec_.seq_len) + "|" +
                           std::to_string(spec_.shuffle_seed) + "|" +
                           format_double(spec_.val_fraction, "%.6g") + "|" +
                           split_name(split_) + "|" + tokenizer_.id();
  h = fnv1a64(salt.data(), salt.size(), h);
  fingerprint_ = to_hex(h);

  tokens_ = tokenizer_.tokenize(text);
  const std::int64_t windows = static_cast<std::int64_t>(tokens_.size()) / spec_.seq_len;
  if (windows < 1)
    throw InputError("corpus too small: no full window of " + std::to_string(spec_.seq_len) +
                     " tokens");
  std::vector<std::int64_t> order(windows);
  for (std::int64_t i = 0; i < windows; ++i) order[i] = i;
  Rng rng(spec_.shuffle_seed);
  for (std::int64_t i = windows; i > 1; --i)
    std::swap(order[i - 1], order[rng.below(static_cast<std::uint64_t>(i))]);
  const std::int64_t val_count =
      std::min<std::int64_t>(windows - 1,
                             static_cast<std::int64_t>(spec_.val_fraction * windows));
  const std::int64_t train_count = windows - val_count;
  if (split_ == Split::kTrain)
    window_ids_.assign(order.begin(), order.begin() + train_count);
  else
    window_ids_.assign(order.begin() + train_count, order.end());
}

std::vector<std::int32_t> CorpusStream::sequence(std::int64_t i) const {
  const std::int64_t w = window_ids_.at(i);
  std::vector<std::int32_t> seq;
  seq.reserve(spec_.seq_len + 1);
  seq.push_back(ByteTokenizer::kBos);
  const std::int64_t begin = w * spec_.seq_len;
  seq.insert(seq.end(), tokens_.begin() + begin, tokens_.begin() + begin + spec_.seq_len);
  return seq;
}

}  // namespace lp
