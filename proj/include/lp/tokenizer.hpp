#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lp {

// Byte-level tokenizer: ids 0..255 are raw bytes, 256 is BOS. tokenize never
// emits specials, so detokenize(tokenize(x)) == x for arbitrary byte strings.
class ByteTokenizer {
 public:
  static constexpr std::int32_t kBos = 256;
  static constexpr int kVocabSize = 257;

  int vocab_size() const { return kVocabSize; }
  std::string id() const { return "byte-v1"; }

  std::vector<std::int32_t> tokenize(std::string_view text) const {
    std::vector<std::int32_t> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(static_cast<std::int32_t>(c));
    return out;
  }

  std::string detokenize(std::span<const std::int32_t> tokens) const;
};

}  // namespace lp
