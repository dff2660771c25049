#include "lp/tokenizer.hpp"

#include "lp/common.hpp"

namespace lp {

std::string ByteTokenizer::detokenize(std::span<const std::int32_t> tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (std::int32_t t : tokens) {
    if (t >= 0 && t < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    } else if (t == kBos) {
      // specials carry no bytes
    } else {
      throw InputError("detokenize: unknown token id " + std::to_string(t));
    }
  }
  return out;
}

}  // namespace lp
