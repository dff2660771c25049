#pragma once

#include <cstdint>
#include <string>

#include "lp/common.hpp"

namespace lp {

enum class NormKind { kRmsNorm, kLayerNorm };

std::string norm_kind_name(NormKind k);
NormKind norm_kind_from_name(const std::string& name);

// Architecture of the decoder-only model. Pre-norm residual blocks with
// rotary positions, so the residual stream carries no additive positional
// term.
struct ModelConfig {
  int num_layers = 2;
  int hidden_dim = 64;
  int num_heads = 4;
  int ffn_dim = 128;
  int vocab_size = 257;
  int max_seq_len = 128;
  NormKind norm_kind = NormKind::kRmsNorm;
  bool use_ffn_gate = false;
  bool tie_embeddings = false;
  std::uint64_t seed = 0;

  int head_dim() const { return hidden_dim / num_heads; }

  void validate() const {
    if (num_layers < 1) throw InputError("ModelConfig: num_layers must be >= 1");
    if (hidden_dim < 1) throw InputError("ModelConfig: hidden_dim must be positive");
    if (num_heads < 1) throw InputError("ModelConfig: num_heads must be positive");
    if (hidden_dim % num_heads != 0)
      throw InputError("ModelConfig: hidden_dim must be divisible by num_heads");
    if (ffn_dim < 1) throw InputError("ModelConfig: ffn_dim must be positive");
    if (vocab_size < 2) throw InputError("ModelConfig: vocab_size must be >= 2");
    if (max_seq_len < 1) throw InputError("ModelConfig: max_seq_len must be positive");
  }

  bool same_shape(const ModelConfig& o) const {
    return num_layers == o.num_layers && hidden_dim == o.hidden_dim &&
           num_heads == o.num_heads && ffn_dim == o.ffn_dim &&
           vocab_size == o.vocab_size && norm_kind == o.norm_kind &&
           use_ffn_gate == o.use_ffn_gate && tie_embeddings == o.tie_embeddings;
  }
};

}  // namespace lp
