#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lp/distance.hpp"
#include "lp/model.hpp"

namespace lp {

enum class PruneStrategy { kSimilarity, kDeepestHeuristic };

std::string strategy_name(PruneStrategy s);
PruneStrategy strategy_from_name(const std::string& name);

// A contiguous block of layer blocks to remove: [start, start + count).
struct PruneSpec {
  PruneStrategy strategy = PruneStrategy::kSimilarity;
  int count = 0;
  int start = 0;
  std::string distance_fingerprint;  // provenance, similarity strategy only

  static PruneSpec identity() { return PruneSpec{PruneStrategy::kSimilarity, 0, 0, ""}; }
};

nlohmann::json prune_spec_to_json(const PruneSpec& spec);
PruneSpec prune_spec_from_json(const nlohmann::json& j);

// Start at the minimum-distance block of size n.
PruneSpec plan_similarity(const DistanceMatrix& matrix, int n);

// Drop the deepest n blocks: [L - n, L). Needs no profiling pass.
PruneSpec plan_heuristic(int num_layers, int n);

// New model with the spec's blocks removed; retained tensors are the
// original tensors, bit for bit, and config.num_layers reflects the cut.
template <class S>
ModelT<S> prune_apply(const ModelT<S>& model, const PruneSpec& spec) {
  const int L = model.num_layers();
  if (spec.start < 0 || spec.count < 0 || spec.start + spec.count > L)
    throw InputError("prune_apply: spec range [" + std::to_string(spec.start) + ", " +
                     std::to_string(spec.start + spec.count) + ") invalid for " +
                     std::to_string(L) + " layers");
  if (spec.count == L) throw InputError("prune_apply: cannot remove every block");
  if (model.has_adapters())
    throw InputError("prune_apply: merge or drop adapters before pruning");
  ModelT<S> out = model;
  out.blocks.erase(out.blocks.begin() + spec.start,
                   out.blocks.begin() + spec.start + spec.count);
  out.config.num_layers = L - spec.count;
  return out;
}

// Abstract architecture dimensions for resource arithmetic on models far
// beyond desk scale.
struct ArchShape {
  std::string name;
  std::int64_t num_layers = 0;
  std::int64_t hidden_dim = 0;
  std::int64_t num_heads = 1;
  std::int64_t num_kv_heads = 1;
  std::int64_t ffn_dim = 0;
  std::int64_t vocab_size = 0;
  bool gated_ffn = true;
  bool tied_embeddings = false;

  std::int64_t head_dim() const { return hidden_dim / num_heads; }
  std::int64_t block_params() const;      // all layer-resident parameters
  std::int64_t embedding_params() const;  // token embedding (+ head if untied)
  std::int64_t other_params() const;      // final norm
  std::int64_t total_params() const {
    return block_params() + embedding_params() + other_params();
  }

  static ArchShape from_model_config(const ModelConfig& cfg);
};

ArchShape llama2_70b_shape();
ArchShape shape_preset(const std::string& name);  // "llama2-70b" or throws

struct ResourceEstimate {
  std::string shape_name;
  double prune_fraction = 0.0;
  int weight_bits = 16;
  std::int64_t params_total = 0;             // unpruned
  double params_retained = 0.0;              // block share scaled by 1 - fraction
  double params_blocks_retained = 0.0;
  double params_nonembedding_retained = 0.0;
  double memory_bytes = 0.0;                 // retained params * bits / 8
  double flops_per_token = 0.0;              // 2 * non-embedding retained params
  std::string convention;
};

// Block-resident parameters scale with (1 - prune_fraction); embeddings and
// head are untouched. Memory follows the weight width; FLOPs use the
// 2 * non-embedding-parameters forward convention at 16-bit compute
// regardless of weight_bits.
ResourceEstimate estimate_resources(const ArchShape& shape, double prune_fraction,
                                    int weight_bits);

std::string estimate_text(const ResourceEstimate& e);
std::string estimate_csv(const std::vector<ResourceEstimate>& rows);

}  // namespace lp
