#include "lp/prune.hpp"

#include <sstream>

namespace lp {

std::string strategy_name(PruneStrategy s) {
  return s == PruneStrategy::kSimilarity ? "similarity" : "deepest";
}

PruneStrategy strategy_from_name(const std::string& name) {
  if (name == "similarity") return PruneStrategy::kSimilarity;
  if (name == "deepest" || name == "deepest-heuristic") return PruneStrategy::kDeepestHeuristic;
  throw InputError("unknown strategy '" + name + "' (expected similarity or deepest)");
}

nlohmann::json prune_spec_to_json(const PruneSpec& spec) {
  nlohmann::json j{{"strategy", strategy_name(spec.strategy)},
                   {"count", spec.count},
                   {"start", spec.start}};
  if (!spec.distance_fingerprint.empty()) j["distance_matrix"] = spec.distance_fingerprint;
  return j;
}

PruneSpec prune_spec_from_json(const nlohmann::json& j) {
  PruneSpec s;
  try {
    s.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    s.count = j.at("count").get<int>();
    s.start = j.at("start").get<int>();
    s.distance_fingerprint = j.value("distance_matrix", "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("prune spec: ") + e.what());
  }
  return s;
}

PruneSpec plan_similarity(const DistanceMatrix& matrix, int n) {
  if (n < 1) throw InputError("plan_similarity: n must be >= 1");
  if (n >= matrix.num_layers)
    throw InputError("plan_similarity: n must be smaller than the layer count");
  if (n > matrix.n_max)
    throw InputError("plan_similarity: matrix does not cover block size " + std::to_string(n));
  PruneSpec spec;
  spec.strategy = PruneStrategy::kSimilarity;
  spec.count = n;
  spec.start = optimal_block(matrix, n);
  spec.distance_fingerprint = matrix.fingerprint();
  return spec;
}

PruneSpec plan_heuristic(int num_layers, int n) {
  if (n < 1) throw InputError("plan_heuristic: n must be >= 1");
  if (n >= num_layers)
    throw InputError("plan_heuristic: n must be smaller than the layer count");
  PruneSpec spec;
  spec.strategy = PruneStrategy::kDeepestHeuristic;
  spec.count = n;
  spec.start = num_layers - n;
  return spec;
}

std::int64_t ArchShape::block_params() const {
  const std::int64_t kv_dim = head_dim() * num_kv_heads;
  const std::int64_t attn = 2 * hidden_dim * hidden_dim + 2 * hidden_dim * kv_dim;
  const std::int64_t ffn = (gated_ffn ? 3 : 2) * hidden_dim * ffn_dim;
  const std::int64_t norms = 2 * hidden_dim;
  return num_layers * (attn + ffn + norms);
}

std::int64_t ArchShape::embedding_params() const {
  return (tied_embeddings ? 1 : 2) * vocab_size * hidden_dim;
}

std::int64_t ArchShape::other_params() const { return hidden_dim; }

ArchShape ArchShape::from_model_config(const ModelConfig& cfg) {
  ArchShape s;
  s.name = "model-config";
  s.num_layers = cfg.num_layers;
  s.hidden_dim = cfg.hidden_dim;
  s.num_heads = cfg.num_heads;
  s.num_kv_heads = cfg.num_heads;
  s.ffn_dim = cfg.ffn_dim;
  s.vocab_size = cfg.vocab_size;
  s.gated_ffn = cfg.use_ffn_gate;
  s.tied_embeddings = cfg.tie_embeddings;
  return s;
}

ArchShape llama2_70b_shape() {
  ArchShape s;
  s.name = "llama2-70b";
  s.num_layers = 80;
  s.hidden_dim = 8192;
  s.num_heads = 64;
  s.num_kv_heads = 8;
  s.ffn_dim = 28672;
  s.vocab_size = 32000;
  s.gated_ffn = true;
  s.tied_embeddings = false;
  return s;
}

ArchShape shape_preset(const std::string& name) {
  if (name == "llama2-70b") return llama2_70b_shape();
  throw InputError("unknown shape preset '" + name + "'");
}

ResourceEstimate estimate_resources(const ArchShape& shape, double prune_fraction,
                                    int weight_bits) {
  if (prune_fraction < 0.0 || prune_fraction >= 1.0)
    throw InputError("estimate_resources: prune_fraction must be in [0, 1)");
  if (weight_bits != 16 && weight_bits != 4)
    throw InputError("estimate_resources: weight_bits must be 16 or 4");
  ResourceEstimate e;
  e.shape_name = shape.name;
  e.prune_fraction = prune_fraction;
  e.weight_bits = weight_bits;
  e.params_total = shape.total_params();
  e.params_blocks_retained = static_cast<double>(shape.block_params()) * (1.0 - prune_fraction);
  e.params_nonembedding_retained =
      e.params_blocks_retained + static_cast<double>(shape.other_params());
  e.params_retained =
      e.params_nonembedding_retained + static_cast<double>(shape.embedding_params());
  e.memory_bytes = e.params_retained * weight_bits / 8.0;
  e.flops_per_token = 2.0 * e.params_nonembedding_retained;
  e.convention =
      "memory = retained params x bits/8; flops/token = 2 x non-embedding retained params "
      "(forward pass, compute always 16-bit)";
  return e;
}

std::string estimate_text(const ResourceEstimate& e) {
  std::ostringstream o;
  o << e.shape_name << " @ " << format_double(100.0 * e.prune_fraction, "%.4g") << "% pruned, "
    << e.weight_bits << "-bit weights\n"
    << "  total params (unpruned): " << e.params_total << "\n"
    << "  retained params:         " << format_double(e.params_retained, "%.6g") << "\n"
    << "  weight memory:           " << format_double(e.memory_bytes / 1e9, "%.6g") << " GB\n"
    << "  flops per token:         " << format_double(e.flops_per_token, "%.6g") << "\n"
    << "  convention: " << e.convention << "\n";
  return o.str();
}

std::string estimate_csv(const std::vector<ResourceEstimate>& rows) {
  std::ostringstream o;
  o << "# schema: resource-estimate v1\n";
  o << "shape,prune_fraction,weight_bits,params_total,params_retained,"
       "params_blocks_retained,params_nonembedding_retained,memory_bytes,flops_per_token\n";
  for (const auto& e : rows) {
    o << e.shape_name << "," << format_double(e.prune_fraction, "%.9g") << "," << e.weight_bits
      << "," << e.params_total << "," << format_double(e.params_retained, "%.9g") << ","
      << format_double(e.params_blocks_retained, "%.9g") << ","
      << format_double(e.params_nonembedding_retained, "%.9g") << ","
      << format_double(e.memory_bytes, "%.9g") << ","
      << format_double(e.flops_per_token, "%.9g") << "\n";
  }
  return o.str();
}

}  // namespace lp
