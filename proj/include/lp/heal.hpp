#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lp/autograd.hpp"
#include "lp/corpus.hpp"
#include "lp/model.hpp"
#include "lp/prune.hpp"

namespace lp {

inline const std::vector<std::string> kDefaultAdapterTargets = {"ffn_up", "ffn_down"};

// Attaches zero-initialized low-rank adapters to the named FFN weights of
// every block: a ~ N(0, 0.02), b = 0, so outputs are unchanged at attach
// time. alpha < 0 means alpha = rank.
template <class S>
ModelT<S> attach_adapters(const ModelT<S>& model, int rank,
                          const std::vector<std::string>& targets, double alpha = -1.0,
                          double dropout = 0.0, std::uint64_t seed = 0) {
  if (rank < 1) throw InputError("attach_adapters: rank must be >= 1");
  if (model.has_adapters()) throw InputError("attach_adapters: adapters already attached");
  if (targets.empty()) throw InputError("attach_adapters: no targets");
  if (dropout < 0.0 || dropout >= 1.0)
    throw InputError("attach_adapters: dropout must be in [0, 1)");
  for (const auto& t : targets) {
    if (t != "ffn_up" && t != "ffn_gate" && t != "ffn_down")
      throw InputError("attach_adapters: unknown target '" + t + "'");
    if (t == "ffn_gate" && !model.config.use_ffn_gate)
      throw InputError("attach_adapters: model has no ffn_gate weights");
  }
  ModelT<S> out = model;
  AdapterSetT<S> ad;
  ad.rank = rank;
  ad.alpha = alpha < 0.0 ? static_cast<double>(rank) : alpha;
  ad.dropout = dropout;
  ad.targets = targets;
  ad.blocks.resize(out.blocks.size());
  Rng rng = Rng(seed == 0 ? model.config.seed : seed).fork(0x6c6f7261);
  const int d = model.config.hidden_dim;
  const int f = model.config.ffn_dim;
  for (auto& b : ad.blocks) {
    for (const auto& t : targets) {
      AdapterPairT<S>* pair = t == "ffn_up" ? &b.up : (t == "ffn_gate" ? &b.gate : &b.down);
      const int p = t == "ffn_down" ? f : d;
      const int q = t == "ffn_down" ? d : f;
      pair->a.resize(rank, q);
      detail::fill_normal(pair->a, 0.02, rng);
      pair->b = Mat<S>::Zero(p, rank);
    }
  }
  out.adapters = std::move(ad);
  return out;
}

// Folds W + (alpha/rank) * b * a into the dense weights and drops the
// adapter state.
template <class S>
ModelT<S> merge_adapters(const ModelT<S>& model) {
  if (!model.has_adapters()) throw InputError("merge_adapters: no adapters attached");
  ModelT<S> out = model;
  const AdapterSetT<S>& ad = *model.adapters;
  const S scale = static_cast<S>(ad.scale());
  for (std::size_t i = 0; i < out.blocks.size(); ++i) {
    const BlockAdaptersT<S>& ab = ad.blocks[i];
    if (ab.up.present()) out.blocks[i].ffn_up.noalias() += scale * (ab.up.b * ab.up.a);
    if (ab.gate.present()) out.blocks[i].ffn_gate.noalias() += scale * (ab.gate.b * ab.gate.a);
    if (ab.down.present()) out.blocks[i].ffn_down.noalias() += scale * (ab.down.b * ab.down.a);
  }
  out.adapters.reset();
  return out;
}

std::int64_t adapter_param_count(const Model& model);

// Final-token squared mismatch at the cut: teacher stream l* + n vs the
// pruned student's stream l*, averaged over the hidden dimension.
double aux_mismatch_loss(const Model& teacher, const Model& student, const PruneSpec& spec,
                         std::span<const std::int32_t> tokens);

// Linear warmup to peak_lr over warmup_steps, then cosine decay to zero at
// total_steps. Also the healing hyperparameters.
struct TrainSchedule {
  int total_steps = 500;
  int warmup_steps = 100;
  double peak_lr = 3e-4;
  int batch_size = 16;
  int seq_len = 256;  // sequences longer than this are truncated; 0 = corpus length
  std::uint64_t seed = 0;
  double aux_weight = 0.0;
  double weight_decay = 0.0;
  double divergence_factor = 10.0;
  int divergence_patience = 50;

  void validate() const {
    if (total_steps < 0 || warmup_steps < 0 || warmup_steps > total_steps)
      throw InputError("TrainSchedule: need 0 <= warmup_steps <= total_steps");
    if (batch_size < 1) throw InputError("TrainSchedule: batch_size must be >= 1");
    if (peak_lr < 0.0 || aux_weight < 0.0)
      throw InputError("TrainSchedule: peak_lr and aux_weight must be non-negative");
  }
};

double lr_at(const TrainSchedule& sched, int step);

struct CurvePoint {
  int step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double aux_loss = 0.0;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
};

// Decoupled-weight-decay Adam, beta = (0.9, 0.999), eps 1e-8. State is keyed
// by tensor name, so scope-restricted training leaves other tensors alone.
class AdamW {
 public:
  explicit AdamW(double weight_decay = 0.0) : weight_decay_(weight_decay) {}
  void step(Model& model, const GradientsT<float>& grads, double lr, ParamFilter scope);

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  double weight_decay_;
  int t_ = 0;
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> state_;
};

// Full-parameter training from the pretraining corpus (no adapters).
TrainResult pretrain(Model& model, const CorpusStream& train, const TrainSchedule& sched);

// Adapter-only training of a pruned model. When sched.aux_weight > 0, the
// unpruned teacher and the prune spec locate the mismatch cut.
TrainResult heal(Model& model, const CorpusStream& train, const TrainSchedule& sched,
                 const Model* teacher = nullptr, const PruneSpec* spec = nullptr);

std::string curve_csv(const TrainResult& result, const std::string& model_fingerprint,
                      const std::string& corpus_fingerprint, const TrainSchedule& sched);

}  // namespace lp
