#include "lp/heal.hpp"

#include <map>
#include <sstream>
#include <thread>

namespace lp {

std::int64_t adapter_param_count(const Model& model) {
  if (!model.has_adapters()) return 0;
  return count_params(model, ParamFilter::kAdaptersOnly);
}

double aux_mismatch_loss(const Model& teacher, const Model& student, const PruneSpec& spec,
                         std::span<const std::int32_t> tokens) {
  if (!teacher.config.same_shape(student.config) &&
      !(teacher.config.hidden_dim == student.config.hidden_dim &&
        teacher.config.vocab_size == student.config.vocab_size &&
        teacher.config.num_heads == student.config.num_heads &&
        teacher.config.ffn_dim == student.config.ffn_dim &&
        teacher.config.norm_kind == student.config.norm_kind))
    throw InputError("aux_mismatch_loss: teacher/student configs disagree");
  if (student.num_layers() != teacher.num_layers() - spec.count)
    throw InputError("aux_mismatch_loss: student layer count does not match the spec");
  if (spec.start < 0 || spec.start + spec.count > teacher.num_layers())
    throw InputError("aux_mismatch_loss: spec range invalid for teacher");
  const auto tr = teacher.forward(tokens, true);
  const auto sr = student.forward(tokens, true);
  const VecF& target = tr.trace->stream[spec.start + spec.count];
  const VecF& got = sr.trace->stream[spec.start];
  double mse = 0.0;
  for (Eigen::Index j = 0; j < target.size(); ++j) {
    const double d = static_cast<double>(got[j]) - static_cast<double>(target[j]);
    mse += d * d;
  }
  return mse / static_cast<double>(target.size());
}

double lr_at(const TrainSchedule& sched, int step) {
  sched.validate();
  if (step < 0) throw InputError("lr_at: negative step");
  if (sched.warmup_steps > 0 && step <= sched.warmup_steps)
    return sched.peak_lr * static_cast<double>(step) / sched.warmup_steps;
  if (step >= sched.total_steps) return 0.0;
  const double progress = static_cast<double>(step - sched.warmup_steps) /
                          static_cast<double>(sched.total_steps - sched.warmup_steps);
  return sched.peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void AdamW::step(Model& model, const GradientsT<float>& grads, double lr, ParamFilter scope) {
  ++t_;
  auto params = param_table(model, scope);
  auto gtab = param_table(const_cast<Model&>(grads.tensors), scope);
  if (params.size() != gtab.size()) throw ShapeError("AdamW: gradient table mismatch");
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != gtab[i].name || params[i].count != gtab[i].count)
      throw ShapeError("AdamW: gradient tensor mismatch at " + params[i].name);
    auto& [m, v] = state_[params[i].name];
    if (m.empty()) {
      m.assign(params[i].count, 0.0f);
      v.assign(params[i].count, 0.0f);
    }
    float* p = params[i].data;
    const float* g = gtab[i].data;
    for (Eigen::Index j = 0; j < params[i].count; ++j) {
      m[j] = static_cast<float>(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
      v[j] = static_cast<float>(beta2_ * v[j] + (1.0 - beta2_) * double(g[j]) * g[j]);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] = static_cast<float>(p[j] - lr * (mhat / (std::sqrt(vhat) + eps_) +
                                             weight_decay_ * p[j]));
    }
  }
}

namespace {

struct StepStats {
  double loss = 0.0;
  double aux = 0.0;
};

// One optimization step: per-sequence forward/backward in parallel, gradient
// partials combined in worker order, then a single optimizer update. The
// reduction order is fixed, so a run is reproducible for a given thread
// count, and exactly reproducible on one thread.
StepStats train_step(Model& model, const CorpusStream& corpus, const TrainSchedule& sched,
                     ParamFilter scope, const Model* teacher, const PruneSpec* spec,
                     AdamW& opt, int step, Rng& batch_rng) {
  const int B = sched.batch_size;
  std::vector<std::int64_t> batch(B);
  for (int j = 0; j < B; ++j)
    batch[j] = static_cast<std::int64_t>(batch_rng.below(corpus.size()));

  const int workers = std::max(1, std::min<int>(num_threads(), B));
  const int chunk = (B + workers - 1) / workers;
  std::vector<GradientsT<float>> partials(workers);
  std::vector<char> has_partial(workers, 0);
  std::vector<double> seq_loss(B, 0.0), seq_aux(B, 0.0);
  std::vector<std::exception_ptr> errors(workers);

  auto work = [&](int w) {
    try {
      for (int j = w * chunk; j < std::min(B, (w + 1) * chunk); ++j) {
        std::vector<std::int32_t> seq = corpus.sequence(batch[j]);
        if (sched.seq_len > 0 && static_cast<int>(seq.size()) > sched.seq_len + 1)
          seq.resize(sched.seq_len + 1);
        BackwardOptionsT<float> bopt;
        bopt.scope = scope;
        VecF aux_target;
        if (sched.aux_weight > 0.0) {
          const auto tr = teacher->forward(std::span<const std::int32_t>(seq), true);
          aux_target = tr.trace->stream[spec->start + spec->count];
          bopt.aux_weight = sched.aux_weight;
          bopt.aux_cut = spec->start;
          bopt.aux_target = &aux_target;
        }
        Rng drop_rng = Rng(sched.seed).fork(0x64726f70 + static_cast<std::uint64_t>(step) *
                                                             131071ull +
                                            static_cast<std::uint64_t>(j));
        const bool want_dropout =
            model.has_adapters() && model.adapters->dropout > 0.0;
        auto res = compute_gradients(model, std::span<const std::int32_t>(seq), bopt,
                                     want_dropout ? &drop_rng : nullptr);
        seq_loss[j] = res.loss;
        seq_aux[j] = res.aux_loss;
        if (!has_partial[w]) {
          partials[w] = std::move(res.grads);
          has_partial[w] = 1;
        } else {
          axpy_params(partials[w].tensors, res.grads.tensors, 1.0f, scope);
        }
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  int first = -1;
  for (int w = 0; w < workers; ++w) {
    if (!has_partial[w]) continue;
    if (first < 0) {
      first = w;
    } else {
      axpy_params(partials[first].tensors, partials[w].tensors, 1.0f, scope);
    }
  }
  scale_params(partials[first].tensors, 1.0f / static_cast<float>(B), scope);
  opt.step(model, partials[first], lr_at(sched, step), scope);

  StepStats stats;
  for (int j = 0; j < B; ++j) {
    stats.loss += seq_loss[j];
    stats.aux += seq_aux[j];
  }
  stats.loss /= B;
  stats.aux /= B;
  return stats;
}

TrainResult train_loop(Model& model, const CorpusStream& corpus, const TrainSchedule& sched,
                       ParamFilter scope, const Model* teacher, const PruneSpec* spec) {
  sched.validate();
  if (corpus.size() < 1) throw InputError("train: empty corpus");
  if (sched.aux_weight > 0.0 && (teacher == nullptr || spec == nullptr))
    throw InputError("train: aux_weight > 0 requires a teacher model and prune spec");

  AdamW opt(sched.weight_decay);
  Rng batch_rng = Rng(sched.seed).fork(0x62617463);
  TrainResult result;
  double initial_loss = 0.0;
  int divergent_streak = 0;
  for (int step = 0; step < sched.total_steps; ++step) {
    StepStats stats;
    try {
      stats = train_step(model, corpus, sched, scope, teacher, spec, opt, step, batch_rng);
    } catch (const TrainingError& e) {
      throw TrainingError("step " + std::to_string(step) + ": " + e.what());
    }
    result.curve.push_back({step, lr_at(sched, step), stats.loss, stats.aux});
    if (step == 0) initial_loss = stats.loss;
    const double total = stats.loss + sched.aux_weight * stats.aux;
    if (!std::isfinite(total))
      throw TrainingError("step " + std::to_string(step) + ": non-finite loss");
    if (total > sched.divergence_factor * std::max(initial_loss, 1e-12)) {
      if (++divergent_streak >= sched.divergence_patience)
        throw TrainingError("diverged: loss " + format_double(total, "%.6g") + " exceeded " +
                            format_double(sched.divergence_factor, "%.3g") + "x initial (" +
                            format_double(initial_loss, "%.6g") + ") for " +
                            std::to_string(divergent_streak) + " consecutive steps, at step " +
                            std::to_string(step));
    } else {
      divergent_streak = 0;
    }
  }
  return result;
}

}  // namespace

TrainResult pretrain(Model& model, const CorpusStream& train, const TrainSchedule& sched) {
  if (model.has_adapters())
    throw InputError("pretrain: expected a plain model without adapters");
  return train_loop(model, train, sched, ParamFilter::kAll, nullptr, nullptr);
}

TrainResult heal(Model& model, const CorpusStream& train, const TrainSchedule& sched,
                 const Model* teacher, const PruneSpec* spec) {
  if (!model.has_adapters()) throw InputError("heal: attach adapters first");
  if (spec != nullptr &&
      (spec->start < 0 || spec->start > model.num_layers()))
    throw InputError("heal: prune spec cut outside the pruned model");
  return train_loop(model, train, sched, ParamFilter::kAdaptersOnly, teacher, spec);
}

std::string curve_csv(const TrainResult& result, const std::string& model_fingerprint,
                      const std::string& corpus_fingerprint, const TrainSchedule& sched) {
  std::ostringstream o;
  o << "# schema: train-curve v1\n";
  o << "# model: " << model_fingerprint << "\n";
  o << "# corpus: " << corpus_fingerprint << "\n";
  o << "# schedule: total_steps=" << sched.total_steps << " warmup_steps=" << sched.warmup_steps
    << " peak_lr=" << format_double(sched.peak_lr, "%.9g") << " batch_size=" << sched.batch_size
    << " seq_len=" << sched.seq_len << " seed=" << sched.seed
    << " aux_weight=" << format_double(sched.aux_weight, "%.9g")
    << " weight_decay=" << format_double(sched.weight_decay, "%.9g") << "\n";
  o << "step,lr,train_loss,aux_loss\n";
  for (const auto& p : result.curve)
    o << p.step << "," << format_double(p.lr, "%.9g") << ","
      << format_double(p.train_loss, "%.9g") << "," << format_double(p.aux_loss, "%.9g")
      << "\n";
  return o.str();
}

}  // namespace lp
