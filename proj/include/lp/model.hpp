#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lp/common.hpp"
#include "lp/config.hpp"

namespace lp {

inline constexpr double kNormEps = 1e-5;

// One pre-norm transformer block: multi-head causal self-attention + FFN on a
// shared residual stream.
template <class S>
struct LayerBlockT {
  Vec<S> attn_norm_gain, attn_norm_bias;  // bias only for LayerNorm
  Mat<S> wq, wk, wv, wo;                  // d x d
  Vec<S> ffn_norm_gain, ffn_norm_bias;
  Mat<S> ffn_up;    // d x f
  Mat<S> ffn_gate;  // d x f, empty unless gated
  Mat<S> ffn_down;  // f x d
};

// Low-rank factor pair for one adapted weight W (p x q):
// effective weight = W + (alpha / rank) * b * a, with a: r x q and b: p x r.
template <class S>
struct AdapterPairT {
  Mat<S> a, b;
  bool present() const { return a.size() > 0; }
};

template <class S>
struct BlockAdaptersT {
  AdapterPairT<S> up, gate, down;
};

template <class S>
struct AdapterSetT {
  int rank = 0;
  double alpha = 0.0;    // defaults to rank at attach time
  double dropout = 0.0;  // applied to the adapter branch input during training
  std::vector<std::string> targets;        // subset of {ffn_up, ffn_gate, ffn_down}
  std::vector<BlockAdaptersT<S>> blocks;   // parallel to model blocks
  double scale() const { return alpha / static_cast<double>(rank); }
};

// Residual-stream snapshot at the final token: stream[l] is the input to
// block l, stream[L] the output of the last block before the final norm.
// increments[l] is block l's total contribution (attention + FFN outputs).
template <class S>
struct ActivationTraceT {
  std::vector<Vec<S>> stream;      // L + 1 entries
  std::vector<Vec<S>> increments;  // L entries
  std::int64_t sequence_id = -1;
  int seq_len = 0;
};

using ActivationTrace = ActivationTraceT<float>;

template <class S>
struct LoraBranchCacheT {
  Mat<S> mid;   // drop(x) * b, T x r
  Mat<S> mask;  // dropout mask (0 or 1/(1-p)); empty when dropout is off
};

template <class S>
struct BlockCacheT {
  Mat<S> x_in, n1;
  Vec<double> norm1_mean, norm1_inv;
  Mat<S> q, k, v;  // q, k post-rope
  std::vector<Mat<S>> probs;
  Mat<S> ctx;
  Mat<S> x_mid, n2;
  Vec<double> norm2_mean, norm2_inv;
  Mat<S> up_pre, gate_pre, act;
  LoraBranchCacheT<S> lora_up, lora_gate, lora_down;
};

template <class S>
struct ForwardCacheT {
  std::vector<std::int32_t> tokens;
  Mat<S> x0;
  std::vector<BlockCacheT<S>> blocks;
  Mat<S> x_final, n_final;
  Vec<double> normf_mean, normf_inv;
  Mat<S> logits;
};

template <class S>
struct RunOptionsT {
  int skip_start = 0;
  int skip_count = 0;
  ActivationTraceT<S>* trace = nullptr;   // incompatible with skipping
  ForwardCacheT<S>* cache = nullptr;      // incompatible with skipping
  Rng* dropout_rng = nullptr;             // adapter dropout; training only
};

template <class S>
struct ForwardResultT {
  Mat<S> logits;
  std::optional<ActivationTraceT<S>> trace;
};

namespace detail {

template <class S>
inline void fill_normal(Mat<S>& m, double stddev, Rng& rng) {
  S* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = static_cast<S>(rng.normal() * stddev);
}

template <class S>
inline void fill_normal(Vec<S>& v, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(rng.normal() * stddev);
}

template <class S>
inline S gelu_tanh(S x) {
  const double z = static_cast<double>(x);
  const double c = 0.7978845608028654;  // sqrt(2/pi)
  const double u = c * (z + 0.044715 * z * z * z);
  return static_cast<S>(0.5 * z * (1.0 + std::tanh(u)));
}

template <class S>
inline S gelu_tanh_grad(S x) {
  const double z = static_cast<double>(x);
  const double c = 0.7978845608028654;
  const double u = c * (z + 0.044715 * z * z * z);
  const double t = std::tanh(u);
  const double sech2 = 1.0 - t * t;
  return static_cast<S>(0.5 * (1.0 + t) + 0.5 * z * sech2 * c * (1.0 + 3.0 * 0.044715 * z * z));
}

template <class S>
inline S silu(S x) {
  const double z = static_cast<double>(x);
  const double sig = 1.0 / (1.0 + std::exp(-z));
  return static_cast<S>(z * sig);
}

template <class S>
inline S silu_grad(S x) {
  const double z = static_cast<double>(x);
  const double sig = 1.0 / (1.0 + std::exp(-z));
  return static_cast<S>(sig * (1.0 + z * (1.0 - sig)));
}

// Rotary tables for positions [0, T); one column pair per rotated dimension.
template <class S>
inline void rope_tables(int seq_len, int head_dim, Mat<S>& cos_t, Mat<S>& sin_t) {
  const int half = head_dim / 2;
  cos_t.resize(seq_len, half);
  sin_t.resize(seq_len, half);
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(head_dim));
    for (int t = 0; t < seq_len; ++t) {
      const double angle = t * freq;
      cos_t(t, i) = static_cast<S>(std::cos(angle));
      sin_t(t, i) = static_cast<S>(std::sin(angle));
    }
  }
}

template <class S>
inline void apply_rope(Mat<S>& x, int num_heads, int head_dim, const Mat<S>& cos_t,
                       const Mat<S>& sin_t, bool inverse) {
  const int half = head_dim / 2;
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    for (int h = 0; h < num_heads; ++h) {
      S* row = x.data() + t * x.cols() + h * head_dim;
      for (int i = 0; i < half; ++i) {
        const S c = cos_t(t, i);
        const S s = inverse ? -sin_t(t, i) : sin_t(t, i);
        const S a = row[2 * i];
        const S b = row[2 * i + 1];
        row[2 * i] = a * c - b * s;
        row[2 * i + 1] = a * s + b * c;
      }
    }
  }
}

// Row-wise pre-norm. Means/inv factors are kept in double for the backward
// pass; LayerNorm uses mean/std, RMSNorm uses the root-mean-square only.
template <class S>
inline void apply_norm(NormKind kind, const Mat<S>& x, const Vec<S>& gain, const Vec<S>& bias,
                       Mat<S>& out, Vec<double>* means, Vec<double>* invs) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  out.resize(rows, cols);
  if (means) means->resize(rows);
  if (invs) invs->resize(rows);
  for (Eigen::Index t = 0; t < rows; ++t) {
    double mean = 0.0, inv = 0.0;
    if (kind == NormKind::kLayerNorm) {
      double m = 0.0;
      for (Eigen::Index j = 0; j < cols; ++j) m += static_cast<double>(x(t, j));
      mean = m / static_cast<double>(cols);
      double var = 0.0;
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double dlt = static_cast<double>(x(t, j)) - mean;
        var += dlt * dlt;
      }
      var /= static_cast<double>(cols);
      inv = 1.0 / std::sqrt(var + kNormEps);
      for (Eigen::Index j = 0; j < cols; ++j)
        out(t, j) = static_cast<S>((static_cast<double>(x(t, j)) - mean) * inv *
                                       static_cast<double>(gain[j]) +
                                   static_cast<double>(bias[j]));
    } else {
      double ms = 0.0;
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double v = static_cast<double>(x(t, j));
        ms += v * v;
      }
      ms /= static_cast<double>(cols);
      inv = 1.0 / std::sqrt(ms + kNormEps);
      for (Eigen::Index j = 0; j < cols; ++j)
        out(t, j) =
            static_cast<S>(static_cast<double>(x(t, j)) * inv * static_cast<double>(gain[j]));
    }
    if (means) (*means)[t] = mean;
    if (invs) (*invs)[t] = inv;
  }
}

// Causal row softmax; the exp is elementwise in S, the denominator is
// accumulated in double.
template <class S>
inline void causal_softmax_inplace(Mat<S>& scores) {
  const Eigen::Index n = scores.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    S m = scores(i, 0);
    for (Eigen::Index j = 1; j <= i; ++j) m = std::max(m, scores(i, j));
    double denom = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      const S e = static_cast<S>(std::exp(static_cast<double>(scores(i, j) - m)));
      scores(i, j) = e;
      denom += static_cast<double>(e);
    }
    const S scale = static_cast<S>(1.0 / denom);
    for (Eigen::Index j = 0; j <= i; ++j) scores(i, j) *= scale;
    for (Eigen::Index j = i + 1; j < scores.cols(); ++j) scores(i, j) = S(0);
  }
}

// y += scale * (drop(x) * b) * a, caching the branch intermediates.
template <class S>
inline void lora_branch(const Mat<S>& x, const AdapterPairT<S>& pair, double scale,
                        double dropout, Rng* rng, Mat<S>& y, LoraBranchCacheT<S>* cache) {
  if (!pair.present()) return;
  Mat<S> mid;
  Mat<S> mask;
  if (dropout > 0.0 && rng != nullptr) {
    mask.resize(x.rows(), x.cols());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - dropout));
    for (Eigen::Index i = 0; i < mask.size(); ++i)
      mask.data()[i] = rng->uniform() < dropout ? S(0) : keep_scale;
    mid.noalias() = (x.cwiseProduct(mask)) * pair.b;
  } else {
    mid.noalias() = x * pair.b;
  }
  y.noalias() += static_cast<S>(scale) * (mid * pair.a);
  if (cache) {
    cache->mid = std::move(mid);
    cache->mask = std::move(mask);
  }
}

}  // namespace detail

template <class S>
class ModelT {
 public:
  ModelConfig config;
  Mat<S> embedding;  // V x d
  std::vector<LayerBlockT<S>> blocks;
  Vec<S> final_norm_gain, final_norm_bias;
  Mat<S> lm_head;  // d x V; empty when tied
  std::optional<AdapterSetT<S>> adapters;

  int num_layers() const { return static_cast<int>(blocks.size()); }
  bool has_adapters() const { return adapters.has_value(); }

  static ModelT random_init(const ModelConfig& cfg) {
    cfg.validate();
    if (cfg.head_dim() % 2 != 0)
      throw InputError("ModelConfig: head_dim must be even for rotary positions");
    ModelT m;
    m.config = cfg;
    Rng rng(splitmix64(cfg.seed ^ 0x6d6f64656c696e69ull));
    const double base_std = 0.02;
    const double resid_std = 0.02 / std::sqrt(2.0 * cfg.num_layers);
    const bool ln = cfg.norm_kind == NormKind::kLayerNorm;

    m.embedding.resize(cfg.vocab_size, cfg.hidden_dim);
    detail::fill_normal(m.embedding, base_std, rng);
    m.blocks.resize(cfg.num_layers);
    for (auto& b : m.blocks) {
      b.attn_norm_gain = Vec<S>::Ones(cfg.hidden_dim);
      if (ln) b.attn_norm_bias = Vec<S>::Zero(cfg.hidden_dim);
      b.wq.resize(cfg.hidden_dim, cfg.hidden_dim);
      b.wk.resize(cfg.hidden_dim, cfg.hidden_dim);
      b.wv.resize(cfg.hidden_dim, cfg.hidden_dim);
      b.wo.resize(cfg.hidden_dim, cfg.hidden_dim);
      detail::fill_normal(b.wq, base_std, rng);
      detail::fill_normal(b.wk, base_std, rng);
      detail::fill_normal(b.wv, base_std, rng);
      detail::fill_normal(b.wo, resid_std, rng);
      b.ffn_norm_gain = Vec<S>::Ones(cfg.hidden_dim);
      if (ln) b.ffn_norm_bias = Vec<S>::Zero(cfg.hidden_dim);
      b.ffn_up.resize(cfg.hidden_dim, cfg.ffn_dim);
      detail::fill_normal(b.ffn_up, base_std, rng);
      if (cfg.use_ffn_gate) {
        b.ffn_gate.resize(cfg.hidden_dim, cfg.ffn_dim);
        detail::fill_normal(b.ffn_gate, base_std, rng);
      }
      b.ffn_down.resize(cfg.ffn_dim, cfg.hidden_dim);
      detail::fill_normal(b.ffn_down, resid_std, rng);
    }
    m.final_norm_gain = Vec<S>::Ones(cfg.hidden_dim);
    if (ln) m.final_norm_bias = Vec<S>::Zero(cfg.hidden_dim);
    if (!cfg.tie_embeddings) {
      m.lm_head.resize(cfg.hidden_dim, cfg.vocab_size);
      detail::fill_normal(m.lm_head, base_std, rng);
    }
    return m;
  }

  void check_tokens(std::span<const std::int32_t> tokens) const {
    if (tokens.empty()) throw InputError("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > config.max_seq_len)
      throw InputError("forward: sequence longer than max_seq_len");
    for (auto t : tokens)
      if (t < 0 || t >= config.vocab_size)
        throw InputError("forward: token id out of range: " + std::to_string(t));
  }

  // The single execution engine. Pruned-model forward and skip-mode forward
  // share it, which is what makes the two bit-identical.
  Mat<S> run(std::span<const std::int32_t> tokens, const RunOptionsT<S>& opt) const {
    check_tokens(tokens);
    const int layers = num_layers();
    if (opt.skip_start < 0 || opt.skip_count < 0 ||
        opt.skip_start + opt.skip_count > layers)
      throw InputError("forward: skip range out of bounds");
    if ((opt.trace || opt.cache) && opt.skip_count > 0)
      throw InputError("forward: trace/cache capture not supported while skipping");

    const int T = static_cast<int>(tokens.size());
    const int d = config.hidden_dim;
    const int nh = config.num_heads;
    const int hd = config.head_dim();
    const int V = config.vocab_size;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const AdapterSetT<S>* ad = adapters ? &*adapters : nullptr;

    Mat<S> cos_t, sin_t;
    detail::rope_tables<S>(T, hd, cos_t, sin_t);

    Mat<S> x(T, d);
    for (int t = 0; t < T; ++t) x.row(t) = embedding.row(tokens[t]);

    if (opt.trace) {
      opt.trace->stream.clear();
      opt.trace->increments.clear();
      opt.trace->seq_len = T;
      opt.trace->stream.push_back(x.row(T - 1).transpose());
    }
    if (opt.cache) {
      opt.cache->tokens.assign(tokens.begin(), tokens.end());
      opt.cache->x0 = x;
      opt.cache->blocks.clear();
      opt.cache->blocks.resize(layers);
    }

    Mat<S> n1, n2, qm, km, vm, ctx, attn_out, up_pre, gate_pre, act, ffn_out;
    for (int l = 0; l < layers; ++l) {
      if (l >= opt.skip_start && l < opt.skip_start + opt.skip_count) continue;
      const LayerBlockT<S>& b = blocks[l];
      BlockCacheT<S>* bc = opt.cache ? &opt.cache->blocks[l] : nullptr;
      if (bc) bc->x_in = x;

      detail::apply_norm(config.norm_kind, x, b.attn_norm_gain, b.attn_norm_bias, n1,
                         bc ? &bc->norm1_mean : nullptr, bc ? &bc->norm1_inv : nullptr);
      qm.noalias() = n1 * b.wq;
      km.noalias() = n1 * b.wk;
      vm.noalias() = n1 * b.wv;
      detail::apply_rope(qm, nh, hd, cos_t, sin_t, false);
      detail::apply_rope(km, nh, hd, cos_t, sin_t, false);

      ctx.resize(T, d);
      if (bc) bc->probs.resize(nh);
      for (int h = 0; h < nh; ++h) {
        auto qh = qm.middleCols(h * hd, hd);
        auto kh = km.middleCols(h * hd, hd);
        auto vh = vm.middleCols(h * hd, hd);
        Mat<S> scores = static_cast<S>(attn_scale) * (qh * kh.transpose());
        detail::causal_softmax_inplace(scores);
        ctx.middleCols(h * hd, hd).noalias() = scores * vh;
        if (bc) bc->probs[h] = std::move(scores);
      }
      attn_out.noalias() = ctx * b.wo;
      if (bc) {
        bc->n1 = n1;
        bc->q = qm;
        bc->k = km;
        bc->v = vm;
        bc->ctx = ctx;
      }
      x += attn_out;
      if (bc) bc->x_mid = x;

      detail::apply_norm(config.norm_kind, x, b.ffn_norm_gain, b.ffn_norm_bias, n2,
                         bc ? &bc->norm2_mean : nullptr, bc ? &bc->norm2_inv : nullptr);
      const BlockAdaptersT<S>* ba = ad ? &ad->blocks[l] : nullptr;
      up_pre.noalias() = n2 * b.ffn_up;
      if (ba)
        detail::lora_branch(n2, ba->up, ad->scale(), ad->dropout, opt.dropout_rng, up_pre,
                            bc ? &bc->lora_up : nullptr);
      act.resize(T, config.ffn_dim);
      if (config.use_ffn_gate) {
        gate_pre.noalias() = n2 * b.ffn_gate;
        if (ba)
          detail::lora_branch(n2, ba->gate, ad->scale(), ad->dropout, opt.dropout_rng, gate_pre,
                              bc ? &bc->lora_gate : nullptr);
        for (Eigen::Index i = 0; i < act.size(); ++i)
          act.data()[i] = detail::silu(gate_pre.data()[i]) * up_pre.data()[i];
      } else {
        for (Eigen::Index i = 0; i < act.size(); ++i)
          act.data()[i] = detail::gelu_tanh(up_pre.data()[i]);
      }
      ffn_out.noalias() = act * b.ffn_down;
      if (ba)
        detail::lora_branch(act, ba->down, ad->scale(), ad->dropout, opt.dropout_rng, ffn_out,
                            bc ? &bc->lora_down : nullptr);
      if (bc) {
        bc->n2 = n2;
        bc->up_pre = up_pre;
        if (config.use_ffn_gate) bc->gate_pre = gate_pre;
        bc->act = act;
      }
      x += ffn_out;

      if (opt.trace) {
        opt.trace->stream.push_back(x.row(T - 1).transpose());
        opt.trace->increments.push_back(
            (attn_out.row(T - 1) + ffn_out.row(T - 1)).transpose());
      }
    }

    Mat<S> nf;
    Vec<double>* fmean = opt.cache ? &opt.cache->normf_mean : nullptr;
    Vec<double>* finv = opt.cache ? &opt.cache->normf_inv : nullptr;
    if (opt.cache) opt.cache->x_final = x;
    detail::apply_norm(config.norm_kind, x, final_norm_gain, final_norm_bias, nf, fmean, finv);
    Mat<S> logits(T, V);
    if (config.tie_embeddings)
      logits.noalias() = nf * embedding.transpose();
    else
      logits.noalias() = nf * lm_head;
    if (opt.cache) {
      opt.cache->n_final = std::move(nf);
      opt.cache->logits = logits;
    }
    return logits;
  }

  Mat<S> forward(std::span<const std::int32_t> tokens) const {
    return run(tokens, RunOptionsT<S>{});
  }

  ForwardResultT<S> forward(std::span<const std::int32_t> tokens, bool capture) const {
    ForwardResultT<S> r;
    if (capture) {
      ActivationTraceT<S> trace;
      RunOptionsT<S> opt;
      opt.trace = &trace;
      r.logits = run(tokens, opt);
      r.trace = std::move(trace);
    } else {
      r.logits = run(tokens, RunOptionsT<S>{});
    }
    return r;
  }

  // Evaluates the model as if blocks [skip_start, skip_start + skip_count)
  // had been removed, without materializing a pruned copy.
  Mat<S> forward_with_skip(std::span<const std::int32_t> tokens, int skip_start,
                           int skip_count) const {
    RunOptionsT<S> opt;
    opt.skip_start = skip_start;
    opt.skip_count = skip_count;
    return run(tokens, opt);
  }
};

using Model = ModelT<float>;

// Mean next-token loss in nats per predicted position. Row i of logits is
// scored against targets[i]; log-sum-exp and the mean run in double.
template <class S>
double cross_entropy(const Mat<S>& logits, std::span<const std::int32_t> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw InputError("cross_entropy: targets length must match logits rows");
  if (logits.rows() == 0) throw InputError("cross_entropy: empty logits");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const std::int32_t y = targets[i];
    if (y < 0 || y >= logits.cols()) throw InputError("cross_entropy: target out of range");
    double m = static_cast<double>(logits(i, 0));
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      m = std::max(m, static_cast<double>(logits(i, j)));
    double denom = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      denom += std::exp(static_cast<double>(logits(i, j)) - m);
    total += m + std::log(denom) - static_cast<double>(logits(i, y));
  }
  return total / static_cast<double>(logits.rows());
}

// Gradient of the mean loss above w.r.t. the scored logits rows. `rows`
// selects how many leading rows of dlogits are scored; remaining rows get
// zero gradient (the model's last position predicts nothing).
template <class S>
double cross_entropy_with_grad(const Mat<S>& logits, std::span<const std::int32_t> targets,
                               Eigen::Index rows, Mat<S>& dlogits) {
  if (static_cast<Eigen::Index>(targets.size()) != rows)
    throw InputError("cross_entropy_with_grad: targets length mismatch");
  if (rows <= 0 || rows > logits.rows())
    throw InputError("cross_entropy_with_grad: bad row count");
  dlogits = Mat<S>::Zero(logits.rows(), logits.cols());
  const double inv_rows = 1.0 / static_cast<double>(rows);
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const std::int32_t y = targets[i];
    if (y < 0 || y >= logits.cols())
      throw InputError("cross_entropy_with_grad: target out of range");
    double m = static_cast<double>(logits(i, 0));
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      m = std::max(m, static_cast<double>(logits(i, j)));
    double denom = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      denom += std::exp(static_cast<double>(logits(i, j)) - m);
    total += m + std::log(denom) - static_cast<double>(logits(i, y));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double p = std::exp(static_cast<double>(logits(i, j)) - m) / denom;
      dlogits(i, j) = static_cast<S>((p - (j == y ? 1.0 : 0.0)) * inv_rows);
    }
  }
  return total * inv_rows;
}

// Next-token loss of a full sequence: positions 0..T-2 predict tokens 1..T-1.
template <class S>
double sequence_loss(const ModelT<S>& model, std::span<const std::int32_t> tokens) {
  if (tokens.size() < 2) throw InputError("sequence_loss: need at least 2 tokens");
  const Mat<S> logits = model.forward(tokens);
  Mat<S> head = logits.topRows(logits.rows() - 1);
  return cross_entropy(head, tokens.subspan(1));
}

// Parameter visitation in canonical (manifest) order. Used by serialization,
// fingerprinting, the optimizer, and the finite-difference checker so that
// all of them agree on naming and ordering.
enum class ParamFilter { kAll, kBaseOnly, kAdaptersOnly };

template <class S, class Fn>
void visit_params(ModelT<S>& m, ParamFilter filter, Fn&& fn) {
  const bool base = filter != ParamFilter::kAdaptersOnly;
  const bool adapters = filter != ParamFilter::kBaseOnly;
  auto mat = [&](const std::string& name, Mat<S>& t) {
    if (t.size() > 0) fn(name, t.data(), t.rows(), t.cols());
  };
  auto vec = [&](const std::string& name, Vec<S>& t) {
    if (t.size() > 0) fn(name, t.data(), t.rows(), Eigen::Index(1));
  };
  if (base) {
    mat("embedding", m.embedding);
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      auto& b = m.blocks[i];
      vec(p + "attn_norm.gain", b.attn_norm_gain);
      vec(p + "attn_norm.bias", b.attn_norm_bias);
      mat(p + "attn.wq", b.wq);
      mat(p + "attn.wk", b.wk);
      mat(p + "attn.wv", b.wv);
      mat(p + "attn.wo", b.wo);
      vec(p + "ffn_norm.gain", b.ffn_norm_gain);
      vec(p + "ffn_norm.bias", b.ffn_norm_bias);
      mat(p + "ffn.up", b.ffn_up);
      mat(p + "ffn.gate", b.ffn_gate);
      mat(p + "ffn.down", b.ffn_down);
    }
    vec("final_norm.gain", m.final_norm_gain);
    vec("final_norm.bias", m.final_norm_bias);
    mat("lm_head", m.lm_head);
  }
  if (adapters && m.adapters) {
    for (std::size_t i = 0; i < m.adapters->blocks.size(); ++i) {
      const std::string p = "adapters.blocks." + std::to_string(i) + ".";
      auto& ab = m.adapters->blocks[i];
      auto pair = [&](const std::string& t, AdapterPairT<S>& ap) {
        if (!ap.present()) return;
        mat(p + t + ".a", ap.a);
        mat(p + t + ".b", ap.b);
      };
      pair("ffn_up", ab.up);
      pair("ffn_gate", ab.gate);
      pair("ffn_down", ab.down);
    }
  }
}

template <class S, class Fn>
void visit_params(const ModelT<S>& m, ParamFilter filter, Fn&& fn) {
  visit_params(const_cast<ModelT<S>&>(m), filter,
               [&](const std::string& name, S* p, Eigen::Index r, Eigen::Index c) {
                 fn(name, static_cast<const S*>(p), r, c);
               });
}

template <class S>
std::int64_t count_params(const ModelT<S>& m, ParamFilter filter = ParamFilter::kAll) {
  std::int64_t n = 0;
  visit_params(m, filter,
               [&](const std::string&, const S*, Eigen::Index r, Eigen::Index c) { n += r * c; });
  return n;
}

template <class S>
bool all_finite(const ModelT<S>& m) {
  bool ok = true;
  visit_params(m, ParamFilter::kAll,
               [&](const std::string&, const S* p, Eigen::Index r, Eigen::Index c) {
                 for (Eigen::Index i = 0; i < r * c; ++i)
                   if (!std::isfinite(static_cast<double>(p[i]))) ok = false;
               });
  return ok;
}

// Scalar-precision conversion, used by the float<->double gradient-check path.
template <class To, class From>
ModelT<To> cast_model(const ModelT<From>& m) {
  ModelT<To> out;
  out.config = m.config;
  out.embedding = m.embedding.template cast<To>();
  out.blocks.resize(m.blocks.size());
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const auto& b = m.blocks[i];
    auto& o = out.blocks[i];
    o.attn_norm_gain = b.attn_norm_gain.template cast<To>();
    if (b.attn_norm_bias.size()) o.attn_norm_bias = b.attn_norm_bias.template cast<To>();
    o.wq = b.wq.template cast<To>();
    o.wk = b.wk.template cast<To>();
    o.wv = b.wv.template cast<To>();
    o.wo = b.wo.template cast<To>();
    o.ffn_norm_gain = b.ffn_norm_gain.template cast<To>();
    if (b.ffn_norm_bias.size()) o.ffn_norm_bias = b.ffn_norm_bias.template cast<To>();
    o.ffn_up = b.ffn_up.template cast<To>();
    if (b.ffn_gate.size()) o.ffn_gate = b.ffn_gate.template cast<To>();
    o.ffn_down = b.ffn_down.template cast<To>();
  }
  out.final_norm_gain = m.final_norm_gain.template cast<To>();
  if (m.final_norm_bias.size()) out.final_norm_bias = m.final_norm_bias.template cast<To>();
  if (m.lm_head.size()) out.lm_head = m.lm_head.template cast<To>();
  if (m.adapters) {
    AdapterSetT<To> ad;
    ad.rank = m.adapters->rank;
    ad.alpha = m.adapters->alpha;
    ad.dropout = m.adapters->dropout;
    ad.targets = m.adapters->targets;
    ad.blocks.resize(m.adapters->blocks.size());
    for (std::size_t i = 0; i < m.adapters->blocks.size(); ++i) {
      auto conv = [](const AdapterPairT<From>& p) {
        AdapterPairT<To> o;
        if (p.present()) {
          o.a = p.a.template cast<To>();
          o.b = p.b.template cast<To>();
        }
        return o;
      };
      ad.blocks[i].up = conv(m.adapters->blocks[i].up);
      ad.blocks[i].gate = conv(m.adapters->blocks[i].gate);
      ad.blocks[i].down = conv(m.adapters->blocks[i].down);
    }
    out.adapters = std::move(ad);
  }
  return out;
}

}  // namespace lp
