#pragma once

#include <tuple>
#include <vector>

#include "lp/model.hpp"

namespace lp {

// Gradient storage mirrors the model layout so the same visitation order
// serves parameters and gradients.
template <class S>
struct GradientsT {
  ModelT<S> tensors;
  ParamFilter scope = ParamFilter::kAll;
};

template <class S>
ModelT<S> zero_like(const ModelT<S>& m) {
  ModelT<S> z = m;
  visit_params(z, ParamFilter::kAll,
               [](const std::string&, S* p, Eigen::Index r, Eigen::Index c) {
                 std::fill(p, p + r * c, S(0));
               });
  return z;
}

template <class S>
struct ParamRef {
  std::string name;
  S* data;
  Eigen::Index count;
};

template <class S>
std::vector<ParamRef<S>> param_table(ModelT<S>& m, ParamFilter filter) {
  std::vector<ParamRef<S>> out;
  visit_params(m, filter, [&](const std::string& n, S* p, Eigen::Index r, Eigen::Index c) {
    out.push_back({n, p, r * c});
  });
  return out;
}

// dst += scale * src over the selected parameter set.
template <class S>
void axpy_params(ModelT<S>& dst, const ModelT<S>& src, S scale, ParamFilter filter) {
  auto d = param_table(dst, filter);
  auto s = param_table(const_cast<ModelT<S>&>(src), filter);
  if (d.size() != s.size()) throw ShapeError("axpy_params: mismatched parameter sets");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].count != s[i].count || d[i].name != s[i].name)
      throw ShapeError("axpy_params: mismatched tensor " + d[i].name);
    Eigen::Map<Vec<S>>(d[i].data, d[i].count) +=
        scale * Eigen::Map<const Vec<S>>(s[i].data, s[i].count);
  }
}

template <class S>
void scale_params(ModelT<S>& m, S scale, ParamFilter filter) {
  visit_params(m, filter, [&](const std::string&, S* p, Eigen::Index r, Eigen::Index c) {
    Eigen::Map<Vec<S>>(p, r * c) *= scale;
  });
}

template <class S>
struct BackwardOptionsT {
  ParamFilter scope = ParamFilter::kAll;
  // Auxiliary mismatch term: adds aux_weight * d/dx of the final-token MSE
  // against aux_target at residual-stream index aux_cut.
  double aux_weight = 0.0;
  int aux_cut = -1;
  const Vec<S>* aux_target = nullptr;
};

namespace detail {

template <class S>
void norm_backward(NormKind kind, const Mat<S>& x, const Vec<S>& gain,
                   const Vec<double>& means, const Vec<double>& invs, const Mat<S>& dy,
                   Mat<S>& dx, Vec<S>* dgain, Vec<S>* dbias) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  dx.resize(rows, cols);
  for (Eigen::Index t = 0; t < rows; ++t) {
    const double inv = invs[t];
    if (kind == NormKind::kLayerNorm) {
      const double mean = means[t];
      double m1 = 0.0, m2 = 0.0;
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double xh = (static_cast<double>(x(t, j)) - mean) * inv;
        const double dxh = static_cast<double>(dy(t, j)) * static_cast<double>(gain[j]);
        m1 += dxh;
        m2 += dxh * xh;
        if (dgain) (*dgain)[j] += static_cast<S>(static_cast<double>(dy(t, j)) * xh);
        if (dbias) (*dbias)[j] += dy(t, j);
      }
      m1 /= static_cast<double>(cols);
      m2 /= static_cast<double>(cols);
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double xh = (static_cast<double>(x(t, j)) - mean) * inv;
        const double dxh = static_cast<double>(dy(t, j)) * static_cast<double>(gain[j]);
        dx(t, j) = static_cast<S>(inv * (dxh - m1 - xh * m2));
      }
    } else {
      double dot = 0.0;
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double g = static_cast<double>(gain[j]);
        dot += static_cast<double>(dy(t, j)) * g * static_cast<double>(x(t, j));
        if (dgain)
          (*dgain)[j] += static_cast<S>(static_cast<double>(dy(t, j)) *
                                        static_cast<double>(x(t, j)) * inv);
      }
      const double k = inv * inv * inv * dot / static_cast<double>(cols);
      for (Eigen::Index j = 0; j < cols; ++j)
        dx(t, j) = static_cast<S>(inv * static_cast<double>(gain[j]) *
                                      static_cast<double>(dy(t, j)) -
                                  k * static_cast<double>(x(t, j)));
    }
  }
}

// Backward of y += scale * (drop(x) * b) * a. Returns the branch's gradient
// contribution to x; accumulates factor gradients when requested.
template <class S>
void lora_branch_backward(const Mat<S>& x, const AdapterPairT<S>& pair,
                          const LoraBranchCacheT<S>& cache, double scale, const Mat<S>& dy,
                          Mat<S>& dx_accum, AdapterPairT<S>* grads) {
  if (!pair.present()) return;
  const S s = static_cast<S>(scale);
  Mat<S> dy_at = dy * pair.a.transpose();  // T x r
  if (grads) {
    grads->a.noalias() += s * (cache.mid.transpose() * dy);
    if (cache.mask.size() > 0)
      grads->b.noalias() += s * ((x.cwiseProduct(cache.mask)).transpose() * dy_at);
    else
      grads->b.noalias() += s * (x.transpose() * dy_at);
  }
  Mat<S> dxb = s * (dy_at * pair.b.transpose());
  if (cache.mask.size() > 0)
    dx_accum += dxb.cwiseProduct(cache.mask);
  else
    dx_accum += dxb;
}

}  // namespace detail

// Reverse pass over a cached forward. dlogits carries the loss gradient
// (zero rows for unscored positions). Returns gradients for the selected
// parameter scope; propagation through frozen tensors still happens, only
// their accumulation is skipped.
template <class S>
GradientsT<S> backward(const ModelT<S>& model, const ForwardCacheT<S>& cache,
                       const Mat<S>& dlogits, const BackwardOptionsT<S>& opt = {}) {
  const int layers = model.num_layers();
  const int T = static_cast<int>(cache.tokens.size());
  const int d = model.config.hidden_dim;
  const int nh = model.config.num_heads;
  const int hd = model.config.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool want_base = opt.scope != ParamFilter::kAdaptersOnly;
  const bool want_adapters = opt.scope != ParamFilter::kBaseOnly && model.has_adapters();
  const AdapterSetT<S>* ad = model.adapters ? &*model.adapters : nullptr;
  if (opt.aux_weight != 0.0) {
    if (opt.aux_cut < 0 || opt.aux_cut > layers || opt.aux_target == nullptr)
      throw InputError("backward: invalid auxiliary cut configuration");
    if (opt.aux_target->size() != d) throw ShapeError("backward: aux target dimension");
  }

  GradientsT<S> g;
  g.tensors = zero_like(model);
  g.scope = opt.scope;

  Mat<S> cos_t, sin_t;
  detail::rope_tables<S>(T, hd, cos_t, sin_t);

  auto inject_aux = [&](Mat<S>& dx, const Mat<S>& stream_x) {
    const double w = opt.aux_weight * 2.0 / static_cast<double>(d);
    for (int j = 0; j < d; ++j)
      dx(T - 1, j) += static_cast<S>(w * (static_cast<double>(stream_x(T - 1, j)) -
                                          static_cast<double>((*opt.aux_target)[j])));
  };

  // Head and final norm.
  Mat<S> dnf;
  if (model.config.tie_embeddings) {
    dnf.noalias() = dlogits * model.embedding;
    if (want_base) g.tensors.embedding.noalias() += dlogits.transpose() * cache.n_final;
  } else {
    dnf.noalias() = dlogits * model.lm_head.transpose();
    if (want_base) g.tensors.lm_head.noalias() += cache.n_final.transpose() * dlogits;
  }
  Mat<S> dx;
  detail::norm_backward(model.config.norm_kind, cache.x_final, model.final_norm_gain,
                        cache.normf_mean, cache.normf_inv, dnf, dx,
                        want_base ? &g.tensors.final_norm_gain : nullptr,
                        want_base && model.final_norm_bias.size() ? &g.tensors.final_norm_bias
                                                                  : nullptr);
  if (opt.aux_weight != 0.0 && opt.aux_cut == layers) inject_aux(dx, cache.x_final);

  Mat<S> dn2, dact, dup_pre, dgate_pre, dn1, dctx, dq, dk, dv, dx_mid_extra, dx_in_extra;
  for (int l = layers - 1; l >= 0; --l) {
    const LayerBlockT<S>& b = model.blocks[l];
    const BlockCacheT<S>& bc = cache.blocks[l];
    LayerBlockT<S>& gb = g.tensors.blocks[l];
    const BlockAdaptersT<S>* ba = ad ? &ad->blocks[l] : nullptr;
    BlockAdaptersT<S>* gba =
        (want_adapters && g.tensors.adapters) ? &g.tensors.adapters->blocks[l] : nullptr;

    // FFN branch: dx is the gradient w.r.t. this block's output stream.
    const Mat<S>& dffn_out = dx;
    if (want_base) gb.ffn_down.noalias() += bc.act.transpose() * dffn_out;
    dact.noalias() = dffn_out * b.ffn_down.transpose();
    if (ba)
      detail::lora_branch_backward(bc.act, ba->down, bc.lora_down, ad->scale(), dffn_out,
                                   dact, gba ? &gba->down : nullptr);

    if (model.config.use_ffn_gate) {
      dup_pre.resize(T, model.config.ffn_dim);
      dgate_pre.resize(T, model.config.ffn_dim);
      for (Eigen::Index i = 0; i < dact.size(); ++i) {
        const S gp = bc.gate_pre.data()[i];
        dup_pre.data()[i] = dact.data()[i] * detail::silu(gp);
        dgate_pre.data()[i] = dact.data()[i] * bc.up_pre.data()[i] * detail::silu_grad(gp);
      }
    } else {
      dup_pre.resize(T, model.config.ffn_dim);
      for (Eigen::Index i = 0; i < dact.size(); ++i)
        dup_pre.data()[i] = dact.data()[i] * detail::gelu_tanh_grad(bc.up_pre.data()[i]);
    }
    if (want_base) gb.ffn_up.noalias() += bc.n2.transpose() * dup_pre;
    dn2.noalias() = dup_pre * b.ffn_up.transpose();
    if (ba)
      detail::lora_branch_backward(bc.n2, ba->up, bc.lora_up, ad->scale(), dup_pre, dn2,
                                   gba ? &gba->up : nullptr);
    if (model.config.use_ffn_gate) {
      if (want_base) gb.ffn_gate.noalias() += bc.n2.transpose() * dgate_pre;
      dn2.noalias() += dgate_pre * b.ffn_gate.transpose();
      if (ba)
        detail::lora_branch_backward(bc.n2, ba->gate, bc.lora_gate, ad->scale(), dgate_pre,
                                     dn2, gba ? &gba->gate : nullptr);
    }
    detail::norm_backward(model.config.norm_kind, bc.x_mid, b.ffn_norm_gain, bc.norm2_mean,
                          bc.norm2_inv, dn2, dx_mid_extra,
                          want_base ? &gb.ffn_norm_gain : nullptr,
                          want_base && b.ffn_norm_bias.size() ? &gb.ffn_norm_bias : nullptr);
    dx += dx_mid_extra;  // dx now holds the gradient w.r.t. x_mid

    // Attention branch.
    const Mat<S>& dattn_out = dx;
    if (want_base) gb.wo.noalias() += bc.ctx.transpose() * dattn_out;
    dctx.noalias() = dattn_out * b.wo.transpose();
    dq.resize(T, d);
    dk.resize(T, d);
    dv.resize(T, d);
    for (int h = 0; h < nh; ++h) {
      const Mat<S>& probs = bc.probs[h];
      auto dctx_h = dctx.middleCols(h * hd, hd);
      auto kh = bc.k.middleCols(h * hd, hd);
      auto qh = bc.q.middleCols(h * hd, hd);
      auto vh = bc.v.middleCols(h * hd, hd);
      dv.middleCols(h * hd, hd).noalias() = probs.transpose() * dctx_h;
      Mat<S> dp = dctx_h * vh.transpose();
      for (int i = 0; i < T; ++i) {
        double row_dot = 0.0;
        for (int j = 0; j <= i; ++j)
          row_dot += static_cast<double>(dp(i, j)) * static_cast<double>(probs(i, j));
        for (int j = 0; j <= i; ++j)
          dp(i, j) = static_cast<S>(static_cast<double>(probs(i, j)) *
                                    (static_cast<double>(dp(i, j)) - row_dot));
        for (int j = i + 1; j < T; ++j) dp(i, j) = S(0);
      }
      dq.middleCols(h * hd, hd).noalias() = static_cast<S>(attn_scale) * (dp * kh);
      dk.middleCols(h * hd, hd).noalias() = static_cast<S>(attn_scale) * (dp.transpose() * qh);
    }
    detail::apply_rope(dq, nh, hd, cos_t, sin_t, true);
    detail::apply_rope(dk, nh, hd, cos_t, sin_t, true);
    if (want_base) {
      gb.wq.noalias() += bc.n1.transpose() * dq;
      gb.wk.noalias() += bc.n1.transpose() * dk;
      gb.wv.noalias() += bc.n1.transpose() * dv;
    }
    dn1.noalias() = dq * b.wq.transpose();
    dn1.noalias() += dk * b.wk.transpose();
    dn1.noalias() += dv * b.wv.transpose();
    detail::norm_backward(model.config.norm_kind, bc.x_in, b.attn_norm_gain, bc.norm1_mean,
                          bc.norm1_inv, dn1, dx_in_extra,
                          want_base ? &gb.attn_norm_gain : nullptr,
                          want_base && b.attn_norm_bias.size() ? &gb.attn_norm_bias : nullptr);
    dx += dx_in_extra;  // gradient w.r.t. x_in == stream[l]

    if (opt.aux_weight != 0.0 && opt.aux_cut == l) inject_aux(dx, bc.x_in);
  }

  if (want_base)
    for (int t = 0; t < T; ++t) g.tensors.embedding.row(cache.tokens[t]) += dx.row(t);
  return g;
}

template <class S>
struct LossAndGrads {
  double loss = 0.0;      // mean next-token cross entropy
  double aux_loss = 0.0;  // unweighted auxiliary mismatch (when configured)
  GradientsT<S> grads;
};

// Forward + loss + backward for one sequence; positions 0..T-2 predict
// tokens 1..T-1. This is the per-sequence unit the trainer parallelizes.
template <class S>
LossAndGrads<S> compute_gradients(const ModelT<S>& model,
                                  std::span<const std::int32_t> tokens,
                                  const BackwardOptionsT<S>& opt = {},
                                  Rng* dropout_rng = nullptr) {
  if (tokens.size() < 2) throw InputError("compute_gradients: need at least 2 tokens");
  ForwardCacheT<S> cache;
  RunOptionsT<S> run_opt;
  run_opt.cache = &cache;
  run_opt.dropout_rng = dropout_rng;
  Mat<S> logits = model.run(tokens, run_opt);
  Mat<S> dlogits;
  LossAndGrads<S> out;
  out.loss = cross_entropy_with_grad(logits, tokens.subspan(1), logits.rows() - 1, dlogits);
  if (!std::isfinite(out.loss))
    throw TrainingError("compute_gradients: non-finite loss");
  if (opt.aux_weight != 0.0) {
    const Mat<S>& stream_x =
        opt.aux_cut == model.num_layers() ? cache.x_final : cache.blocks[opt.aux_cut].x_in;
    double mse = 0.0;
    for (int j = 0; j < model.config.hidden_dim; ++j) {
      const double dlt = static_cast<double>(stream_x(stream_x.rows() - 1, j)) -
                         static_cast<double>((*opt.aux_target)[j]);
      mse += dlt * dlt;
    }
    out.aux_loss = mse / static_cast<double>(model.config.hidden_dim);
  }
  out.grads = backward(model, cache, dlogits, opt);
  return out;
}

}  // namespace lp
