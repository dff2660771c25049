#include "lp/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <sstream>

#include "lp/checkpoint.hpp"
#include "lp/svg.hpp"

namespace lp {

LossReport eval_loss(const Model& model, const CorpusStream& validation,
                     const EvalOptions& opt) {
  if (validation.size() < 1) throw InputError("eval_loss: empty validation corpus");
  if (opt.sample_sequences < 1) throw InputError("eval_loss: sample_sequences must be >= 1");
  std::vector<std::int64_t> order(validation.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(opt.seed).fork(0x6576616c);
  for (std::int64_t i = static_cast<std::int64_t>(order.size()); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(static_cast<std::uint64_t>(i))]);
  const std::int64_t count = std::min<std::int64_t>(opt.sample_sequences, validation.size());

  std::vector<double> nll(count, 0.0);
  std::vector<std::int64_t> toks(count, 0);
  parallel_for(count, [&](std::int64_t i) {
    const std::vector<std::int32_t> seq = validation.sequence(order[i]);
    const double loss = sequence_loss(model, seq);
    toks[i] = static_cast<std::int64_t>(seq.size()) - 1;
    nll[i] = loss * toks[i];
  });
  double total = 0.0;
  std::int64_t total_tokens = 0;
  for (std::int64_t i = 0; i < count; ++i) {
    total += nll[i];
    total_tokens += toks[i];
  }
  LossReport r;
  r.sequences = count;
  r.tokens = total_tokens;
  r.raw = total / static_cast<double>(total_tokens);
  r.normalized = r.raw / std::log(static_cast<double>(model.config.vocab_size));
  return r;
}

int qa_predict(std::span<const double> option_scores) {
  if (option_scores.empty()) throw InputError("qa_predict: no scores");
  int best = 0;
  for (int i = 1; i < static_cast<int>(option_scores.size()); ++i)
    if (option_scores[i] > option_scores[best]) best = i;
  return best;
}

std::vector<double> qa_option_scores(const Model& model, const QAItem& item) {
  std::vector<std::int32_t> prefix;
  prefix.push_back(ByteTokenizer::kBos);
  prefix.insert(prefix.end(), item.context.begin(), item.context.end());
  prefix.insert(prefix.end(), item.question.begin(), item.question.end());
  std::vector<double> scores;
  for (const auto& option : item.options) {
    if (option.empty()) throw InputError("qa_option_scores: empty option");
    if (static_cast<int>(prefix.size() + option.size()) > model.config.max_seq_len)
      return {};  // item skipped: does not fit the context window
    std::vector<std::int32_t> seq = prefix;
    seq.insert(seq.end(), option.begin(), option.end());
    const MatF logits = model.forward(seq);
    double score = 0.0;
    for (std::size_t p = prefix.size(); p < seq.size(); ++p) {
      const Eigen::Index row = static_cast<Eigen::Index>(p) - 1;
      double m = logits(row, 0);
      for (Eigen::Index j = 1; j < logits.cols(); ++j)
        m = std::max(m, static_cast<double>(logits(row, j)));
      double denom = 0.0;
      for (Eigen::Index j = 0; j < logits.cols(); ++j)
        denom += std::exp(static_cast<double>(logits(row, j)) - m);
      score += static_cast<double>(logits(row, seq[p])) - m - std::log(denom);
    }
    scores.push_back(score);
  }
  return scores;
}

QaReport eval_qa(const Model& model, const SyntheticQASet& qa) {
  QaReport r;
  r.k = qa.k;
  r.total = static_cast<std::int64_t>(qa.items.size());
  std::vector<char> outcome(qa.items.size(), 0);  // 0 skip, 1 wrong, 2 correct
  parallel_for(static_cast<std::int64_t>(qa.items.size()), [&](std::int64_t i) {
    const auto scores = qa_option_scores(model, qa.items[i]);
    if (scores.empty()) return;
    outcome[i] = qa_predict(scores) == qa.items[i].correct ? 2 : 1;
  });
  for (char o : outcome) {
    if (o == 0)
      ++r.skipped;
    else {
      ++r.scored;
      if (o == 2) ++r.correct;
    }
  }
  r.accuracy = r.scored > 0 ? static_cast<double>(r.correct) / r.scored : 0.0;
  return r;
}

EvalReport evaluate(const Model& model, const CorpusStream& validation,
                    const SyntheticQASet* qa2, const SyntheticQASet* qa4,
                    const EvalOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport r;
  r.model_fingerprint = model_fingerprint(model);
  r.seed = opt.seed;
  r.loss = eval_loss(model, validation, opt);
  if (qa2) r.qa2 = eval_qa(model, *qa2);
  if (qa4) r.qa4 = eval_qa(model, *qa4);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

SweepSeries run_sweep(const Model& base, const DistanceMatrix* matrix,
                      const CorpusStream& train, const CorpusStream& validation,
                      const SyntheticQASet* qa2, const SyntheticQASet* qa4,
                      const SweepConfig& cfg) {
  if (cfg.strategies.empty()) throw InputError("run_sweep: no strategies");
  if (cfg.fractions.empty()) throw InputError("run_sweep: no fractions");
  for (std::size_t i = 1; i < cfg.fractions.size(); ++i)
    if (cfg.fractions[i] < cfg.fractions[i - 1])
      throw InputError("run_sweep: fractions must be sorted ascending");
  const int L = base.num_layers();

  bool needs_matrix = false;
  for (auto s : cfg.strategies)
    if (s == PruneStrategy::kSimilarity)
      for (double f : cfg.fractions)
        if (std::lround(f * L) > 0) needs_matrix = true;
  if (needs_matrix && matrix == nullptr)
    throw InputError("run_sweep: similarity strategy requires a distance matrix");

  SweepSeries series;
  series.base_fingerprint = model_fingerprint(base);
  series.train_fingerprint = train.fingerprint();
  series.val_fingerprint = validation.fingerprint();
  series.matrix_fingerprint = matrix ? matrix->fingerprint() : "";
  series.qa2_fingerprint = qa2 ? qa2->fingerprint() : "";
  series.qa4_fingerprint = qa4 ? qa4->fingerprint() : "";
  series.seed = cfg.eval.seed;

  for (auto strategy : cfg.strategies) {
    for (double fraction : cfg.fractions) {
      SweepPoint point;
      point.strategy = strategy;
      point.fraction = fraction;
      point.n = static_cast<int>(std::lround(fraction * L));
      point.healed = cfg.heal && point.n > 0;
      try {
        if (point.n < 0 || point.n >= L)
          throw InputError("fraction maps to invalid block count " +
                           std::to_string(point.n));
        Model subject;
        if (point.n == 0) {
          point.start = 0;
          subject = base;  // fraction-0 entry is the unpruned baseline
        } else {
          const PruneSpec spec = strategy == PruneStrategy::kSimilarity
                                     ? plan_similarity(*matrix, point.n)
                                     : plan_heuristic(L, point.n);
          point.start = spec.start;
          subject = prune_apply(base, spec);
          if (cfg.heal) {
            subject = attach_adapters(subject, cfg.adapter_rank, cfg.adapter_targets,
                                      cfg.adapter_alpha, cfg.adapter_dropout,
                                      cfg.heal_schedule.seed);
            TrainSchedule sched = cfg.heal_schedule;
            heal(subject, train, sched, sched.aux_weight > 0 ? &base : nullptr,
                 sched.aux_weight > 0 ? &spec : nullptr);
          }
        }
        point.report = evaluate(subject, validation, qa2, qa4, cfg.eval);
        point.report.prune_fraction = fraction;
        point.report.strategy = strategy_name(strategy);
        point.report.healed = point.healed;
      } catch (const Error& e) {
        point.status = std::string("error: ") + e.what();
      }
      series.points.push_back(std::move(point));
    }
  }
  return series;
}

std::string sweep_csv(const SweepSeries& series) {
  std::ostringstream o;
  o << "# schema: sweep v1\n";
  o << "# base: " << series.base_fingerprint << "\n";
  o << "# train_corpus: " << series.train_fingerprint << "\n";
  o << "# val_corpus: " << series.val_fingerprint << "\n";
  o << "# distance: " << (series.matrix_fingerprint.empty() ? "-" : series.matrix_fingerprint)
    << "\n";
  o << "# qa2: " << (series.qa2_fingerprint.empty() ? "-" : series.qa2_fingerprint) << "\n";
  o << "# qa4: " << (series.qa4_fingerprint.empty() ? "-" : series.qa4_fingerprint) << "\n";
  o << "# seed: " << series.seed << "\n";
  o << "strategy,healed,n,fraction,start,loss_raw,loss_norm,qa2_acc,qa2_scored,qa2_skipped,"
       "qa4_acc,qa4_scored,qa4_skipped,model_fp,status\n";
  for (const auto& p : series.points) {
    o << strategy_name(p.strategy) << "," << (p.healed ? 1 : 0) << "," << p.n << ","
      << format_double(p.fraction, "%.9g") << "," << p.start << ",";
    if (p.status == "ok") {
      o << format_double(p.report.loss.raw, "%.9g") << ","
        << format_double(p.report.loss.normalized, "%.9g") << ",";
      if (p.report.qa2)
        o << format_double(p.report.qa2->accuracy, "%.9g") << "," << p.report.qa2->scored << ","
          << p.report.qa2->skipped << ",";
      else
        o << ",,,";
      if (p.report.qa4)
        o << format_double(p.report.qa4->accuracy, "%.9g") << "," << p.report.qa4->scored << ","
          << p.report.qa4->skipped << ",";
      else
        o << ",,,";
      o << p.report.model_fingerprint << ",";
    } else {
      o << ",,,,,,,,,";
    }
    // statuses may contain commas; they are the trailing field
    o << p.status << "\n";
  }
  return o.str();
}

namespace {

std::string series_color(PruneStrategy s, bool healed) {
  if (s == PruneStrategy::kSimilarity) return healed ? "#08306b" : "#6baed6";
  return healed ? "#99000d" : "#fb6a4a";
}

std::string series_label(PruneStrategy s, bool healed, const std::string& what) {
  return strategy_name(s) + std::string(healed ? " healed" : " unhealed") +
         (what.empty() ? "" : " " + what);
}

}  // namespace

std::string sweep_loss_svg(const SweepSeries& series) {
  std::vector<PlotSeries> plots;
  for (int healed = 0; healed <= 1; ++healed)
    for (auto strat : {PruneStrategy::kSimilarity, PruneStrategy::kDeepestHeuristic}) {
      PlotSeries ps;
      ps.label = series_label(strat, healed, "");
      ps.color = series_color(strat, healed);
      ps.dashed = !healed;
      for (const auto& p : series.points)
        if (p.strategy == strat && p.healed == static_cast<bool>(healed) && p.status == "ok")
          ps.points.push_back({p.fraction, p.report.loss.normalized});
      if (!ps.points.empty()) plots.push_back(std::move(ps));
    }
  std::vector<RefLine> refs = {{"uniform guessing", "#888888", 1.0}};
  for (const auto& p : series.points)
    if (p.n == 0 && p.status == "ok") {
      refs.push_back({"unpruned baseline", "#cc0000", p.report.loss.normalized});
      break;
    }
  return line_plot_svg("normalized validation loss vs pruning fraction", "fraction of layers removed",
                       "loss / ln(V)", plots, refs,
                       "base=" + series.base_fingerprint + " val=" + series.val_fingerprint);
}

std::string sweep_accuracy_svg(const SweepSeries& series) {
  std::vector<PlotSeries> plots;
  for (int k = 2; k <= 4; k += 2)
    for (int healed = 0; healed <= 1; ++healed)
      for (auto strat : {PruneStrategy::kSimilarity, PruneStrategy::kDeepestHeuristic}) {
        PlotSeries ps;
        ps.label = series_label(strat, healed, "k=" + std::to_string(k));
        ps.color = series_color(strat, healed);
        ps.dashed = (k == 2);
        for (const auto& p : series.points) {
          if (p.strategy != strat || p.healed != static_cast<bool>(healed) || p.status != "ok")
            continue;
          const auto& qa = k == 2 ? p.report.qa2 : p.report.qa4;
          if (qa) ps.points.push_back({p.fraction, qa->accuracy});
        }
        if (!ps.points.empty()) plots.push_back(std::move(ps));
      }
  std::vector<RefLine> refs = {{"random k=4", "#888888", 0.25},
                               {"random k=2", "#bbbbbb", 0.5}};
  return line_plot_svg("QA accuracy vs pruning fraction", "fraction of layers removed",
                       "accuracy", plots, refs,
                       "base=" + series.base_fingerprint + " val=" + series.val_fingerprint);
}

}  // namespace lp
