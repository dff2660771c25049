#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lp/corpus.hpp"
#include "lp/heal.hpp"
#include "lp/model.hpp"
#include "lp/prune.hpp"
#include "lp/qa.hpp"

namespace lp {

struct EvalOptions {
  std::int64_t sample_sequences = 2048;  // seeded subset of the validation split
  std::uint64_t seed = 0;
};

struct LossReport {
  double raw = 0.0;         // nats per predicted token
  double normalized = 0.0;  // raw / ln(vocab_size); 1.0 = uniform guessing
  std::int64_t sequences = 0;
  std::int64_t tokens = 0;
};

// Mean next-token cross entropy over a fixed seeded sample of validation
// sequences, normalized by ln V.
LossReport eval_loss(const Model& model, const CorpusStream& validation,
                     const EvalOptions& opt);

struct QaReport {
  int k = 0;
  double accuracy = 0.0;
  std::int64_t total = 0;
  std::int64_t scored = 0;
  std::int64_t skipped = 0;  // items whose sequences exceed max_seq_len
  std::int64_t correct = 0;
};

// Option scoring: each option is appended to BOS + context + question and
// scored by the summed log-likelihood of its tokens; prediction is the
// argmax with ties to the lowest index.
int qa_predict(std::span<const double> option_scores);
std::vector<double> qa_option_scores(const Model& model, const QAItem& item);
QaReport eval_qa(const Model& model, const SyntheticQASet& qa);

struct EvalReport {
  std::string model_fingerprint;
  double prune_fraction = 0.0;
  std::string strategy = "none";
  bool healed = false;
  LossReport loss;
  std::optional<QaReport> qa2, qa4;
  double wall_seconds = 0.0;  // reported on stdout, never serialized to CSV
  std::uint64_t seed = 0;
};

EvalReport evaluate(const Model& model, const CorpusStream& validation,
                    const SyntheticQASet* qa2, const SyntheticQASet* qa4,
                    const EvalOptions& opt);

struct SweepConfig {
  std::vector<PruneStrategy> strategies;
  std::vector<double> fractions;  // ascending; n = round(fraction * L)
  bool heal = false;
  TrainSchedule heal_schedule;
  int adapter_rank = 8;
  double adapter_alpha = -1.0;
  double adapter_dropout = 0.0;
  std::vector<std::string> adapter_targets = kDefaultAdapterTargets;
  EvalOptions eval;
};

struct SweepPoint {
  PruneStrategy strategy = PruneStrategy::kSimilarity;
  int n = 0;
  double fraction = 0.0;
  bool healed = false;
  int start = -1;
  std::string status = "ok";  // "error: ..." keeps the sweep going
  EvalReport report;
};

struct SweepSeries {
  std::vector<SweepPoint> points;
  std::string base_fingerprint;
  std::string train_fingerprint, val_fingerprint;
  std::string matrix_fingerprint;
  std::string qa2_fingerprint, qa4_fingerprint;
  std::uint64_t seed = 0;
};

// fraction x strategy grid: plan, prune, optionally heal, evaluate — always
// from the same base model. The distance matrix is required only when the
// similarity strategy is listed with a nonzero fraction.
SweepSeries run_sweep(const Model& base, const DistanceMatrix* matrix,
                      const CorpusStream& train, const CorpusStream& validation,
                      const SyntheticQASet* qa2, const SyntheticQASet* qa4,
                      const SweepConfig& cfg);

std::string sweep_csv(const SweepSeries& series);
std::string sweep_loss_svg(const SweepSeries& series);
std::string sweep_accuracy_svg(const SweepSeries& series);

}  // namespace lp
