// Command-line driver for the layer-pruning toolkit. Every command is a pure
// function of its config file, input artifacts, and seeds; artifacts carry
// provenance fingerprints that `verify` walks.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lp/checkpoint.hpp"
#include "lp/corpus.hpp"
#include "lp/distance.hpp"
#include "lp/evalharness.hpp"
#include "lp/heal.hpp"
#include "lp/model.hpp"
#include "lp/prune.hpp"
#include "lp/qa.hpp"
#include "lp/svg.hpp"

namespace fs = std::filesystem;
using lp::Json;

namespace {

// Exit codes: 0 ok, 1 unexpected, 2 missing input artifact, 3 invalid
// config/arguments, 4 numeric or training failure, 5 artifact integrity.
constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitMissing = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIntegrity = 5;

struct CliConfig {
  std::string out_dir = "out";
  std::uint64_t master_seed = 1;

  lp::ModelConfig model;

  bool has_synth = false;
  lp::SynthSpec synth;
  std::string corpus_path;  // resolved: explicit path or out_dir/corpus.txt
  int corpus_seq_len = 128;
  std::uint64_t corpus_shuffle_seed = 11;
  double corpus_val_fraction = 0.1;

  int qa_k4_count = 0;
  int qa_k2_count = 0;
  std::uint64_t qa_seed = 13;

  lp::TrainSchedule pretrain_sched;
  lp::TrainSchedule heal_sched;
  int heal_rank = 8;
  double heal_alpha = -1.0;
  double heal_dropout = 0.0;
  std::vector<std::string> heal_targets = lp::kDefaultAdapterTargets;

  std::int64_t profile_samples = 512;
  int profile_n_max = 0;  // 0 -> L - 1
  bool profile_all_positions = false;

  std::int64_t eval_sequences = 2048;
  std::uint64_t eval_seed = 41;
  int eval_qa_items = 0;  // 0 -> full sets

  std::vector<std::string> sweep_strategies = {"similarity", "deepest"};
  std::vector<double> sweep_fractions;
  int sweep_max_n = -1;  // -1 -> every n in [0, L-1]
  bool sweep_heal = false;
  bool sweep_qa = true;

  std::string estimate_preset = "llama2-70b";
  std::vector<double> estimate_fractions = {0.0, 0.5};
  std::vector<int> estimate_bits = {16, 4};
};

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw lp::ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

lp::TrainSchedule schedule_from_json(const Json& j, const lp::TrainSchedule& defaults) {
  lp::TrainSchedule s = defaults;
  s.total_steps = get_or(j, "total_steps", s.total_steps);
  s.warmup_steps = get_or(j, "warmup_steps", s.warmup_steps);
  s.peak_lr = get_or(j, "peak_lr", s.peak_lr);
  s.batch_size = get_or(j, "batch_size", s.batch_size);
  s.seq_len = get_or(j, "seq_len", s.seq_len);
  s.seed = get_or(j, "seed", s.seed);
  s.aux_weight = get_or(j, "aux_weight", s.aux_weight);
  s.weight_decay = get_or(j, "weight_decay", s.weight_decay);
  try {
    s.validate();
  } catch (const lp::InputError& e) {
    throw lp::ConfigError(e.what());
  }
  return s;
}

CliConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw lp::IoError("cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const Json::exception& e) {
    throw lp::ConfigError(path + ": " + e.what());
  }
  CliConfig c;
  c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir);
  c.master_seed = get_or(j, "seed", c.master_seed);

  if (j.contains("model")) {
    try {
      c.model = lp::config_from_json(j.at("model"));
    } catch (const lp::Error& e) {
      throw lp::ConfigError(std::string("model config: ") + e.what());
    }
  }

  if (j.contains("corpus")) {
    const Json& jc = j.at("corpus");
    c.corpus_path = get_or<std::string>(jc, "path", "");
    c.corpus_seq_len = get_or(jc, "seq_len", c.corpus_seq_len);
    c.corpus_shuffle_seed = get_or(jc, "shuffle_seed", c.corpus_shuffle_seed);
    c.corpus_val_fraction = get_or(jc, "val_fraction", c.corpus_val_fraction);
    if (jc.contains("synthetic")) {
      const Json& js = jc.at("synthetic");
      c.has_synth = true;
      c.synth.num_facts = get_or(js, "num_facts", c.synth.num_facts);
      c.synth.num_relations = get_or(js, "num_relations", c.synth.num_relations);
      c.synth.values_per_relation =
          get_or(js, "values_per_relation", c.synth.values_per_relation);
      c.synth.entity_chars = get_or(js, "entity_chars", c.synth.entity_chars);
      c.synth.fact_repeats = get_or(js, "fact_repeats", c.synth.fact_repeats);
      c.synth.filler_sentences = get_or(js, "filler_sentences", c.synth.filler_sentences);
      c.synth.seed = get_or(js, "seed", c.synth.seed);
    }
  }
  if (c.corpus_path.empty() && c.has_synth)
    c.corpus_path = (fs::path(c.out_dir) / "corpus.txt").string();

  if (j.contains("qa")) {
    const Json& jq = j.at("qa");
    c.qa_k4_count = get_or(jq, "k4_count", c.qa_k4_count);
    c.qa_k2_count = get_or(jq, "k2_count", c.qa_k2_count);
    c.qa_seed = get_or(jq, "seed", c.qa_seed);
  }

  lp::TrainSchedule pre_default;
  pre_default.total_steps = 500;
  pre_default.warmup_steps = 50;
  pre_default.peak_lr = 1e-3;
  pre_default.batch_size = 16;
  pre_default.seq_len = 0;
  pre_default.seed = lp::splitmix64(c.master_seed ^ 0x70726574);
  c.pretrain_sched = j.contains("pretrain")
                         ? schedule_from_json(j.at("pretrain"), pre_default)
                         : pre_default;

  lp::TrainSchedule heal_default;
  heal_default.total_steps = 500;
  heal_default.warmup_steps = 100;
  heal_default.peak_lr = 3e-4;
  heal_default.batch_size = 16;
  heal_default.seq_len = 256;
  heal_default.seed = lp::splitmix64(c.master_seed ^ 0x6865616c);
  c.heal_sched = j.contains("heal") ? schedule_from_json(j.at("heal"), heal_default)
                                    : heal_default;
  if (j.contains("heal")) {
    const Json& jh = j.at("heal");
    c.heal_rank = get_or(jh, "rank", c.heal_rank);
    c.heal_alpha = get_or(jh, "alpha", c.heal_alpha);
    c.heal_dropout = get_or(jh, "dropout", c.heal_dropout);
    c.heal_targets = get_or(jh, "targets", c.heal_targets);
  }

  if (j.contains("profile")) {
    const Json& jp = j.at("profile");
    c.profile_samples = get_or<std::int64_t>(jp, "samples", c.profile_samples);
    c.profile_n_max = get_or(jp, "n_max", c.profile_n_max);
    c.profile_all_positions = get_or(jp, "all_positions", c.profile_all_positions);
  }
  if (j.contains("eval")) {
    const Json& je = j.at("eval");
    c.eval_sequences = get_or<std::int64_t>(je, "sequences", c.eval_sequences);
    c.eval_seed = get_or(je, "seed", c.eval_seed);
    c.eval_qa_items = get_or(je, "qa_items", c.eval_qa_items);
  }
  if (j.contains("sweep")) {
    const Json& js = j.at("sweep");
    c.sweep_strategies = get_or(js, "strategies", c.sweep_strategies);
    c.sweep_fractions = get_or(js, "fractions", c.sweep_fractions);
    c.sweep_max_n = get_or(js, "max_n", c.sweep_max_n);
    c.sweep_heal = get_or(js, "heal", c.sweep_heal);
    c.sweep_qa = get_or(js, "qa", c.sweep_qa);
  }
  if (j.contains("estimate")) {
    const Json& je = j.at("estimate");
    c.estimate_preset = get_or<std::string>(je, "preset", c.estimate_preset);
    c.estimate_fractions = get_or(je, "fractions", c.estimate_fractions);
    c.estimate_bits = get_or(je, "bits", c.estimate_bits);
  }
  return c;
}

lp::CorpusSpec corpus_spec(const CliConfig& c) {
  lp::CorpusSpec spec;
  spec.path = c.corpus_path;
  spec.seq_len = c.corpus_seq_len;
  spec.shuffle_seed = c.corpus_shuffle_seed;
  spec.val_fraction = c.corpus_val_fraction;
  return spec;
}

lp::CorpusStream open_corpus(const CliConfig& c, lp::Split split) {
  if (c.corpus_path.empty())
    throw lp::ConfigError("no corpus configured (set corpus.path or corpus.synthetic)");
  if (!fs::exists(c.corpus_path))
    throw lp::IoError("corpus file missing: " + c.corpus_path + " (run pretrain first)");
  return lp::CorpusStream(corpus_spec(c), split);
}

Json corpus_provenance(const CliConfig& c, const lp::CorpusStream& stream) {
  return Json{{"path", fs::path(c.corpus_path).filename().string()},
              {"file_fingerprint", lp::file_fingerprint(c.corpus_path)},
              {"stream_fingerprint", stream.fingerprint()},
              {"seq_len", c.corpus_seq_len},
              {"shuffle_seed", c.corpus_shuffle_seed},
              {"val_fraction", c.corpus_val_fraction}};
}

Json schedule_to_json(const lp::TrainSchedule& s) {
  return Json{{"total_steps", s.total_steps}, {"warmup_steps", s.warmup_steps},
              {"peak_lr", s.peak_lr},         {"batch_size", s.batch_size},
              {"seq_len", s.seq_len},         {"seed", s.seed},
              {"aux_weight", s.aux_weight},   {"weight_decay", s.weight_decay}};
}

std::string qa_path(const CliConfig& c, int k) {
  return (fs::path(c.out_dir) / ("qa_k" + std::to_string(k) + ".json")).string();
}

std::optional<lp::SyntheticQASet> load_qa_if_present(const CliConfig& c, int k) {
  const std::string path = qa_path(c, k);
  if (!fs::exists(path)) return std::nullopt;
  lp::SyntheticQASet set = lp::load_qa_set(path);
  if (c.eval_qa_items > 0 && static_cast<int>(set.items.size()) > c.eval_qa_items)
    set.items.resize(c.eval_qa_items);
  return set;
}

int cmd_pretrain(const CliConfig& c) {
  fs::create_directories(c.out_dir);
  if (c.has_synth) {
    lp::write_corpus_file(c.corpus_path, c.synth);
    const lp::FactTable table = lp::make_fact_table(c.synth);
    if (c.qa_k4_count > 0)
      lp::save_qa_set(qa_path(c, 4), lp::make_qa_set(table, c.qa_k4_count, 4, c.qa_seed));
    if (c.qa_k2_count > 0)
      lp::save_qa_set(qa_path(c, 2),
                      lp::make_qa_set(table, c.qa_k2_count, 2, c.qa_seed ^ 0x6b32));
    std::cout << "wrote " << c.corpus_path << "\n";
  }
  lp::CorpusStream train = open_corpus(c, lp::Split::kTrain);

  lp::Model model = lp::Model::random_init(c.model);
  lp::TrainResult result;
  if (c.pretrain_sched.total_steps > 0) result = lp::pretrain(model, train, c.pretrain_sched);

  Json prov{{"kind", "pretrained"},
            {"corpus", corpus_provenance(c, train)},
            {"schedule", schedule_to_json(c.pretrain_sched)}};
  const std::string ckpt = (fs::path(c.out_dir) / "baseline.ckpt").string();
  lp::save_model(ckpt, model, prov);
  const std::string fp = lp::model_fingerprint(model);
  lp::write_text_file((fs::path(c.out_dir) / "pretrain_curve.csv").string(),
                      lp::curve_csv(result, fp, train.fingerprint(), c.pretrain_sched));
  if (!result.curve.empty())
    std::cout << "pretrain: " << result.curve.size() << " steps, loss "
              << lp::format_double(result.curve.front().train_loss, "%.4f") << " -> "
              << lp::format_double(result.curve.back().train_loss, "%.4f") << "\n";
  std::cout << "wrote " << ckpt << " (" << fp << ")\n";
  return kExitOk;
}

int cmd_profile(const CliConfig& c, const std::string& checkpoint) {
  lp::Model model = lp::load_model(checkpoint);
  lp::CorpusStream train = open_corpus(c, lp::Split::kTrain);
  lp::ProfileOptions opt;
  opt.n_max = c.profile_n_max > 0 ? c.profile_n_max : model.num_layers() - 1;
  opt.all_positions = c.profile_all_positions;
  const lp::DistanceMatrix matrix = lp::profile(model, train, c.profile_samples, opt);

  fs::create_directories(c.out_dir);
  const std::string csv = (fs::path(c.out_dir) / "distance.csv").string();
  lp::write_distance_csv(csv, matrix);
  lp::write_text_file((fs::path(c.out_dir) / "distance_stderr.csv").string(),
                      lp::distance_stderr_csv(matrix));
  lp::write_text_file(
      (fs::path(c.out_dir) / "heatmap.svg").string(),
      lp::heatmap_svg(lp::normalize_rows(matrix), "row-normalized angular distance",
                      "model=" + matrix.model_fingerprint +
                          " corpus=" + matrix.corpus_fingerprint +
                          " matrix=" + matrix.fingerprint()));
  std::cout << "profiled " << matrix.samples_used << " samples (skipped "
            << matrix.samples_skipped << ")\n";
  for (int n = 1; n <= matrix.n_max; ++n) {
    const int ls = lp::optimal_block(matrix, n);
    std::cout << "  n=" << n << "  l*=" << ls << "  d="
              << lp::format_double(matrix.values[n - 1][ls], "%.6f") << "\n";
  }
  std::cout << "wrote " << csv << "\n";
  return kExitOk;
}

lp::DistanceMatrix load_matrix_for(const CliConfig& c, const std::string& distance_path,
                                   const std::string& model_fp) {
  const std::string path = distance_path.empty()
                               ? (fs::path(c.out_dir) / "distance.csv").string()
                               : distance_path;
  if (!fs::exists(path))
    throw lp::IoError("distance matrix missing: " + path + " (run profile first)");
  lp::DistanceMatrix matrix = lp::read_distance_csv(path);
  if (!matrix.model_fingerprint.empty() && matrix.model_fingerprint != model_fp)
    throw lp::ChecksumError("distance matrix " + path + " was profiled from model " +
                            matrix.model_fingerprint + ", not " + model_fp);
  return matrix;
}

int cmd_prune(const CliConfig& c, const std::string& checkpoint, const std::string& strategy,
              int n, const std::string& distance_path) {
  Json parent_prov;
  lp::Model model = lp::load_model(checkpoint, &parent_prov);
  const std::string parent_fp = lp::model_fingerprint(model);
  lp::PruneSpec spec;
  if (n == 0) {
    spec = lp::PruneSpec::identity();
    spec.strategy = lp::strategy_from_name(strategy);
  } else if (lp::strategy_from_name(strategy) == lp::PruneStrategy::kSimilarity) {
    spec = lp::plan_similarity(load_matrix_for(c, distance_path, parent_fp), n);
  } else {
    spec = lp::plan_heuristic(model.num_layers(), n);
  }
  lp::Model pruned = lp::prune_apply(model, spec);

  fs::create_directories(c.out_dir);
  const std::string out = (fs::path(c.out_dir) /
                           ("pruned_" + lp::strategy_name(spec.strategy) + "_n" +
                            std::to_string(n) + ".ckpt"))
                              .string();
  Json prov{{"kind", "pruned"},
            {"parent", parent_fp},
            {"prune", lp::prune_spec_to_json(spec)}};
  lp::save_model(out, pruned, prov);
  std::cout << "removed blocks [" << spec.start << ", " << spec.start + spec.count << ") of "
            << model.num_layers() << "\n";
  std::cout << "wrote " << out << " (" << lp::model_fingerprint(pruned) << ")\n";
  return kExitOk;
}

int cmd_heal(const CliConfig& c, const std::string& checkpoint,
             const std::string& teacher_path) {
  Json prov_in;
  lp::Model pruned = lp::load_model(checkpoint, &prov_in);
  const std::string pruned_fp = lp::model_fingerprint(pruned);
  lp::CorpusStream train = open_corpus(c, lp::Split::kTrain);

  std::optional<lp::Model> teacher;
  std::optional<lp::PruneSpec> spec;
  if (prov_in.contains("prune")) spec = lp::prune_spec_from_json(prov_in.at("prune"));
  if (c.heal_sched.aux_weight > 0.0) {
    if (teacher_path.empty())
      throw lp::InputError("heal: aux_weight > 0 requires --teacher (the unpruned parent)");
    if (!spec)
      throw lp::InputError("heal: checkpoint has no prune provenance for the aux cut");
    teacher = lp::load_model(teacher_path);
    if (prov_in.contains("parent") &&
        prov_in.at("parent").get<std::string>() != lp::model_fingerprint(*teacher))
      throw lp::ChecksumError("heal: teacher is not the recorded parent of this checkpoint");
  }

  lp::Model model = lp::attach_adapters(pruned, c.heal_rank, c.heal_targets, c.heal_alpha,
                                        c.heal_dropout, c.heal_sched.seed);
  const lp::TrainResult result =
      lp::heal(model, train, c.heal_sched, teacher ? &*teacher : nullptr,
               spec ? &*spec : nullptr);

  fs::create_directories(c.out_dir);
  const std::string stem = fs::path(checkpoint).stem().string();
  const std::string out = (fs::path(c.out_dir) / ("healed_" + stem + ".ckpt")).string();
  Json prov{{"kind", "healed"},
            {"parent", pruned_fp},
            {"corpus", corpus_provenance(c, train)},
            {"schedule", schedule_to_json(c.heal_sched)},
            {"adapters", Json{{"rank", c.heal_rank},
                              {"alpha", c.heal_alpha < 0 ? double(c.heal_rank) : c.heal_alpha},
                              {"dropout", c.heal_dropout},
                              {"targets", c.heal_targets}}}};
  if (spec) prov["prune"] = lp::prune_spec_to_json(*spec);
  if (teacher) prov["teacher"] = lp::model_fingerprint(*teacher);
  lp::save_model(out, model, prov);
  lp::write_text_file((fs::path(c.out_dir) / ("heal_curve_" + stem + ".csv")).string(),
                      lp::curve_csv(result, pruned_fp, train.fingerprint(), c.heal_sched));
  if (!result.curve.empty())
    std::cout << "heal: " << result.curve.size() << " steps, loss "
              << lp::format_double(result.curve.front().train_loss, "%.4f") << " -> "
              << lp::format_double(result.curve.back().train_loss, "%.4f") << "\n";
  std::cout << "wrote " << out << " (" << lp::model_fingerprint(model) << ")\n";
  return kExitOk;
}

int cmd_eval(const CliConfig& c, const std::string& checkpoint) {
  Json prov_in;
  lp::Model model = lp::load_model(checkpoint, &prov_in);
  lp::CorpusStream val = open_corpus(c, lp::Split::kValidation);
  auto qa2 = load_qa_if_present(c, 2);
  auto qa4 = load_qa_if_present(c, 4);
  lp::EvalOptions opt;
  opt.sample_sequences = c.eval_sequences;
  opt.seed = c.eval_seed;
  lp::EvalReport report =
      lp::evaluate(model, val, qa2 ? &*qa2 : nullptr, qa4 ? &*qa4 : nullptr, opt);

  lp::SweepSeries series;
  series.base_fingerprint = prov_in.value("parent", report.model_fingerprint);
  series.val_fingerprint = val.fingerprint();
  series.qa2_fingerprint = qa2 ? qa2->fingerprint() : "";
  series.qa4_fingerprint = qa4 ? qa4->fingerprint() : "";
  series.seed = opt.seed;
  lp::SweepPoint point;
  point.report = report;
  if (prov_in.contains("prune")) {
    const lp::PruneSpec spec = lp::prune_spec_from_json(prov_in.at("prune"));
    point.strategy = spec.strategy;
    point.n = spec.count;
    point.start = spec.start;
    point.healed = prov_in.value("kind", "") == "healed";
    point.fraction = model.num_layers() + spec.count > 0
                         ? static_cast<double>(spec.count) /
                               (model.num_layers() + spec.count)
                         : 0.0;
  }
  series.points.push_back(point);

  fs::create_directories(c.out_dir);
  const std::string out =
      (fs::path(c.out_dir) / ("eval_" + fs::path(checkpoint).stem().string() + ".csv"))
          .string();
  lp::write_text_file(out, lp::sweep_csv(series));
  std::cout << "loss " << lp::format_double(report.loss.raw, "%.6f") << " nats/token ("
            << lp::format_double(report.loss.normalized, "%.6f") << " normalized, "
            << report.loss.tokens << " tokens)\n";
  if (report.qa2)
    std::cout << "qa k=2 accuracy " << lp::format_double(report.qa2->accuracy, "%.4f") << " ("
              << report.qa2->scored << " scored, " << report.qa2->skipped << " skipped)\n";
  if (report.qa4)
    std::cout << "qa k=4 accuracy " << lp::format_double(report.qa4->accuracy, "%.4f") << " ("
              << report.qa4->scored << " scored, " << report.qa4->skipped << " skipped)\n";
  std::cout << "wall " << lp::format_double(report.wall_seconds, "%.2f") << " s\n";
  std::cout << "wrote " << out << "\n";
  return kExitOk;
}

int cmd_sweep(const CliConfig& c, const std::string& checkpoint, bool heal_flag,
              const std::string& distance_path) {
  lp::Model base = lp::load_model(checkpoint);
  const std::string base_fp = lp::model_fingerprint(base);
  lp::CorpusStream train = open_corpus(c, lp::Split::kTrain);
  lp::CorpusStream val = open_corpus(c, lp::Split::kValidation);
  auto qa2 = c.sweep_qa ? load_qa_if_present(c, 2) : std::nullopt;
  auto qa4 = c.sweep_qa ? load_qa_if_present(c, 4) : std::nullopt;

  lp::SweepConfig cfg;
  for (const auto& s : c.sweep_strategies) cfg.strategies.push_back(lp::strategy_from_name(s));
  if (!c.sweep_fractions.empty()) {
    cfg.fractions = c.sweep_fractions;
  } else {
    const int max_n = c.sweep_max_n >= 0 ? c.sweep_max_n : base.num_layers() - 1;
    for (int n = 0; n <= std::min(max_n, base.num_layers() - 1); ++n)
      cfg.fractions.push_back(static_cast<double>(n) / base.num_layers());
  }
  cfg.heal = heal_flag || c.sweep_heal;
  cfg.heal_schedule = c.heal_sched;
  cfg.adapter_rank = c.heal_rank;
  cfg.adapter_alpha = c.heal_alpha;
  cfg.adapter_dropout = c.heal_dropout;
  cfg.adapter_targets = c.heal_targets;
  cfg.eval.sample_sequences = c.eval_sequences;
  cfg.eval.seed = c.eval_seed;

  std::optional<lp::DistanceMatrix> matrix;
  bool needs_matrix = false;
  for (const auto& s : cfg.strategies)
    if (s == lp::PruneStrategy::kSimilarity)
      for (double f : cfg.fractions)
        if (std::lround(f * base.num_layers()) > 0) needs_matrix = true;
  if (needs_matrix) matrix = load_matrix_for(c, distance_path, base_fp);

  const lp::SweepSeries series =
      lp::run_sweep(base, matrix ? &*matrix : nullptr, train, val, qa2 ? &*qa2 : nullptr,
                    qa4 ? &*qa4 : nullptr, cfg);

  fs::create_directories(c.out_dir);
  const std::string tag = cfg.heal ? "healed" : "unhealed";
  const std::string csv = (fs::path(c.out_dir) / ("sweep_" + tag + ".csv")).string();
  lp::write_text_file(csv, lp::sweep_csv(series));
  lp::write_text_file((fs::path(c.out_dir) / ("sweep_" + tag + "_loss.svg")).string(),
                      lp::sweep_loss_svg(series));
  if (qa2 || qa4)
    lp::write_text_file((fs::path(c.out_dir) / ("sweep_" + tag + "_accuracy.svg")).string(),
                        lp::sweep_accuracy_svg(series));
  for (const auto& p : series.points) {
    std::cout << lp::strategy_name(p.strategy) << " n=" << p.n;
    if (p.status == "ok")
      std::cout << " loss_norm=" << lp::format_double(p.report.loss.normalized, "%.4f")
                << (p.report.qa4
                        ? " qa4=" + lp::format_double(p.report.qa4->accuracy, "%.3f")
                        : "")
                << "\n";
    else
      std::cout << " " << p.status << "\n";
  }
  std::cout << "wrote " << csv << "\n";
  return kExitOk;
}

int cmd_estimate(const CliConfig& c, const std::string& preset_flag,
                 std::vector<double> fractions, std::vector<int> bits) {
  const std::string preset = preset_flag.empty() ? c.estimate_preset : preset_flag;
  lp::ArchShape shape = preset == "model-config"
                            ? lp::ArchShape::from_model_config(c.model)
                            : lp::shape_preset(preset);
  if (fractions.empty()) fractions = c.estimate_fractions;
  if (bits.empty()) bits = c.estimate_bits;
  std::vector<lp::ResourceEstimate> rows;
  for (int b : bits)
    for (double f : fractions) rows.push_back(lp::estimate_resources(shape, f, b));
  for (const auto& r : rows) std::cout << lp::estimate_text(r) << "\n";
  fs::create_directories(c.out_dir);
  const std::string out = (fs::path(c.out_dir) / "estimate.csv").string();
  lp::write_text_file(out, lp::estimate_csv(rows));
  std::cout << "wrote " << out << "\n";
  return kExitOk;
}

// Walks an output directory: checkpoints must load cleanly (format, shapes,
// checksum), CSV/QA artifacts must parse and their self-fingerprints must
// validate, and any recorded corpus fingerprint must match the file sitting
// next to the artifact. References to artifacts absent from the directory
// are warnings, not failures.
int cmd_verify(const std::string& dir) {
  if (!fs::exists(dir)) throw lp::IoError("no such directory: " + dir);
  int failures = 0, warnings = 0, checked = 0;
  std::map<std::string, std::string> ckpt_by_fp;
  std::map<std::string, std::string> file_by_fp;

  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());

  auto fail = [&](const fs::path& p, const std::string& what) {
    std::cout << "FAIL " << p.filename().string() << ": " << what << "\n";
    ++failures;
  };

  for (const auto& p : entries) {
    const std::string ext = p.extension().string();
    try {
      if (ext == ".ckpt") {
        lp::Model m = lp::load_model(p.string());
        ckpt_by_fp[lp::model_fingerprint(m)] = p.filename().string();
        ++checked;
      } else if (ext == ".txt") {
        file_by_fp[lp::file_fingerprint(p.string())] = p.filename().string();
        ++checked;
      } else if (ext == ".json" && p.filename().string().rfind("qa_", 0) == 0) {
        (void)lp::load_qa_set(p.string());
        ++checked;
      } else if (p.filename() == "distance.csv") {
        (void)lp::read_distance_csv(p.string());  // validates self-fingerprint
        ++checked;
      }
    } catch (const lp::Error& e) {
      fail(p, e.what());
    }
  }

  auto check_ref = [&](const fs::path& p, const std::string& label, const std::string& fp) {
    if (fp.empty() || fp == "-") return;
    if (ckpt_by_fp.find(fp) == ckpt_by_fp.end()) {
      std::cout << "warn " << p.filename().string() << ": " << label << " " << fp
                << " not found in directory\n";
      ++warnings;
    }
  };

  for (const auto& p : entries) {
    try {
      if (p.extension() == ".ckpt") {
        const Json header = lp::read_checkpoint_header(p.string());
        const Json prov = header.value("provenance", Json::object());
        check_ref(p, "parent checkpoint", prov.value("parent", ""));
        check_ref(p, "teacher checkpoint", prov.value("teacher", ""));
        if (prov.contains("corpus")) {
          const Json& jc = prov.at("corpus");
          const std::string rec = jc.value("file_fingerprint", "");
          const std::string name = jc.value("path", "");
          const fs::path corpus_file = fs::path(dir) / name;
          if (!rec.empty() && fs::exists(corpus_file) &&
              lp::file_fingerprint(corpus_file.string()) != rec)
            fail(p, "corpus file " + name + " does not match recorded fingerprint");
        }
      } else if (p.filename() == "distance.csv") {
        const lp::DistanceMatrix m = lp::read_distance_csv(p.string());
        check_ref(p, "profiled model", m.model_fingerprint);
      } else if (p.extension() == ".csv") {
        std::ifstream in(p);
        std::string line;
        while (std::getline(in, line) && !line.empty() && line[0] == '#') {
          std::istringstream ls(line.substr(1));
          std::string key, value;
          ls >> key >> value;
          if (key == "base:" || key == "model:") check_ref(p, key, value);
        }
      } else if (p.extension() == ".svg") {
        std::ifstream in(p);
        std::string head(4096, '\0');
        in.read(head.data(), static_cast<std::streamsize>(head.size()));
        if (head.find("<!-- provenance:") == std::string::npos) {
          std::cout << "warn " << p.filename().string() << ": no provenance comment\n";
          ++warnings;
        }
      }
    } catch (const lp::Error& e) {
      fail(p, e.what());
    }
  }

  std::cout << "verified " << checked << " artifacts, " << failures << " failures, "
            << warnings << " warnings\n";
  return failures == 0 ? kExitOk : kExitIntegrity;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"layer-pruning toolkit: profile, prune, heal, and evaluate toy decoder models"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, teacher, distance_path, strategy = "similarity";
  std::string preset, verify_dir, out_override;
  int n = 1, threads = 0;
  std::uint64_t seed_override = 0;
  bool seed_given = false, heal_flag = false;
  std::vector<double> fractions;
  std::vector<int> bits;

  app.add_option("--threads", threads, "worker threads (0 = hardware)");

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt =
        sub->add_option("--config", config_path, "experiment config (JSON, // comments ok)");
    if (needs_config) opt->required();
    sub->add_option("--out", out_override, "output directory (overrides config)");
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& v) {
          seed_override = v;
          seed_given = true;
        },
        "master seed override");
  };

  auto* sp_pre = app.add_subcommand("pretrain", "train the baseline model from the corpus");
  add_common(sp_pre, true);
  auto* sp_prof = app.add_subcommand("profile", "angular-distance profile of a checkpoint");
  add_common(sp_prof, true);
  sp_prof->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  auto* sp_prune = app.add_subcommand("prune", "remove a contiguous block of layers");
  add_common(sp_prune, true);
  sp_prune->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  sp_prune->add_option("--strategy", strategy, "similarity | deepest");
  sp_prune->add_option("--n", n, "number of layers to remove")->required();
  sp_prune->add_option("--distance", distance_path,
                       "distance CSV (default: out_dir/distance.csv)");
  auto* sp_heal = app.add_subcommand("heal", "adapter finetuning of a pruned checkpoint");
  add_common(sp_heal, true);
  sp_heal->add_option("--checkpoint", checkpoint, "pruned checkpoint")->required();
  sp_heal->add_option("--teacher", teacher, "unpruned parent (required when aux_weight > 0)");
  auto* sp_eval = app.add_subcommand("eval", "loss + QA evaluation of a checkpoint");
  add_common(sp_eval, true);
  sp_eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  auto* sp_sweep =
      app.add_subcommand("sweep", "pruning-fraction sweep from one base checkpoint");
  add_common(sp_sweep, true);
  sp_sweep->add_option("--checkpoint", checkpoint, "base checkpoint")->required();
  sp_sweep->add_flag("--heal", heal_flag, "heal each pruned point before evaluating");
  sp_sweep->add_option("--distance", distance_path,
                       "distance CSV (default: out_dir/distance.csv)");
  auto* sp_est = app.add_subcommand("estimate", "memory/FLOP arithmetic for a model shape");
  add_common(sp_est, false);
  sp_est->add_option("--preset", preset, "shape preset (llama2-70b) or model-config");
  sp_est->add_option("--fractions", fractions, "pruning fractions");
  sp_est->add_option("--bits", bits, "weight widths (16 and/or 4)");
  auto* sp_verify =
      app.add_subcommand("verify", "validate the provenance chain of a directory");
  sp_verify->add_option("--dir", verify_dir, "experiment output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (threads > 0) lp::set_num_threads(threads);

  CliConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (seed_given) {
    cfg.master_seed = seed_override;
    cfg.model.seed = lp::splitmix64(seed_override ^ 0x6d6f64);
    cfg.pretrain_sched.seed = lp::splitmix64(seed_override ^ 0x70726574);
    cfg.heal_sched.seed = lp::splitmix64(seed_override ^ 0x6865616c);
    cfg.eval_seed = lp::splitmix64(seed_override ^ 0x6576616c);
    cfg.qa_seed = lp::splitmix64(seed_override ^ 0x7161);
  }
  if (!out_override.empty()) {
    if (cfg.has_synth &&
        cfg.corpus_path == (fs::path(cfg.out_dir) / "corpus.txt").string())
      cfg.corpus_path = (fs::path(out_override) / "corpus.txt").string();
    cfg.out_dir = out_override;
  }

  if (sp_pre->parsed()) return cmd_pretrain(cfg);
  if (sp_prof->parsed()) return cmd_profile(cfg, checkpoint);
  if (sp_prune->parsed()) return cmd_prune(cfg, checkpoint, strategy, n, distance_path);
  if (sp_heal->parsed()) return cmd_heal(cfg, checkpoint, teacher);
  if (sp_eval->parsed()) return cmd_eval(cfg, checkpoint);
  if (sp_sweep->parsed()) return cmd_sweep(cfg, checkpoint, heal_flag, distance_path);
  if (sp_est->parsed()) return cmd_estimate(cfg, preset, fractions, bits);
  if (sp_verify->parsed()) return cmd_verify(verify_dir);
  return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const lp::IoError& e) {
    std::cerr << "error (missing artifact): " << e.what() << "\n";
    return kExitMissing;
  } catch (const lp::ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return kExitConfig;
  } catch (const lp::InputError& e) {
    std::cerr << "error (input): " << e.what() << "\n";
    return kExitConfig;
  } catch (const lp::TrainingError& e) {
    std::cerr << "error (numeric): " << e.what() << "\n";
    return kExitNumeric;
  } catch (const lp::DomainError& e) {
    std::cerr << "error (numeric): " << e.what() << "\n";
    return kExitNumeric;
  } catch (const lp::Error& e) {
    // FormatError, VersionError, ShapeError, ChecksumError
    std::cerr << "error (artifact integrity): " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUnexpected;
  }
}
