#pragma once

// Batch-mode active learning against a simulated annotator: pretext batch
// split, per-iteration query, from-scratch retraining of the main model and
// evaluation on a held-out split.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pt4al/data.hpp"
#include "pt4al/error.hpp"
#include "pt4al/idx.hpp"
#include "pt4al/learner.hpp"
#include "pt4al/pretext.hpp"
#include "pt4al/rng.hpp"
#include "pt4al/sampler.hpp"

namespace pt4al {

enum class Strategy {
  pt4al,
  random,
  entropy,
  sampling_only,      // random batch segmentation + entropy in-batch selection
  pretext_only_high,  // pretext batches + K highest losses per batch
  pretext_only_low,   // pretext batches + K lowest losses per batch
  low_loss_first,     // pt4al with the batch order reversed
};

/// Query rule for the first iteration, before any main model exists.
enum class FirstRule { uniform, top_k, random };

inline const std::map<std::string, Strategy>& strategy_names() {
  static const std::map<std::string, Strategy> names{
      {"pt4al", Strategy::pt4al},
      {"random", Strategy::random},
      {"entropy", Strategy::entropy},
      {"pt4al-sampling-only", Strategy::sampling_only},
      {"pt4al-pretext-only-high", Strategy::pretext_only_high},
      {"pt4al-pretext-only-low", Strategy::pretext_only_low},
      {"pt4al-low-loss-first", Strategy::low_loss_first},
  };
  return names;
}

inline Strategy parse_strategy(const std::string& name) {
  const auto it = strategy_names().find(name);
  if (it == strategy_names().end()) throw ValidationError("unknown strategy: " + name);
  return it->second;
}

inline std::string strategy_name(Strategy s) {
  for (const auto& [name, value] : strategy_names()) {
    if (value == s) return name;
  }
  return "?";
}

inline FirstRule parse_first_rule(const std::string& name) {
  if (name == "uniform") return FirstRule::uniform;
  if (name == "top-k") return FirstRule::top_k;
  if (name == "random") return FirstRule::random;
  throw ValidationError("unknown first-iteration rule: " + name);
}

inline std::string first_rule_name(FirstRule r) {
  switch (r) {
    case FirstRule::uniform: return "uniform";
    case FirstRule::top_k: return "top-k";
    case FirstRule::random: return "random";
  }
  return "?";
}

/// Whether the strategy consumes pretext loss records.
inline bool needs_pretext(Strategy s) {
  return s == Strategy::pt4al || s == Strategy::pretext_only_high || s == Strategy::pretext_only_low ||
         s == Strategy::low_loss_first;
}

inline bool is_ablation(Strategy s) {
  return s == Strategy::sampling_only || s == Strategy::pretext_only_high || s == Strategy::pretext_only_low ||
         s == Strategy::low_loss_first;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
  auto rng = make_stream(seed, name, index);
  return rng();
}

// ---------------------------------------------------------------------------
// Dataset preparation

struct DatasetSpec {
  enum class Kind { synthetic, idx };
  Kind kind = Kind::synthetic;
  SyntheticSpec synthetic;
  std::string images_path;
  std::string labels_path;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  /// Imbalance applied to the training side only: explicit per-class counts,
  /// or the 500..500*C ramp times `ramp_scale` when counts are empty.
  bool imbalanced = false;
  std::vector<std::size_t> imbalance_counts;
  double ramp_scale = 0.1;
};

/// Simulated annotator over the ground-truth labels of the training pool.
class Oracle {
 public:
  Oracle() = default;
  explicit Oracle(const Pool& truth) {
    for (const auto& s : truth.samples) {
      require(s.label.has_value(), "oracle needs ground-truth labels");
      truth_.emplace(s.id, *s.label);
    }
  }

  std::size_t label(SampleId id) {
    const auto it = truth_.find(id);
    if (it == truth_.end()) throw ValidationError("oracle has no sample with id " + std::to_string(id));
    revealed_.insert(id);
    return it->second;
  }

  bool revealed(SampleId id) const { return revealed_.count(id) != 0; }
  std::size_t revealed_count() const { return revealed_.size(); }

 private:
  std::unordered_map<SampleId, std::size_t> truth_;
  std::unordered_set<SampleId> revealed_;
};

struct PreparedData {
  Pool unlabeled;  // X_U with labels hidden
  Pool test;       // held-out labeled split
  Pool truth;      // X_U with labels, backing the oracle
  std::size_t class_count = 0;
};

inline PreparedData prepare_dataset(const DatasetSpec& spec) {
  Pool master;
  if (spec.kind == DatasetSpec::Kind::synthetic) {
    master = gen_synthetic(spec.synthetic);
  } else {
    master = load_idx(spec.images_path, spec.labels_path);
  }
  master.validate();
  auto split = split_train_test(master, spec.test_fraction, spec.split_seed);
  Pool train = std::move(split.train);
  if (spec.imbalanced) {
    const auto counts = spec.imbalance_counts.empty() ? ramp_counts(master.class_count, spec.ramp_scale)
                                                      : spec.imbalance_counts;
    train = make_imbalanced(train, counts, derive_seed(spec.split_seed, "imbalance"));
  }
  PreparedData data;
  data.class_count = master.class_count;
  data.truth = train;
  data.unlabeled = strip_labels(std::move(train));
  data.test = std::move(split.test);
  return data;
}

// ---------------------------------------------------------------------------
// Loop

struct ALConfig {
  std::size_t iterations = 10;
  std::size_t budget = 1000;
  LearnerConfig pretext;
  LearnerConfig main;
  Strategy strategy = Strategy::pt4al;
  FirstRule first_rule = FirstRule::uniform;
  std::uint64_t seed = 0;

  void validate(std::size_t pool_size) const {
    require(iterations >= 1, "iteration count must be at least 1");
    require(budget >= 1, "per-iteration budget must be at least 1");
    require(iterations * budget <= pool_size, "total labeling budget " + std::to_string(iterations * budget) +
                                                  " exceeds unlabeled pool size " + std::to_string(pool_size));
  }
};

struct IterationReport {
  std::size_t iteration = 0;
  std::vector<SampleId> selected;
  std::size_t labeled_size = 0;
  double accuracy = 0.0;
  std::vector<std::size_t> histogram;  // classes of X_L
  double wall_seconds = 0.0;

  /// Entropy of the labeled-pool class histogram divided by ln C (1 = balanced).
  double class_balance() const {
    if (histogram.size() < 2 || labeled_size == 0) return 0.0;
    double h = 0.0;
    for (auto count : histogram) {
      if (count == 0) continue;
      const double p = static_cast<double>(count) / static_cast<double>(labeled_size);
      h -= p * std::log(p);
    }
    return h / std::log(static_cast<double>(histogram.size()));
  }
};

struct RunResult {
  std::vector<IterationReport> reports;
  std::vector<QueryResult> queries;
  std::optional<PretextReport> pretext;
  LearnerState final_model;
};

struct RunOptions {
  /// Stop after this many iterations (0 runs all of them).
  std::size_t stop_after = 0;
  std::function<void(const IterationReport&)> on_iteration;
};

/// Main-model config for a given pool geometry and iteration.
inline LearnerConfig main_config_for(const ALConfig& config, const PreparedData& data, std::size_t iteration) {
  LearnerConfig cfg = config.main;
  cfg.input = input_shape(data.unlabeled);
  cfg.classes = data.class_count;
  cfg.seed = derive_seed(config.seed, "main", iteration);
  return cfg;
}

inline LearnerConfig pretext_config_for(const ALConfig& config) {
  LearnerConfig cfg = config.pretext;
  cfg.seed = derive_seed(config.seed, "pretext");
  return cfg;
}

/// Runs the full loop. `losses` are the pretext loss records of X_U; when a
/// pretext strategy gets none, the pretext model is trained here first.
inline RunResult run_al(const ALConfig& config, const PreparedData& data,
                        std::optional<std::vector<LossRecord>> losses = std::nullopt, const RunOptions& options = {}) {
  config.validate(data.unlabeled.size());
  const SampleIndex index(data.unlabeled);
  require(data.class_count >= 2, "dataset needs at least 2 classes");
  require(!data.test.empty(), "test split is empty");
  for (const auto& s : data.test.samples) require(!index.contains(s.id), "test split overlaps the unlabeled pool");

  RunResult result;
  Oracle oracle(data.truth);

  if (needs_pretext(config.strategy)) {
    if (!losses) {
      auto [model, report] = train_pretext(data.unlabeled, pretext_config_for(config));
      losses = report.records;
      result.pretext = std::move(report);
    }
    require(losses->size() == data.unlabeled.size(), "pretext loss records do not cover the unlabeled pool");
    for (const auto& r : *losses) require(index.contains(r.id), "pretext loss record for unknown sample id");
  }

  std::unordered_map<SampleId, double> loss_of;
  if (losses) {
    for (const auto& r : *losses) loss_of.emplace(r.id, r.loss);
  }

  const std::uint64_t first_draw = derive_seed(config.seed, "sampling", 1);
  BatchPlan plan;
  switch (config.strategy) {
    case Strategy::pt4al:
    case Strategy::pretext_only_high:
    case Strategy::pretext_only_low:
      plan = build_batch_plan(*losses, config.iterations, BatchOrder::high_loss_first);
      break;
    case Strategy::low_loss_first:
      plan = build_batch_plan(*losses, config.iterations, BatchOrder::low_loss_first);
      break;
    case Strategy::sampling_only:
      plan = random_batch_plan(data.unlabeled.ids(), config.iterations, first_draw);
      break;
    case Strategy::random:
    case Strategy::entropy:
      break;
  }

  std::vector<SampleId> remaining = data.unlabeled.ids();
  std::set<SampleId> labeled_ids;
  Pool labeled;
  labeled.role = PoolRole::labeled;
  labeled.class_count = data.class_count;
  const LabeledSet test_set = to_labeled_set(data.test);
  std::optional<LearnerState> previous;

  const std::size_t last = options.stop_after == 0 ? config.iterations
                                                   : std::min(options.stop_after, config.iterations);
  for (std::size_t i = 1; i <= last; ++i) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t k = config.budget;
    const std::uint64_t draw_seed = derive_seed(config.seed, "sampling", i);
    std::span<const SampleId> batch;
    if (!plan.batches.empty()) batch = plan.batches[i - 1];

    QueryResult query;
    switch (config.strategy) {
      case Strategy::pt4al:
      case Strategy::low_loss_first:
        if (i == 1) {
          switch (config.first_rule) {
            case FirstRule::uniform: query = uniform_first_sample(batch, k); break;
            case FirstRule::top_k: query = uniform_first_sample(batch.first(k), k); break;
            case FirstRule::random: query = random_sample(batch, k, draw_seed); break;
          }
        } else {
          query = uncertainty_sample(batch, *previous, index, k);
        }
        break;
      case Strategy::pretext_only_high:
        query = loss_rank_sample(batch, loss_of, k, true);
        break;
      case Strategy::pretext_only_low:
        query = loss_rank_sample(batch, loss_of, k, false);
        break;
      case Strategy::sampling_only:
        // The segmentation already is a random permutation, so its first K
        // entries are a uniform draw (the same draw the random strategy makes).
        query = i == 1 ? uniform_first_sample(batch.first(k), k) : entropy_sample(batch, *previous, index, k);
        break;
      case Strategy::random:
        query = random_sample(remaining, k, draw_seed);
        break;
      case Strategy::entropy:
        query = i == 1 ? random_sample(remaining, k, draw_seed) : entropy_sample(remaining, *previous, index, k);
        break;
    }
    query.iteration = i;

    for (auto id : query.ids) {
      if (!labeled_ids.insert(id).second) throw RuntimeError("sample " + std::to_string(id) + " queried twice");
      Sample s = index.at(id);
      s.label = oracle.label(id);
      labeled.samples.push_back(std::move(s));
    }
    std::erase_if(remaining, [&](SampleId id) { return labeled_ids.count(id) != 0; });

    const auto cfg = main_config_for(config, data, i);
    auto trained = train(init_learner(cfg), to_labeled_set(labeled), cfg);

    IterationReport report;
    report.iteration = i;
    report.selected = query.ids;
    report.labeled_size = labeled.size();
    report.accuracy = accuracy(trained.state, test_set);
    report.histogram = class_histogram(labeled);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (options.on_iteration) options.on_iteration(report);

    result.reports.push_back(std::move(report));
    result.queries.push_back(std::move(query));
    previous = std::move(trained.state);
  }
  result.final_model = std::move(*previous);
  return result;
}

inline RunResult run_ablation(ALConfig config, Strategy variant, const PreparedData& data,
                              std::optional<std::vector<LossRecord>> losses = std::nullopt,
                              const RunOptions& options = {}) {
  require(is_ablation(variant), "not an ablation variant: " + strategy_name(variant));
  config.strategy = variant;
  return run_al(config, data, std::move(losses), options);
}

// ---------------------------------------------------------------------------
// Cold start

struct SummaryStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
  double min = 0.0;
  double max = 0.0;
};

inline SummaryStats summarize(std::span<const double> values) {
  require(!values.empty(), "summary of an empty list");
  SummaryStats s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  return s;
}

struct ColdStartSummary {
  std::vector<std::uint64_t> seeds;
  std::vector<double> pt4al;
  std::vector<double> random;
  SummaryStats pt4al_stats;
  SummaryStats random_stats;
};

/// First-iteration accuracy of PT4AL and of random selection for each seed.
/// The pretext losses (and so the PT4AL query) are shared by all seeds; the
/// seed drives main-model initialization, shuffling and the random draw.
inline ColdStartSummary cold_start_experiment(ALConfig config, const PreparedData& data,
                                              const std::vector<LossRecord>& losses,
                                              const std::vector<std::uint64_t>& seeds) {
  require(seeds.size() >= 2, "cold start needs at least 2 seeds");
  require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "cold start seeds must be distinct");
  ColdStartSummary summary;
  summary.seeds = seeds;
  RunOptions first_only;
  first_only.stop_after = 1;
  for (auto seed : seeds) {
    config.seed = seed;
    config.strategy = Strategy::pt4al;
    summary.pt4al.push_back(run_al(config, data, losses, first_only).reports.front().accuracy);
    config.strategy = Strategy::random;
    summary.random.push_back(run_al(config, data, std::nullopt, first_only).reports.front().accuracy);
  }
  summary.pt4al_stats = summarize(summary.pt4al);
  summary.random_stats = summarize(summary.random);
  return summary;
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// `iteration,accuracy,labeled_size,class_balance,histogram`; the histogram
/// counts are joined by ';'. Wall time is deliberately absent so the file is
/// reproducible byte for byte.
inline void write_report_csv(std::ostream& out, const std::vector<IterationReport>& reports) {
  out << "iteration,accuracy,labeled_size,class_balance,histogram\n";
  for (const auto& r : reports) {
    out << r.iteration << ',' << format_real(r.accuracy) << ',' << r.labeled_size << ','
        << format_real(r.class_balance()) << ',';
    for (std::size_t c = 0; c < r.histogram.size(); ++c) out << (c ? ";" : "") << r.histogram[c];
    out << '\n';
  }
}

inline void write_coldstart_csv(std::ostream& out, const ColdStartSummary& s) {
  out << "seed,strategy,accuracy\n";
  for (std::size_t i = 0; i < s.seeds.size(); ++i) {
    out << s.seeds[i] << ",pt4al," << format_real(s.pt4al[i]) << '\n';
    out << s.seeds[i] << ",random," << format_real(s.random[i]) << '\n';
  }
}

inline void write_summary_csv(std::ostream& out, const ColdStartSummary& s) {
  out << "strategy,mean,std,min,max\n";
  auto row = [&](const char* name, const SummaryStats& st) {
    out << name << ',' << format_real(st.mean) << ',' << format_real(st.stddev) << ',' << format_real(st.min) << ','
        << format_real(st.max) << '\n';
  };
  row("pt4al", s.pt4al_stats);
  row("random", s.random_stats);
}

}  // namespace pt4al
