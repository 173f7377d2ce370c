#pragma once

// Batch splitting by pretext loss and the in-batch query rules. Every
// ordering breaks ties by ascending sample id.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pt4al/data.hpp"
#include "pt4al/error.hpp"
#include "pt4al/learner.hpp"
#include "pt4al/pretext.hpp"
#include "pt4al/rng.hpp"

namespace pt4al {

enum class BatchOrder { high_loss_first, low_loss_first };

/// Ordered partition of the unlabeled ids; batch i is consumed at iteration i+1.
struct BatchPlan {
  std::vector<std::vector<SampleId>> batches;
  BatchOrder order = BatchOrder::high_loss_first;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& b : batches) n += b.size();
    return n;
  }
};

struct QueryResult {
  std::size_t iteration = 0;
  std::vector<SampleId> ids;
  std::vector<double> scores;  // confidence, entropy, loss or in-batch rank depending on the rule
};

/// Sorts by loss (descending for high-loss-first) and cuts the sequence into
/// `batch_count` contiguous batches; the first n % batch_count batches hold
/// one extra element.
inline BatchPlan build_batch_plan(std::span<const LossRecord> records, std::size_t batch_count,
                                  BatchOrder order = BatchOrder::high_loss_first) {
  require(batch_count >= 1, "batch count must be at least 1");
  require(batch_count <= records.size(), "batch count exceeds the number of loss records");
  std::unordered_set<SampleId> seen;
  for (const auto& r : records) require(seen.insert(r.id).second, "duplicate id in loss records");

  std::vector<LossRecord> sorted(records.begin(), records.end());
  const bool descending = order == BatchOrder::high_loss_first;
  std::stable_sort(sorted.begin(), sorted.end(), [descending](const LossRecord& a, const LossRecord& b) {
    if (a.loss != b.loss) return descending ? a.loss > b.loss : a.loss < b.loss;
    return a.id < b.id;
  });

  BatchPlan plan;
  plan.order = order;
  const std::size_t base = sorted.size() / batch_count, extra = sorted.size() % batch_count;
  std::size_t cursor = 0;
  for (std::size_t b = 0; b < batch_count; ++b) {
    const std::size_t size = base + (b < extra ? 1 : 0);
    std::vector<SampleId> batch;
    batch.reserve(size);
    for (std::size_t k = 0; k < size; ++k) batch.push_back(sorted[cursor++].id);
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

/// Random contiguous segmentation of `ids` into `batch_count` batches. Uses
/// the same permutation as random_sample(ids, ., seed).
inline BatchPlan random_batch_plan(std::vector<SampleId> ids, std::size_t batch_count, std::uint64_t seed) {
  require(batch_count >= 1 && batch_count <= ids.size(), "batch count must lie in 1..pool size");
  auto rng = make_stream(seed, "random-sample");
  shuffle(std::span<SampleId>(ids), rng);
  BatchPlan plan;
  const std::size_t base = ids.size() / batch_count, extra = ids.size() % batch_count;
  std::size_t cursor = 0;
  for (std::size_t b = 0; b < batch_count; ++b) {
    const std::size_t size = base + (b < extra ? 1 : 0);
    plan.batches.emplace_back(ids.begin() + static_cast<long>(cursor), ids.begin() + static_cast<long>(cursor + size));
    cursor += size;
  }
  return plan;
}

/// Even-interval pick over a loss-ordered batch: positions floor(j*B/K).
inline QueryResult uniform_first_sample(std::span<const SampleId> batch, std::size_t k) {
  require(k >= 1 && k <= batch.size(), "budget must lie in 1..batch size");
  QueryResult q;
  q.iteration = 1;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pos = j * batch.size() / k;
    q.ids.push_back(batch[pos]);
    q.scores.push_back(static_cast<double>(pos));
  }
  return q;
}

namespace detail {

/// K entries with the smallest (key, id); result in that order.
inline QueryResult select_smallest(std::span<const SampleId> ids, std::span<const double> keys, std::size_t k) {
  require(ids.size() == keys.size(), "score count does not match batch size");
  require(k >= 1 && k <= ids.size(), "budget must lie in 1..batch size");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    if (keys[a] != keys[b]) return keys[a] < keys[b];
    return ids[a] < ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(), less);
  QueryResult q;
  for (std::size_t j = 0; j < k; ++j) {
    q.ids.push_back(ids[order[j]]);
    q.scores.push_back(keys[order[j]]);
  }
  return q;
}

}  // namespace detail

inline double max_confidence(std::span<const double> posterior) {
  require(!posterior.empty(), "empty posterior");
  return *std::max_element(posterior.begin(), posterior.end());
}

/// Shannon entropy in nats; 0 log 0 = 0.
inline double shannon_entropy(std::span<const double> posterior) {
  double h = 0.0;
  for (double p : posterior) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

/// Least-confidence rule on precomputed posteriors: the K ids whose top-1
/// probability is smallest. Scores are those confidences.
inline QueryResult uncertainty_select(std::span<const SampleId> ids, const std::vector<std::vector<double>>& posteriors,
                                      std::size_t k) {
  require(ids.size() == posteriors.size(), "posterior count does not match batch size");
  std::vector<double> conf(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) conf[i] = max_confidence(posteriors[i]);
  return detail::select_smallest(ids, conf, k);
}

/// The K ids with the highest posterior entropy. Scores are the entropies.
inline QueryResult entropy_select(std::span<const SampleId> ids, const std::vector<std::vector<double>>& posteriors,
                                  std::size_t k) {
  require(ids.size() == posteriors.size(), "posterior count does not match batch size");
  std::vector<double> neg(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) neg[i] = -shannon_entropy(posteriors[i]);
  auto q = detail::select_smallest(ids, neg, k);
  for (double& s : q.scores) s = -s;
  return q;
}

/// Id -> sample lookup over a pool that outlives the index.
class SampleIndex {
 public:
  explicit SampleIndex(const Pool& pool) {
    for (const auto& s : pool.samples) by_id_.emplace(s.id, &s);
  }
  const Sample& at(SampleId id) const {
    const auto it = by_id_.find(id);
    if (it == by_id_.end()) throw ValidationError("unknown sample id " + std::to_string(id));
    return *it->second;
  }
  bool contains(SampleId id) const { return by_id_.count(id) != 0; }

 private:
  std::unordered_map<SampleId, const Sample*> by_id_;
};

inline std::vector<std::vector<double>> posteriors(const LearnerState& model, std::span<const SampleId> ids,
                                                   const SampleIndex& index) {
  std::vector<std::vector<double>> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    const auto& s = index.at(id);
    if (s.label) require(*s.label < model.config.classes, "sample label exceeds model class count");
    out.push_back(predict_proba(model, s.image.pixels));
  }
  return out;
}

/// Least-confidence sampling with the previous iteration's main model.
inline QueryResult uncertainty_sample(std::span<const SampleId> batch, const LearnerState& model,
                                      const SampleIndex& index, std::size_t k) {
  require(k >= 1 && k <= batch.size(), "budget must lie in 1..batch size");
  return uncertainty_select(batch, posteriors(model, batch, index), k);
}

inline QueryResult entropy_sample(std::span<const SampleId> batch, const LearnerState& model,
                                  const SampleIndex& index, std::size_t k) {
  require(k >= 1 && k <= batch.size(), "budget must lie in 1..batch size");
  return entropy_select(batch, posteriors(model, batch, index), k);
}

/// Seeded draw without replacement: the first K ids of a seeded shuffle.
/// Scores are draw positions.
inline QueryResult random_sample(std::span<const SampleId> batch, std::size_t k, std::uint64_t seed) {
  require(k >= 1 && k <= batch.size(), "budget must lie in 1..batch size");
  std::vector<SampleId> ids(batch.begin(), batch.end());
  auto rng = make_stream(seed, "random-sample");
  shuffle(std::span<SampleId>(ids), rng);
  QueryResult q;
  for (std::size_t j = 0; j < k; ++j) {
    q.ids.push_back(ids[j]);
    q.scores.push_back(static_cast<double>(j));
  }
  return q;
}

/// Naive pretext-only rule: the K highest (or lowest) pretext losses of the
/// batch. Scores are the losses.
inline QueryResult loss_rank_sample(std::span<const SampleId> batch,
                                    const std::unordered_map<SampleId, double>& losses, std::size_t k,
                                    bool highest) {
  std::vector<double> keys;
  keys.reserve(batch.size());
  for (auto id : batch) {
    const auto it = losses.find(id);
    require(it != losses.end(), "no pretext loss for sample " + std::to_string(id));
    keys.push_back(highest ? -it->second : it->second);
  }
  auto q = detail::select_smallest(batch, keys, k);
  if (highest) {
    for (double& s : q.scores) s = -s;
  }
  return q;
}

inline void write_plan_csv(std::ostream& out, const BatchPlan& plan) {
  out << "sample_id,batch_index,rank_in_batch\n";
  for (std::size_t b = 0; b < plan.batches.size(); ++b) {
    for (std::size_t r = 0; r < plan.batches[b].size(); ++r) out << plan.batches[b][r] << ',' << b << ',' << r << '\n';
  }
}

inline void write_query_csv_header(std::ostream& out) { out << "iteration,sample_id,score\n"; }

inline void write_query_rows(std::ostream& out, const QueryResult& q) {
  char buf[64];
  for (std::size_t j = 0; j < q.ids.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%.12g", q.scores[j]);
    out << q.iteration << ',' << q.ids[j] << ',' << buf << '\n';
  }
}

}  // namespace pt4al
