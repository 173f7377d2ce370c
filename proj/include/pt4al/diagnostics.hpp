#pragma once

// Rank correlation between pretext-task loss and main-task loss.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "pt4al/data.hpp"
#include "pt4al/error.hpp"
#include "pt4al/learner.hpp"
#include "pt4al/pretext.hpp"
#include "pt4al/rng.hpp"

namespace pt4al {

/// Zero-based ranks; tied values share the mean of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j);
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = shared;
    i = j + 1;
  }
  return ranks;
}

/// Average ranks scaled into [0, 1]; a single value or an all-tied list maps to 0.5.
inline std::vector<double> normalized_rank(std::span<const double> values) {
  require(!values.empty(), "normalized rank of an empty list");
  auto ranks = average_ranks(values);
  if (values.size() == 1) return {0.5};
  const double scale = static_cast<double>(values.size() - 1);
  for (double& r : ranks) r /= scale;
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  require(saa > 0.0 && sbb > 0.0, "correlation of a constant list is undefined");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Spearman's rho: Pearson correlation of the average-rank vectors.
inline double spearman_rho(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "spearman inputs differ in length");
  require(a.size() >= 2, "spearman needs at least two observations");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

struct RankedPair {
  SampleId id = 0;
  double pretext_rank = 0.0;
  double main_rank = 0.0;
};

struct CorrelationReport {
  double rho = 0.0;
  std::size_t n = 0;
  std::vector<RankedPair> scatter;  // at most `scatter_cap` pairs, in sample order
};

inline constexpr std::size_t kScatterCap = 1000;

/// Rho over all samples plus a seeded subsample of normalized-rank pairs.
inline CorrelationReport correlation_from_losses(std::span<const SampleId> ids, std::span<const double> pretext,
                                                 std::span<const double> main, std::uint64_t seed,
                                                 std::size_t scatter_cap = kScatterCap) {
  require(ids.size() == pretext.size() && ids.size() == main.size(), "loss lists differ in length");
  CorrelationReport report;
  report.n = ids.size();
  report.rho = spearman_rho(pretext, main);
  const auto pr = normalized_rank(pretext);
  const auto mr = normalized_rank(main);
  std::vector<std::size_t> picks(ids.size());
  std::iota(picks.begin(), picks.end(), std::size_t{0});
  if (picks.size() > scatter_cap) {
    auto rng = make_stream(seed, "scatter");
    shuffle(std::span<std::size_t>(picks), rng);
    picks.resize(scatter_cap);
    std::sort(picks.begin(), picks.end());
  }
  for (auto i : picks) report.scatter.push_back({ids[i], pr[i], mr[i]});
  return report;
}

/// Per-sample averaged rotation loss and main-task cross-entropy on a labeled
/// evaluation pool, correlated.
inline CorrelationReport correlation_report(const LearnerState& pretext_model, const LearnerState& main_model,
                                            const Pool& eval, std::uint64_t seed) {
  require(!eval.empty(), "evaluation pool is empty");
  std::vector<SampleId> ids;
  std::vector<double> main_losses;
  for (const auto& s : eval.samples) {
    require(s.label.has_value(), "correlation needs a labeled evaluation pool");
    ids.push_back(s.id);
    main_losses.push_back(per_sample_loss(main_model, s.image.pixels, *s.label));
  }
  std::vector<double> pretext_losses;
  for (const auto& r : extract_losses(pretext_model, eval)) pretext_losses.push_back(r.loss);
  return correlation_from_losses(ids, pretext_losses, main_losses, seed);
}

inline void write_scatter_csv(std::ostream& out, const CorrelationReport& report) {
  out << "sample_id,pretext_rank,main_rank\n";
  char buf[96];
  for (const auto& p : report.scatter) {
    std::snprintf(buf, sizeof buf, "%.12g,%.12g", p.pretext_rank, p.main_rank);
    out << p.id << ',' << buf << '\n';
  }
}

}  // namespace pt4al
