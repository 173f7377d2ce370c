#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "pt4al/al_loop.hpp"
#include "test_support.hpp"

using namespace pt4al;
using pt4al::testing::small_al;
using pt4al::testing::small_data;

namespace {

const PreparedData& shared_data() {
  static const PreparedData data = small_data();
  return data;
}

const std::vector<LossRecord>& shared_losses() {
  static const std::vector<LossRecord> losses = [] {
    const auto cfg = small_al(3, 10, Strategy::pt4al);
    return train_pretext(shared_data().unlabeled, pretext_config_for(cfg)).second.records;
  }();
  return losses;
}

}  // namespace

TEST(Oracle, LabelsAreIdempotent) {
  Oracle oracle(shared_data().truth);
  const auto id = shared_data().truth.samples[5].id;
  const auto first = oracle.label(id);
  EXPECT_EQ(oracle.label(id), first);
  EXPECT_EQ(first, *shared_data().truth.samples[5].label);
  EXPECT_TRUE(oracle.revealed(id));
  EXPECT_EQ(oracle.revealed_count(), 1u);
}

TEST(Oracle, UnknownIdIsRejected) {
  Oracle oracle(shared_data().truth);
  EXPECT_THROW(oracle.label(999999), ValidationError);
}

TEST(Prepare, SplitsAreDisjointAndLabelsHidden) {
  const auto& data = shared_data();
  EXPECT_EQ(data.unlabeled.size(), 144u);
  EXPECT_EQ(data.test.size(), 36u);
  std::set<SampleId> ids;
  for (const auto& s : data.unlabeled.samples) {
    EXPECT_FALSE(s.label.has_value());
    ids.insert(s.id);
  }
  for (const auto& s : data.test.samples) EXPECT_EQ(ids.count(s.id), 0u);
  EXPECT_EQ(data.truth.ids(), data.unlabeled.ids());
}

TEST(Prepare, ImbalanceAppliesToTrainingSideOnly) {
  DatasetSpec spec;
  spec.synthetic = {50, 3, 8, 0.1, 2};
  spec.imbalanced = true;
  spec.imbalance_counts = {10, 20, 40};
  const auto data = prepare_dataset(spec);
  EXPECT_EQ(class_histogram(data.truth), (std::vector<std::size_t>{10, 20, 40}));
  EXPECT_EQ(class_histogram(data.test), (std::vector<std::size_t>{10, 10, 10}));
}

class EveryStrategy : public ::testing::TestWithParam<Strategy> {};

TEST_P(EveryStrategy, BookkeepingTraceAndPoolConservation) {
  const auto cfg = small_al(4, 12, GetParam());
  const auto losses = needs_pretext(GetParam()) ? std::optional(shared_losses()) : std::nullopt;
  const auto result = run_al(cfg, shared_data(), losses);
  ASSERT_EQ(result.reports.size(), 4u);
  std::set<SampleId> labeled;
  const auto pool_ids = shared_data().unlabeled.ids();
  const std::set<SampleId> pool(pool_ids.begin(), pool_ids.end());
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& r = result.reports[i];
    EXPECT_EQ(r.iteration, i + 1);
    EXPECT_EQ(r.labeled_size, 12 * (i + 1));
    EXPECT_EQ(r.selected.size(), 12u);
    for (auto id : r.selected) {
      EXPECT_TRUE(pool.count(id));
      EXPECT_TRUE(labeled.insert(id).second) << "id " << id << " selected twice";
    }
    std::size_t hist_total = 0;
    for (auto c : r.histogram) hist_total += c;
    EXPECT_EQ(hist_total, r.labeled_size);
    EXPECT_GE(r.class_balance(), 0.0);
    EXPECT_LE(r.class_balance(), 1.0 + 1e-12);
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
  }
  EXPECT_EQ(labeled.size() + (pool.size() - labeled.size()), pool.size());
}

TEST_P(EveryStrategy, SameSeedSameRun) {
  const auto cfg = small_al(2, 10, GetParam());
  const auto losses = needs_pretext(GetParam()) ? std::optional(shared_losses()) : std::nullopt;
  const auto a = run_al(cfg, shared_data(), losses);
  const auto b = run_al(cfg, shared_data(), losses);
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    EXPECT_EQ(a.reports[i].selected, b.reports[i].selected);
    EXPECT_EQ(a.reports[i].accuracy, b.reports[i].accuracy);
  }
  EXPECT_EQ(a.final_model, b.final_model);
}

INSTANTIATE_TEST_SUITE_P(AllStrategies, EveryStrategy,
                         ::testing::Values(Strategy::pt4al, Strategy::random, Strategy::entropy,
                                           Strategy::sampling_only, Strategy::pretext_only_high,
                                           Strategy::pretext_only_low, Strategy::low_loss_first),
                         [](const auto& info) {
                           auto name = strategy_name(info.param);
                           std::erase(name, '-');
                           return name;
                         });

TEST(RunAl, FullBudgetEqualsFullDataTraining) {
  const auto& data = shared_data();
  const auto cfg = small_al(1, data.unlabeled.size(), Strategy::random);
  const auto result = run_al(cfg, data);
  ASSERT_EQ(result.reports.front().labeled_size, data.unlabeled.size());
  // Same examples in the same order, same seeds: training must coincide exactly.
  const SampleIndex truth(data.truth);
  LabeledSet all;
  for (auto id : result.reports.front().selected) all.add(truth.at(id).image.pixels, *truth.at(id).label);
  const auto main_cfg = main_config_for(cfg, data, 1);
  const auto model = train(init_learner(main_cfg), all, main_cfg).state;
  EXPECT_EQ(result.reports.front().accuracy, accuracy(model, to_labeled_set(data.test)));
  EXPECT_EQ(result.final_model, model);
}

TEST(RunAl, FirstPt4alQueryIsUniformOverHighestLossBatch) {
  const auto cfg = small_al(3, 10, Strategy::pt4al);
  const auto result = run_al(cfg, shared_data(), shared_losses());
  const auto plan = build_batch_plan(shared_losses(), 3);
  EXPECT_EQ(result.queries[0].ids, uniform_first_sample(plan.batches[0], 10).ids);
  for (std::size_t i = 1; i < 3; ++i) {
    const std::set<SampleId> batch(plan.batches[i].begin(), plan.batches[i].end());
    for (auto id : result.queries[i].ids) EXPECT_TRUE(batch.count(id));
  }
}

TEST(RunAl, LaterPt4alQueriesAreLeastConfidentUnderPreviousModel) {
  auto cfg = small_al(2, 10, Strategy::pt4al);
  RunOptions first_only;
  first_only.stop_after = 1;
  const auto first = run_al(cfg, shared_data(), shared_losses(), first_only);
  const auto full = run_al(cfg, shared_data(), shared_losses());
  const auto plan = build_batch_plan(shared_losses(), 2);
  const SampleIndex index(shared_data().unlabeled);
  EXPECT_EQ(full.queries[1].ids, uncertainty_sample(plan.batches[1], first.final_model, index, 10).ids);
}

TEST(RunAl, TopKFirstRuleTakesHighestLosses) {
  auto cfg = small_al(2, 7, Strategy::pt4al);
  cfg.first_rule = FirstRule::top_k;
  const auto result = run_al(cfg, shared_data(), shared_losses());
  const auto plan = build_batch_plan(shared_losses(), 2);
  EXPECT_EQ(result.queries[0].ids, std::vector<SampleId>(plan.batches[0].begin(), plan.batches[0].begin() + 7));
}

TEST(RunAl, LowLossFirstStartsFromLowestLosses) {
  const auto cfg = small_al(3, 5, Strategy::low_loss_first);
  const auto result = run_al(cfg, shared_data(), shared_losses());
  const auto plan = build_batch_plan(shared_losses(), 3, BatchOrder::low_loss_first);
  EXPECT_EQ(result.queries[0].ids, uniform_first_sample(plan.batches[0], 5).ids);
}

TEST(Ablation, PretextOnlyHighTakesHighestLossesOfEachBatch) {
  const auto cfg = small_al(3, 6, Strategy::pt4al);
  const auto result = run_ablation(cfg, Strategy::pretext_only_high, shared_data(), shared_losses());
  const auto plan = build_batch_plan(shared_losses(), 3);
  for (std::size_t i = 0; i < 3; ++i) {
    // Batches are already sorted by descending loss then id.
    EXPECT_EQ(result.queries[i].ids, std::vector<SampleId>(plan.batches[i].begin(), plan.batches[i].begin() + 6));
  }
}

TEST(Ablation, PretextOnlyLowTakesLowestLossesOfEachBatch) {
  const auto cfg = small_al(2, 4, Strategy::pt4al);
  const auto result = run_ablation(cfg, Strategy::pretext_only_low, shared_data(), shared_losses());
  const auto plan = build_batch_plan(shared_losses(), 2);
  std::unordered_map<SampleId, double> loss;
  for (const auto& r : shared_losses()) loss[r.id] = r.loss;
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(result.queries[i].ids, loss_rank_sample(plan.batches[i], loss, 4, false).ids);
  }
}

TEST(Ablation, SamplingOnlyFirstIterationMatchesRandom) {
  const auto cfg = small_al(3, 9, Strategy::random, 21);
  const auto random = run_al(cfg, shared_data());
  const auto sampling_only = run_ablation(cfg, Strategy::sampling_only, shared_data());
  EXPECT_EQ(sampling_only.queries[0].ids, random.queries[0].ids);
  EXPECT_EQ(sampling_only.reports[0].accuracy, random.reports[0].accuracy);
}

TEST(Ablation, RejectsNonAblation) {
  const auto cfg = small_al(2, 5, Strategy::pt4al);
  EXPECT_THROW(run_ablation(cfg, Strategy::random, shared_data()), ValidationError);
  EXPECT_THROW(parse_strategy("pt4al-nothing"), ValidationError);
}

TEST(RunAl, BudgetBeyondPoolIsRejected) {
  const auto cfg = small_al(10, 15, Strategy::random);
  EXPECT_THROW(run_al(cfg, shared_data()), ValidationError);
}

TEST(RunAl, LossesMustCoverThePool) {
  auto losses = shared_losses();
  losses.pop_back();
  EXPECT_THROW(run_al(small_al(2, 5, Strategy::pt4al), shared_data(), losses), ValidationError);
  losses = shared_losses();
  losses.back().id = 987654;
  EXPECT_THROW(run_al(small_al(2, 5, Strategy::pt4al), shared_data(), losses), ValidationError);
}

TEST(RunAl, TrainsPretextWhenNoLossesGiven) {
  const auto result = run_al(small_al(2, 5, Strategy::pt4al), shared_data());
  ASSERT_TRUE(result.pretext.has_value());
  EXPECT_EQ(result.pretext->records.size(), shared_data().unlabeled.size());
}

TEST(ColdStart, Pt4alSelectionDoesNotDependOnSeed) {
  RunOptions first_only;
  first_only.stop_after = 1;
  const auto a = run_al(small_al(3, 10, Strategy::pt4al, 1), shared_data(), shared_losses(), first_only);
  const auto b = run_al(small_al(3, 10, Strategy::pt4al, 2), shared_data(), shared_losses(), first_only);
  EXPECT_EQ(a.queries[0].ids, b.queries[0].ids);
}

TEST(ColdStart, SummaryPerSeed) {
  const auto summary = cold_start_experiment(small_al(3, 10, Strategy::pt4al), shared_data(), shared_losses(), {4, 5, 6});
  ASSERT_EQ(summary.pt4al.size(), 3u);
  ASSERT_EQ(summary.random.size(), 3u);
  EXPECT_NEAR(summary.pt4al_stats.mean, (summary.pt4al[0] + summary.pt4al[1] + summary.pt4al[2]) / 3.0, 1e-15);
  EXPECT_LE(summary.random_stats.min, summary.random_stats.max);
}

TEST(ColdStart, SeedListIsValidated) {
  const auto cfg = small_al(3, 10, Strategy::pt4al);
  EXPECT_THROW(cold_start_experiment(cfg, shared_data(), shared_losses(), {1}), ValidationError);
  EXPECT_THROW(cold_start_experiment(cfg, shared_data(), shared_losses(), {1, 1}), ValidationError);
}

TEST(Summary, SampleStatistics) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.stddev, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 4.0);
  EXPECT_EQ(summarize(std::vector<double>{3}).stddev, 0.0);
}

TEST(Report, ClassBalanceIsNormalizedEntropy) {
  IterationReport r;
  r.labeled_size = 8;
  r.histogram = {2, 2, 2, 2};
  EXPECT_NEAR(r.class_balance(), 1.0, 1e-15);
  r.histogram = {8, 0, 0, 0};
  EXPECT_EQ(r.class_balance(), 0.0);
}

TEST(Report, CsvLayout) {
  IterationReport r;
  r.iteration = 1;
  r.labeled_size = 4;
  r.accuracy = 0.75;
  r.histogram = {1, 3};
  r.wall_seconds = 12.5;
  std::ostringstream out;
  write_report_csv(out, {r});
  EXPECT_EQ(out.str(),
            "iteration,accuracy,labeled_size,class_balance,histogram\n1,0.75,4," + format_real(r.class_balance()) +
                ",1;3\n");
}
