#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "embrenorm/stats.hpp"
#include "embrenorm/synth.hpp"

using namespace embrenorm;
using namespace embrenorm::stats;

namespace {

RunRecord rec(std::string task, double value, std::uint64_t n, double sigma, RenormMethod m,
              TaskType type = TaskType::Classification, std::string model = "m") {
  RunRecord r;
  r.task_id = std::move(task);
  r.task_type = type;
  r.model_id = std::move(model);
  r.method = m;
  r.score = {"accuracy", value, n, sigma};
  return r;
}

ComparisonRow row(double delta, double sigma, double baseline = 0.5, std::string task = "t") {
  return make_row(std::move(task), TaskType::Retrieval, "m", {"ndcg@10", baseline, 100, sigma},
                  {"ndcg@10", baseline + delta, 100, sigma});
}

}  // namespace

TEST(Compare, WorkedExample) {
  const auto res = compare({rec("t", 0.80, 1600, 0.01, RenormMethod::Identity)},
                           {rec("t", 0.83, 1600, 0.0094, RenormMethod::R2)});
  ASSERT_EQ(res.rows.size(), 1u);
  const auto& r = res.rows[0];
  EXPECT_NEAR(r.delta, 0.03, 1e-12);
  EXPECT_NEAR(*r.rel_delta, 0.0375, 1e-12);
  EXPECT_NEAR(r.z, 3.0, 1e-9);
  EXPECT_EQ(render(r), "+3.75% 3.0σ ↑");
}

TEST(Compare, IdenticalRecordsGiveZero) {
  const auto res = compare({rec("t", 0.5, 10, 0.1, RenormMethod::Identity)}, {rec("t", 0.5, 10, 0.1, RenormMethod::R1)});
  EXPECT_EQ(res.rows[0].delta, 0.0);
  EXPECT_EQ(res.rows[0].z, 0.0);
}

TEST(Compare, SigmaClipBoundary) {
  const auto res = compare({rec("t", 1.0 - 1e-6, 10, 0.0, RenormMethod::Identity)},
                           {rec("t", 1.0, 10, 0.0, RenormMethod::R2)});
  EXPECT_NEAR(res.rows[0].z, 1.0, 1e-9);
}

TEST(Compare, KeyMismatchAndSkippedFailures) {
  EXPECT_THROW(compare({rec("a", 0.5, 10, 0.1, RenormMethod::Identity)}, {rec("b", 0.5, 10, 0.1, RenormMethod::R2)}),
               Error);
  auto failed = rec("b", 0, 0, 0, RenormMethod::R2);
  failed.status = RunStatus::Failed;
  const auto res = compare({rec("a", 0.5, 10, 0.1, RenormMethod::Identity), rec("b", 0.5, 10, 0.1, RenormMethod::Identity)},
                           {rec("a", 0.6, 10, 0.1, RenormMethod::R2), failed});
  EXPECT_EQ(res.rows.size(), 1u);
  EXPECT_EQ(res.skipped, (std::vector<std::string>{"b"}));
}

TEST(Compare, CombinedSigmaMode) {
  const auto r = make_row("t", TaskType::Sts, "m", {"spearman", 0.5, 10, 0.03}, {"spearman", 0.6, 10, 0.04},
                          SigmaMode::Combined);
  EXPECT_NEAR(r.z, 0.1 / 0.05, 1e-12);
}

TEST(Compare, ZeroBaselineHasNoRelativeDelta) {
  const auto r = row(0.1, 0.01, 0.0);
  EXPECT_FALSE(r.rel_delta.has_value());
}

TEST(Aggregate, TwoEqualRows) {
  const auto a = aggregate({row(0.01, 0.01, 0.5, "a"), row(0.01, 0.01, 0.5, "b")}, GroupBy::TaskType);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_NEAR(a[0].aggregate_z, 0.02 / (0.01 * std::sqrt(2.0)), 1e-9);
  EXPECT_NEAR(a[0].aggregate_z, 1.414214, 1e-6);
  EXPECT_EQ(a[0].count, 2u);
}

TEST(Aggregate, AllZero) {
  const auto a = aggregate({row(0, 0.01, 0.5, "a"), row(0, 0.02, 0.5, "b")}, GroupBy::Model);
  EXPECT_EQ(a[0].aggregate_z, 0.0);
  EXPECT_EQ(a[0].frac_above_2sigma, 0.0);
  EXPECT_EQ(a[0].frac_below_minus_2sigma, 0.0);
}

TEST(Aggregate, SingletonEqualsRowZ) {
  const auto r = row(0.037, 0.013);
  EXPECT_NEAR(aggregate({r}, GroupBy::TaskType)[0].aggregate_z, r.z, 1e-12);
}

TEST(Aggregate, FractionsAndGrouping) {
  std::vector<ComparisonRow> rows{row(0.05, 0.01, 0.5, "a"), row(-0.05, 0.01, 0.5, "b"), row(0.0, 0.01, 0.5, "c"),
                                  row(0.03, 0.01, 0.5, "d")};
  rows[3].model_id = "other";
  const auto by_model = aggregate(rows, GroupBy::Model);
  ASSERT_EQ(by_model.size(), 2u);
  EXPECT_EQ(by_model[0].group_key, "m");
  EXPECT_NEAR(by_model[0].frac_above_2sigma, 1.0 / 3, 1e-12);
  EXPECT_NEAR(by_model[0].frac_below_minus_2sigma, 1.0 / 3, 1e-12);
  EXPECT_EQ(by_model[1].group_key, "other");
}

TEST(Aggregate, CompareThenAggregateIsPermutationInvariant) {
  std::mt19937_64 g(3);
  std::vector<RunRecord> base, treat;
  for (int i = 0; i < 30; ++i) {
    const double v = 0.3 + 0.01 * i;
    base.push_back(rec("t" + std::to_string(i), v, 100 + i, 0.02, RenormMethod::Identity,
                       i % 2 ? TaskType::Retrieval : TaskType::Sts));
    treat.push_back(rec("t" + std::to_string(i), v + 0.001 * (i % 7) - 0.002, 100 + i, 0.02, RenormMethod::R2,
                        i % 2 ? TaskType::Retrieval : TaskType::Sts));
  }
  const auto a = aggregate(compare(base, treat).rows, GroupBy::TaskType);
  std::shuffle(base.begin(), base.end(), g);
  std::shuffle(treat.begin(), treat.end(), g);
  const auto b = aggregate(compare(base, treat).rows, GroupBy::TaskType);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].group_key, b[i].group_key);
    EXPECT_EQ(a[i].aggregate_z, b[i].aggregate_z);
    EXPECT_EQ(a[i].mean_delta, b[i].mean_delta);
  }
}

TEST(Render, SignedPercentAndSigma) {
  EXPECT_EQ(render_significance(0.0868, 89.4), "+8.68% 89.4σ ↑");
  EXPECT_EQ(render_significance(-0.0026, -0.8), "-0.26% 0.8σ ↓");
}

TEST(Extremes, NothingPasses) {
  const auto s = significant_extremes({row(0.05, 0.01), row(-0.01, 0.01)});
  EXPECT_EQ(s.up.count, 0u);
  EXPECT_EQ(s.down.count, 0u);
  EXPECT_FALSE(s.up.max.has_value());
  EXPECT_FALSE(s.down.mean.has_value());
  EXPECT_EQ(s.filtered_out, 2u);
}

TEST(Extremes, SingleLargeGain) {
  const auto s = significant_extremes({row(0.5559, 0.01, 0.3)});
  ASSERT_EQ(s.up.count, 1u);
  EXPECT_DOUBLE_EQ(*s.up.max, 0.5559);
}

TEST(Extremes, MixedFilter) {
  const auto s = significant_extremes({row(0.12, 0.01, 0.5), row(-0.15, 0.01, 0.5), row(0.05, 0.01, 0.5)});
  EXPECT_EQ(s.up.count, 1u);
  EXPECT_EQ(s.down.count, 1u);
  EXPECT_EQ(s.filtered_out, 1u);
  EXPECT_DOUBLE_EQ(*s.down.min, -0.15);
}

TEST(Extremes, RelativeThresholdAlsoApplies) {
  // |delta| = 0.2 but relative change 0.2/20 = 1% < 2%
  const auto s = significant_extremes({row(0.2, 0.01, 20.0)});
  EXPECT_EQ(s.filtered_out, 1u);
}

TEST(Correlation, MonotoneAndAnti) {
  EXPECT_DOUBLE_EQ(correlation_report({{0.1, 1}, {0.2, 2}, {0.3, 5}}).spearman, 1.0);
  EXPECT_DOUBLE_EQ(correlation_report({{0.1, 5}, {0.2, 2}, {0.3, 1}}).spearman, -1.0);
  EXPECT_THROW(correlation_report({{0.1, 1}, {0.2, 2}}), Error);
  const auto rep = correlation_report({{0.1, 1}, {0.2, 2}, {0.3, 5}});
  EXPECT_EQ(rep.csv.substr(0, rep.csv.find('\n')), "muNorm,effectiveness");
}

TEST(Correlation, SweepDelegatesToSpearman) {
  synth::SynthConfig cfg;
  const std::vector<double> norms{0.0, 0.2, 0.4, 0.6, 0.8};
  const auto t = synth::sweep_bias(cfg, norms, 2, {RenormMethod::Identity, RenormMethod::R2}, Parallelism{2});
  std::vector<std::pair<double, double>> pairs;
  std::vector<double> y;
  for (double b : norms) {
    pairs.emplace_back(b, synth::mean_delta(t, b, RenormMethod::R2));
    y.push_back(pairs.back().second);
  }
  EXPECT_EQ(correlation_report(pairs).spearman, spearman(norms, y));
}

TEST(Csv, QuotingRoundTrip) {
  const std::vector<csv::Row> rows{{"plain", "has,comma", "has \"quote\""}, {"multi\nline", "", "x"}};
  const auto text = csv::write({"a", "b", "c"}, rows);
  const auto back = csv::parse(text);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1], rows[0]);
  EXPECT_EQ(back[2], rows[1]);
  EXPECT_THROW(csv::parse("\"open"), Error);
}

TEST(Csv, ComparisonRowsRoundTripToSixDigits) {
  std::vector<ComparisonRow> rows{row(0.0123456789, 0.00321), row(-0.5, 0.02, 0.75, "task, with comma"),
                                  row(0.1, 0.01, 0.0, "zero-base")};
  const auto back = parse_comparison_csv(comparison_csv(rows, "r2"));
  ASSERT_EQ(back.size(), rows.size());
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-6 * std::max(1.0, std::abs(a)); };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].task_id, rows[i].task_id);
    EXPECT_TRUE(close(back[i].delta, rows[i].delta));
    EXPECT_TRUE(close(back[i].z, rows[i].z));
    EXPECT_TRUE(close(back[i].baseline.value, rows[i].baseline.value));
    EXPECT_EQ(back[i].rel_delta.has_value(), rows[i].rel_delta.has_value());
  }
}
