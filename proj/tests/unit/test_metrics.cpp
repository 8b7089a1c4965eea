#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "npis/error.hpp"
#include "npis/integrands.hpp"
#include "npis/metrics.hpp"

using namespace npis;
using namespace npis::metrics;

namespace {

ReplicationReport from_values(std::vector<double> values, std::optional<double> oracle) {
  ReplicationReport r;
  r.problem = "p";
  r.method = "m";
  r.estimates = std::move(values);
  r.oracle = oracle;
  summarize(r);
  return r;
}

nis::NisConfig budget(std::size_t n) {
  nis::NisConfig c;
  c.budget = n;
  return c;
}

}  // namespace

TEST(Summarize, ConstantEstimatorHasPureBias) {
  const auto r = from_values({2.5, 2.5, 2.5, 2.5}, 2.0);
  EXPECT_EQ(r.variance, 0.0);
  EXPECT_EQ(r.mse, 0.25);
  EXPECT_EQ(r.cv, 0.0);
}

TEST(Summarize, MseDecomposesIntoVarianceAndBias) {
  const std::vector<double> v = {0.1, 0.4, -0.3, 0.25, 0.05, 0.9};
  const double oracle = 0.2;
  const auto r = from_values(v, oracle);
  double direct = 0.0;
  for (double x : v) direct += (x - oracle) * (x - oracle);
  direct /= static_cast<double>(v.size());
  EXPECT_NEAR(r.mse, direct, 1e-12 * direct);
  EXPECT_NEAR(r.mse, r.variance + r.bias * r.bias, 1e-12 * r.mse);
  EXPECT_GE(r.mse, 0.0);
}

TEST(Summarize, WithoutOracleMseIsTheVariance) {
  const auto r = from_values({1.0, 2.0, 3.0}, std::nullopt);
  EXPECT_DOUBLE_EQ(r.mse, 2.0 / 3.0);
  EXPECT_EQ(r.bias, 0.0);
  EXPECT_DOUBLE_EQ(r.cv, std::sqrt(2.0 / 3.0) / 2.0);
}

TEST(Summarize, ZeroMeanLeavesCvUndefined) {
  EXPECT_TRUE(std::isnan(from_values({-1.0, 1.0}, 0.0).cv));
}

TEST(Timing, MeanAndMedian) {
  ReplicationReport r;
  r.elapsed_seconds = {0.4, 0.1, 0.3, 0.2};
  EXPECT_DOUBLE_EQ(r.time_mean_seconds(), 0.25);
  EXPECT_DOUBLE_EQ(r.time_median_seconds(), 0.25);
  r.elapsed_seconds.push_back(10.0);
  EXPECT_DOUBLE_EQ(r.time_median_seconds(), 0.3);
}

TEST(Efficiency, ProductIsLinearInMse) {
  auto r = from_values({1.0, 3.0}, 2.0);
  r.elapsed_seconds = {0.5, 1.5};
  EXPECT_DOUBLE_EQ(efficiency_product(r), 1.0);
  r.mse /= 2;
  EXPECT_DOUBLE_EQ(efficiency_product(r), 0.5);
}

TEST(RelativeEfficiency, SelfRatioIsOne) {
  const auto bench = integrands::example1(1);
  const auto a = run_replications(bench, nis::Method::MonteCarlo, budget(500), 20, 3);
  const auto b = run_replications(bench, nis::Method::MonteCarlo, budget(500), 20, 3);
  EXPECT_EQ(relative_efficiency(a, b), 1.0);
}

TEST(RelativeEfficiency, UndefinedForZeroMse) {
  const auto zero = from_values({1.0, 1.0}, 1.0);
  const auto some = from_values({0.0, 2.0}, 1.0);
  EXPECT_TRUE(std::isnan(relative_efficiency(some, zero)));
  EXPECT_TRUE(std::isnan(relative_efficiency(zero, some)));
}

TEST(RelativeEfficiency, AssignedPerProblemAndBudget) {
  std::vector<ReplicationReport> v = {from_values({0.0, 2.0}, 1.0), from_values({0.5, 1.5}, 1.0),
                                      from_values({0.0, 2.0}, 1.0)};
  v[0].method = "mc";
  v[1].method = "nis";
  v[2].method = "nis";
  v[2].budget = 7;
  assign_relative_efficiency(v, "mc");
  EXPECT_DOUBLE_EQ(v[0].re, 1.0);
  EXPECT_DOUBLE_EQ(v[1].re, 4.0);
  EXPECT_TRUE(std::isnan(v[2].re));
}

TEST(Replications, DeterministicAndIndependentOfWorkers) {
  const auto bench = integrands::example1(2);
  const auto a = run_replications(bench, nis::Method::Nis, budget(2000), 6, 11, 1);
  const auto b = run_replications(bench, nis::Method::Nis, budget(2000), 6, 11, 3);
  EXPECT_EQ(a.estimates, b.estimates);
  EXPECT_EQ(a.runs(), 6u);
  EXPECT_EQ(a.dim, 2u);
  EXPECT_EQ(a.budget, 2000u);
  const auto c = run_replications(bench, nis::Method::Nis, budget(2000), 6, 12, 1);
  EXPECT_NE(a.estimates, c.estimates);
}

TEST(Replications, RunsDifferWithinAStudy) {
  const auto r = run_replications(integrands::example1(1), nis::Method::MonteCarlo, budget(100), 4, 1);
  for (std::size_t i = 1; i < r.runs(); ++i) EXPECT_NE(r.estimates[i], r.estimates[0]);
}

TEST(Replications, RequireTwoRuns) {
  EXPECT_THROW(run_replications(integrands::example1(1), nis::Method::MonteCarlo, budget(100), 1, 1),
               ContractViolation);
}

TEST(Replications, FailingRunIsNamed) {
  try {
    run_replications(integrands::example1(1), nis::Method::Cdis, budget(100), 3, 1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("run 0"), std::string::npos);
  }
}

TEST(Replications, QueueReportsWithoutOracle) {
  queueing::QueueModel m;
  m.interarrival = queueing::ExponentialLaw{0.074};
  m.service = queueing::ExponentialLaw{0.147};
  m.level = 4;
  queueing::QueueConfig c;
  c.periods = 20'000;
  const auto r = run_replications(m, "mm1", queueing::QueueMethod::Mc, c, 4, 5);
  EXPECT_FALSE(r.oracle);
  EXPECT_EQ(r.mse, r.variance);
  EXPECT_EQ(r.runs(), 4u);
  EXPECT_GT(r.cv, 0.0);
}

TEST(Replications, SplitNisBeatsIsOnEfficiencyOnlyInLowDimension) {
  const std::size_t N = 1000, R = 40;
  auto product = [&](std::size_t d, nis::Method m) {
    return efficiency_product(run_replications(integrands::example1(d), m, budget(N), R, 21));
  };
  EXPECT_LT(product(1, nis::Method::NisSplit), product(1, nis::Method::Is));
  EXPECT_GT(product(8, nis::Method::NisSplit), product(8, nis::Method::Is));
}

TEST(Csv, HeaderAndRow) {
  std::ostringstream os;
  write_csv_header(os);
  auto r = from_values({1.0, 3.0}, 2.0);
  r.problem = "example1?d=1";
  r.method = "nis";
  r.budget = 1000;
  r.dim = 1;
  r.seed = 42;
  r.re = 2.5;
  r.elapsed_seconds = {0.001, 0.003};
  write_csv_row(os, r, false);
  write_csv_row(os, r, true);
  EXPECT_EQ(os.str(),
            "problem,method,N,d,runs,estimate_mean,mse,re,cv,time_ms_mean,time_ms_median,seed\n"
            "example1?d=1,nis,1000,1,2,2,1,2.5,0.5,NA,NA,42\n"
            "example1?d=1,nis,1000,1,2,2,1,2.5,0.5,2,2,42\n");
}
