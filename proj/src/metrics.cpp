#include "npis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "npis/error.hpp"
#include "npis/parallel.hpp"
#include "npis/rng.hpp"

namespace npis::metrics {

namespace {

void check_runs(std::size_t R) {
  if (R < 2) throw ContractViolation("at least two runs are needed");
}

Error run_failure(std::size_t r, std::uint64_t seed, const std::exception& e) {
  return Error("run " + std::to_string(r) + " (seed " + std::to_string(seed) + ") failed: " + e.what());
}

std::string fmt(double x) {
  if (!std::isfinite(x)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

double ReplicationReport::time_mean_seconds() const {
  if (elapsed_seconds.empty()) return kNaN;
  double s = 0.0;
  for (double t : elapsed_seconds) s += t;
  return s / static_cast<double>(elapsed_seconds.size());
}

double ReplicationReport::time_median_seconds() const {
  if (elapsed_seconds.empty()) return kNaN;
  std::vector<double> t = elapsed_seconds;
  const std::size_t n = t.size();
  std::nth_element(t.begin(), t.begin() + n / 2, t.end());
  const double hi = t[n / 2];
  if (n % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(t.begin(), t.begin() + n / 2));
}

void summarize(ReplicationReport& r) {
  const std::size_t n = r.estimates.size();
  if (n == 0) return;
  double sum = 0.0;
  for (double x : r.estimates) sum += x;
  r.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double x : r.estimates) ss += (x - r.mean) * (x - r.mean);
  r.variance = ss / static_cast<double>(n);
  r.bias = r.oracle ? r.mean - *r.oracle : 0.0;
  r.mse = r.variance + r.bias * r.bias;
  r.cv = r.mean != 0.0 ? std::sqrt(r.variance) / r.mean : ReplicationReport::kNaN;
}

ReplicationReport run_replications(const integrands::BenchmarkProblem& bench, nis::Method method,
                                   const nis::NisConfig& config, std::size_t R, std::uint64_t master_seed,
                                   std::size_t workers) {
  check_runs(R);
  const auto results = parallel_map(R, workers, [&](std::size_t r) {
    nis::NisConfig c = config;
    c.seed = derive_seed(master_seed, r);
    try {
      return integrands::run_method(bench, method, c);
    } catch (const std::exception& e) {
      throw run_failure(r, c.seed, e);
    }
  });
  ReplicationReport report;
  report.problem = bench.name;
  report.method = nis::to_string(method);
  report.budget = config.budget;
  report.dim = bench.problem.dim;
  report.seed = master_seed;
  report.oracle = bench.oracle_value;
  for (const auto& res : results) {
    report.estimates.push_back(res.estimate);
    report.elapsed_seconds.push_back(res.elapsed_seconds);
  }
  summarize(report);
  return report;
}

ReplicationReport run_replications(const queueing::QueueModel& model, const std::string& label,
                                   queueing::QueueMethod method, const queueing::QueueConfig& config, std::size_t R,
                                   std::uint64_t master_seed, std::optional<double> oracle) {
  check_runs(R);
  ReplicationReport report;
  report.problem = label;
  report.method = queueing::to_string(method);
  report.budget = config.periods;
  report.dim = static_cast<std::size_t>(model.servers);
  report.seed = master_seed;
  report.oracle = oracle;
  for (std::size_t r = 0; r < R; ++r) {
    queueing::QueueConfig c = config;
    c.seed = derive_seed(master_seed, r);
    try {
      const auto res = queueing::estimate_level_prob(model, method, c);
      report.estimates.push_back(res.estimate);
      report.elapsed_seconds.push_back(res.elapsed_seconds);
    } catch (const std::exception& e) {
      throw run_failure(r, c.seed, e);
    }
  }
  summarize(report);
  return report;
}

double relative_efficiency(const ReplicationReport& baseline, const ReplicationReport& report) {
  if (!(baseline.mse > 0.0) || !(report.mse > 0.0)) return ReplicationReport::kNaN;
  return baseline.mse / report.mse;
}

void assign_relative_efficiency(std::span<ReplicationReport> reports, const std::string& baseline) {
  for (auto& r : reports) {
    const auto it = std::find_if(reports.begin(), reports.end(), [&](const ReplicationReport& b) {
      return b.method == baseline && b.problem == r.problem && b.budget == r.budget;
    });
    r.re = it == reports.end() ? ReplicationReport::kNaN : relative_efficiency(*it, r);
  }
}

double efficiency_product(const ReplicationReport& report) { return report.mse * report.time_mean_seconds(); }

void write_csv_header(std::ostream& os) {
  os << "problem,method,N,d,runs,estimate_mean,mse,re,cv,time_ms_mean,time_ms_median,seed\n";
}

void write_csv_row(std::ostream& os, const ReplicationReport& r, bool timing) {
  os << r.problem << ',' << r.method << ',' << r.budget << ',' << r.dim << ',' << r.runs() << ',' << fmt(r.mean)
     << ',' << fmt(r.mse) << ',' << fmt(r.re) << ',' << fmt(r.cv) << ','
     << (timing ? fmt(1e3 * r.time_mean_seconds()) : "NA") << ','
     << (timing ? fmt(1e3 * r.time_median_seconds()) : "NA") << ',' << r.seed << '\n';
}

}  // namespace npis::metrics
