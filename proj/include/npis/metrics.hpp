#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npis/integrands.hpp"
#include "npis/nis.hpp"
#include "npis/queueing.hpp"

namespace npis::metrics {

struct ReplicationReport {
  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  std::string problem;
  std::string method;
  /// Budget N (integration) or periods (queueing).
  std::size_t budget = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  /// Per-run estimates and estimator wall-clock seconds, by run index.
  std::vector<double> estimates;
  std::vector<double> elapsed_seconds;
  std::optional<double> oracle;

  double mean = kNaN;
  /// Population variance of the estimates (divisor R).
  double variance = kNaN;
  /// mean - oracle, 0 without an oracle.
  double bias = 0.0;
  /// variance + bias^2; equals the variance when there is no oracle.
  double mse = kNaN;
  /// sqrt(variance) / mean; NaN when mean is 0.
  double cv = kNaN;
  /// Filled by assign_relative_efficiency.
  double re = kNaN;

  std::size_t runs() const noexcept { return estimates.size(); }
  double time_mean_seconds() const;
  double time_median_seconds() const;
};

/// Fills mean, variance, bias, mse and cv from estimates and oracle.
void summarize(ReplicationReport& report);

/// R runs with seeds derive_seed(master_seed, r), run in parallel, reduced in
/// run order. Throws ContractViolation when R < 2; a failing run is rethrown
/// as Error naming its index and seed.
ReplicationReport run_replications(const integrands::BenchmarkProblem& bench, nis::Method method,
                                   const nis::NisConfig& config, std::size_t R, std::uint64_t master_seed,
                                   std::size_t workers = 0);

/// Queueing version. Runs are sequential; each run parallelizes over periods
/// with config.workers.
ReplicationReport run_replications(const queueing::QueueModel& model, const std::string& label,
                                   queueing::QueueMethod method, const queueing::QueueConfig& config, std::size_t R,
                                   std::uint64_t master_seed, std::optional<double> oracle = std::nullopt);

/// baseline.mse / report.mse; NaN unless both are positive.
double relative_efficiency(const ReplicationReport& baseline, const ReplicationReport& report);

/// Sets re on every report with the same problem and budget as a report of
/// method `baseline`. Reports without a matching baseline keep NaN.
void assign_relative_efficiency(std::span<ReplicationReport> reports, const std::string& baseline);

/// mse * mean elapsed seconds; lower is better.
double efficiency_product(const ReplicationReport& report);

void write_csv_header(std::ostream& os);
/// One row; time columns are NA unless `timing` is set, so rows are reproducible.
void write_csv_row(std::ostream& os, const ReplicationReport& report, bool timing);

}  // namespace npis::metrics
