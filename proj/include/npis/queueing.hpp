#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "npis/lbfp.hpp"
#include "npis/nis.hpp"
#include "npis/rng.hpp"

namespace npis::queueing {

struct ExponentialLaw {
  double rate = 1.0;
};

/// A univariate LBFP restricted to [0, inf) and renormalized.
class TruncatedLbfpLaw {
 public:
  /// Throws ContractViolation for multivariate grids or no mass above zero.
  explicit TruncatedLbfpLaw(lbfp::LbfpDensity density);

  double density(double x) const noexcept;
  /// Inversion: F^{-1}(F(0) + u (1 - F(0))).
  double quantile(double u) const;
  double mean() const noexcept { return mean_; }
  double bin_width() const noexcept { return density_->bin_width(); }
  const lbfp::LbfpDensity& lbfp() const noexcept { return *density_; }

 private:
  std::shared_ptr<const lbfp::LbfpDensity> density_;
  double cdf_at_zero_ = 0.0;
  double mass_ = 1.0;
  double mean_ = 0.0;
};

using Law = std::variant<ExponentialLaw, TruncatedLbfpLaw>;

double density(const Law& law, double x) noexcept;
/// Draw by inversion of one uniform, so equal streams give equal paths.
double draw(const Law& law, double u);
double mean(const Law& law) noexcept;
std::string describe(const Law& law);

/// LBFP fit of positive data with the Gaussian reference width 2.15 sigma n^(-1/5).
TruncatedLbfpLaw fit_lbfp_law(std::span<const double> values);

struct QueueModel {
  int servers = 1;
  Law interarrival = ExponentialLaw{1.0};
  Law service = ExponentialLaw{1.0};
  /// Level K; a busy period is a hit when the number in system reaches it.
  int level = 10;
};

/// Throws ContractViolation unless servers is 1 or 2, level >= 1 and rates are positive.
void validate(const QueueModel& model);

struct BusyPeriodPath {
  /// Largest number of jobs in system (waiting plus in service).
  int peak = 0;
  /// Completed services (L).
  std::size_t served = 0;
  /// Interarrival draws; on a hit these are all realized, K + L - 1 of them.
  std::size_t arrivals_used = 0;
  /// Service draws, including services still running when the period stops.
  std::size_t service_draws = 0;
  /// Sum of log p/q over every draw.
  double log_lr = 0.0;
  bool hit = false;
  /// Realized interarrival times and completed service times, filled only on request.
  std::vector<double> arrival_times;
  std::vector<double> service_times;
};

/**
 * One busy period: starts with one job in an empty system and stops when the
 * system empties or holds `model.level` jobs. Interarrival and service times
 * are drawn from the proposals; log_lr accumulates the nominal-to-proposal
 * log density ratio of every draw. The next interarrival is drawn only while
 * the period is still running. With two servers a waiting job goes to the
 * first free server.
 */
BusyPeriodPath simulate_busy_period(const QueueModel& model, const Law& arrival_proposal, const Law& service_proposal,
                                    Rng& rng, bool retain_draws = false);

/// (1 - r) / (1 - r^K) with r = nu / mu, or 1/K when mu = nu: the chance a
/// walk from 1 with up-probability mu / (mu + nu) reaches K before 0.
double gambler_ruin_prob(double mu, double nu, int K);

/// Eq. 11 style weighted MLE sum(w) / sum(w x) over interarrival draws of hit
/// paths, w = p_t / q0_t. Throws NoRareEventHits when no path hit.
double fit_interarrival_rate(std::span<const BusyPeriodPath> paths, const Law& nominal, const Law& trial);

/// Weighted LBFP of completed service draws of hit paths with weights
/// p_s / q0_s, restricted to [0, inf). Throws NoRareEventHits when no path hit.
TruncatedLbfpLaw fit_service_proposal(std::span<const BusyPeriodPath> paths, const Law& nominal, const Law& trial,
                                      const nis::BandwidthRule& rule = nis::ReferenceBandwidth{});

enum class QueueMethod { Mc, Is, Nis };
std::string to_string(QueueMethod m);
/// Accepts mc, is, nis.
QueueMethod parse_queue_method(const std::string& name);

struct QueueConfig {
  std::size_t periods = 1'000'000;
  /// Share of the periods spent on the pilot by nis and by a fitted is.
  double pilot_fraction = 0.15;
  /// Pilot interarrival rate; defaults to 1 / mean service time (swapped rates).
  std::optional<double> trial_arrival_rate;
  /// Fixed IS proposals. An empty arrival proposal is fitted from a pilot;
  /// an empty service proposal means the nominal service law.
  std::optional<Law> is_arrival;
  std::optional<Law> is_service;
  nis::BandwidthRule service_bandwidth = nis::ReferenceBandwidth{};
  std::uint64_t seed = 0;
  std::size_t workers = 0;
};

struct LevelProbEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  /// Periods of the estimation run, excluding any pilot.
  std::size_t periods = 0;
  std::size_t pilot_periods = 0;
  std::size_t hits = 0;
  QueueMethod method = QueueMethod::Mc;
  double arrival_rate = std::numeric_limits<double>::quiet_NaN();
  std::optional<TruncatedLbfpLaw> service_proposal;
  double elapsed_seconds = 0.0;
  std::vector<std::string> warnings;
};

/// Periods are simulated in chunks with seeds derived from config.seed, so
/// the result does not depend on the worker count.
LevelProbEstimate estimate_level_prob(const QueueModel& model, QueueMethod method, const QueueConfig& config);

/// Pilot periods under the trial laws with retained draws.
std::vector<BusyPeriodPath> run_pilot(const QueueModel& model, const Law& trial_arrival, const Law& trial_service,
                                      std::size_t periods, std::uint64_t seed, std::size_t workers = 0);

struct TraceRow {
  double interarrival_s = 0.0;
  double service_ms = 0.0;
};

/// Exponential(.074) interarrivals in seconds; services in milliseconds from
/// a 0.7 / 0.3 mixture of lognormals with means 4000 and 13340 and
/// coefficients of variation 0.3 and 0.5 (overall mean 6802 ms).
std::vector<TraceRow> generate_synthetic_trace(std::size_t n, std::uint64_t seed);

/// CSV with header `interarrival_s,service_ms` and 17 significant digits.
void write_trace(std::ostream& os, std::span<const TraceRow> rows);
/// Skips leading '#' lines. Throws ParseError on malformed rows, InvalidSample
/// on negative or non-finite values.
std::vector<TraceRow> read_trace(std::istream& is);

/// n / sum(t) and n / sum(s), service times converted to seconds.
struct TraceRates {
  double arrival = 0.0;
  double service = 0.0;
};
TraceRates fitted_rates(std::span<const TraceRow> rows);

/// Exponential interarrivals at the fitted rate and an LBFP service law in seconds.
QueueModel model_from_trace(std::span<const TraceRow> rows, int servers, int level);

}  // namespace npis::queueing
