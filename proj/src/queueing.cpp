#include "npis/queueing.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include "npis/error.hpp"
#include "npis/parallel.hpp"

namespace npis::queueing {

namespace {

constexpr std::size_t kChunk = 4096;
constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

TruncatedLbfpLaw::TruncatedLbfpLaw(lbfp::LbfpDensity density)
    : density_(std::make_shared<const lbfp::LbfpDensity>(std::move(density))) {
  if (density_->dim() != 1) throw ContractViolation("service and interarrival laws are univariate");
  cdf_at_zero_ = density_->marginal_cdf(0.0);
  mass_ = 1.0 - cdf_at_zero_;
  if (!(mass_ > 0.0)) throw ContractViolation("LBFP law has no mass on the positive half-line");
  // The polygon is linear between mid-points, so two-point Gauss-Legendre
  // integrates x f(x) exactly on every piece.
  const auto segs = density_->conditional_cdf_table({});
  const double g = 0.5 / std::sqrt(3.0);
  double first_moment = 0.0;
  for (const auto& s : segs) {
    const double lo = std::max(s.left_midpoint, 0.0);
    const double hi = s.left_midpoint + s.width;
    if (!(hi > lo)) continue;
    const double mid = 0.5 * (lo + hi);
    for (double x : {mid - g * (hi - lo), mid + g * (hi - lo)})
      first_moment += 0.5 * (hi - lo) * x * (s.intercept + s.slope * (x - s.left_midpoint));
  }
  mean_ = first_moment / mass_;
}

double TruncatedLbfpLaw::density(double x) const noexcept {
  if (x < 0.0) return 0.0;
  return (*density_)(std::span<const double>(&x, 1)) / mass_;
}

double TruncatedLbfpLaw::quantile(double u) const {
  const double y = std::min(cdf_at_zero_ + u * mass_, std::nextafter(1.0, 0.0));
  double x = 0.0;
  density_->sample_into(std::span<const double>(&y, 1), std::span<double>(&x, 1));
  return std::max(x, 0.0);
}

double density(const Law& law, double x) noexcept {
  if (const auto* e = std::get_if<ExponentialLaw>(&law)) return x < 0.0 ? 0.0 : e->rate * std::exp(-e->rate * x);
  return std::get<TruncatedLbfpLaw>(law).density(x);
}

double draw(const Law& law, double u) {
  if (const auto* e = std::get_if<ExponentialLaw>(&law)) return -std::log1p(-u) / e->rate;
  return std::get<TruncatedLbfpLaw>(law).quantile(u);
}

double mean(const Law& law) noexcept {
  if (const auto* e = std::get_if<ExponentialLaw>(&law)) return 1.0 / e->rate;
  return std::get<TruncatedLbfpLaw>(law).mean();
}

std::string describe(const Law& law) {
  char buf[96];
  if (const auto* e = std::get_if<ExponentialLaw>(&law))
    std::snprintf(buf, sizeof buf, "exponential(rate=%.6g)", e->rate);
  else
    std::snprintf(buf, sizeof buf, "lbfp(h=%.6g, mean=%.6g)", std::get<TruncatedLbfpLaw>(law).bin_width(),
                  mean(law));
  return buf;
}

TruncatedLbfpLaw fit_lbfp_law(std::span<const double> values) {
  for (double v : values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidSample("law data must be finite and non-negative");
  const std::vector<double> ones(values.size(), 1.0);
  const double h = nis::reference_bandwidth(values, ones, 1, values.size());
  return TruncatedLbfpLaw(lbfp::LbfpDensity(lbfp::build_histogram(values, 1, ones, h)));
}

void validate(const QueueModel& model) {
  if (model.servers != 1 && model.servers != 2) throw ContractViolation("servers must be 1 or 2");
  if (model.level < 1) throw ContractViolation("level K must be at least 1");
  for (const Law* law : {&model.interarrival, &model.service})
    if (const auto* e = std::get_if<ExponentialLaw>(law); e && !(e->rate > 0.0 && std::isfinite(e->rate)))
      throw ContractViolation("exponential rates must be positive");
}

namespace {

/// log p(x) - log q(x) for a nominal law p and proposal q.
class LogRatio {
 public:
  LogRatio(const Law& nominal, const Law& proposal) : nominal_(nominal), proposal_(proposal) {
    const auto* p = std::get_if<ExponentialLaw>(&nominal);
    const auto* q = std::get_if<ExponentialLaw>(&proposal);
    if (p && q) {
      both_exponential_ = true;
      log_rates_ = std::log(p->rate / q->rate);
      rate_diff_ = p->rate - q->rate;
    }
  }

  double operator()(double x) const {
    if (both_exponential_) return log_rates_ - rate_diff_ * x;
    const double q = density(proposal_, x);
    if (!(q > 0.0)) throw ContractViolation("proposal density is zero at its own draw");
    return std::log(density(nominal_, x)) - std::log(q);
  }

 private:
  const Law& nominal_;
  const Law& proposal_;
  bool both_exponential_ = false;
  double log_rates_ = 0.0;
  double rate_diff_ = 0.0;
};

BusyPeriodPath run_period(const QueueModel& model, const Law& arrival_proposal, const Law& service_proposal,
                          const LogRatio& arrival_ratio, const LogRatio& service_ratio, Rng& rng, bool retain) {
  BusyPeriodPath path;
  int n = 1;
  path.peak = 1;
  if (n >= model.level) {
    path.hit = true;
    return path;
  }
  auto next_interarrival = [&] {
    const double x = draw(arrival_proposal, rng.uniform());
    path.log_lr += arrival_ratio(x);
    ++path.arrivals_used;
    return x;
  };
  auto next_service = [&] {
    const double y = draw(service_proposal, rng.uniform());
    path.log_lr += service_ratio(y);
    ++path.service_draws;
    return y;
  };

  double completion[2] = {kInf, kInf};
  double duration[2] = {0.0, 0.0};
  duration[0] = next_service();
  completion[0] = duration[0];
  double gap = next_interarrival();
  double next_arrival = gap;
  int busy = 1;

  for (;;) {
    const int s = model.servers == 2 && completion[1] < completion[0] ? 1 : 0;
    if (next_arrival < completion[s]) {
      const double now = next_arrival;
      ++n;
      path.peak = std::max(path.peak, n);
      if (retain) path.arrival_times.push_back(gap);
      if (n >= model.level) {
        path.hit = true;
        break;
      }
      if (busy < model.servers) {
        const int free = completion[0] == kInf ? 0 : 1;
        duration[free] = next_service();
        completion[free] = now + duration[free];
        ++busy;
      }
      gap = next_interarrival();
      next_arrival = now + gap;
    } else {
      const double now = completion[s];
      --n;
      ++path.served;
      if (retain) path.service_times.push_back(duration[s]);
      completion[s] = kInf;
      --busy;
      if (n == 0) break;
      if (n > busy) {
        duration[s] = next_service();
        completion[s] = now + duration[s];
        ++busy;
      }
    }
  }
  return path;
}

}  // namespace

BusyPeriodPath simulate_busy_period(const QueueModel& model, const Law& arrival_proposal, const Law& service_proposal,
                                    Rng& rng, bool retain_draws) {
  validate(model);
  const LogRatio ar(model.interarrival, arrival_proposal);
  const LogRatio sr(model.service, service_proposal);
  return run_period(model, arrival_proposal, service_proposal, ar, sr, rng, retain_draws);
}

double gambler_ruin_prob(double mu, double nu, int K) {
  if (!(mu > 0.0) || !(nu > 0.0)) throw ContractViolation("rates must be positive");
  if (K < 1) throw ContractViolation("level K must be at least 1");
  if (mu == nu) return 1.0 / K;
  const double r = nu / mu;
  // expm1/log1p form keeps precision when r is close to one.
  return std::expm1(std::log(r)) / std::expm1(K * std::log(r));
}

namespace {

template <typename Visit>
std::size_t for_each_hit(std::span<const BusyPeriodPath> paths, Visit&& visit) {
  std::size_t hits = 0;
  for (const auto& p : paths) {
    if (!p.hit) continue;
    ++hits;
    visit(p);
  }
  if (hits == 0) throw NoRareEventHits();
  return hits;
}

}  // namespace

double fit_interarrival_rate(std::span<const BusyPeriodPath> paths, const Law& nominal, const Law& trial) {
  double sw = 0.0;
  double swx = 0.0;
  for_each_hit(paths, [&](const BusyPeriodPath& p) {
    for (double x : p.arrival_times) {
      const double w = density(nominal, x) / density(trial, x);
      sw += w;
      swx += w * x;
    }
  });
  if (!(swx > 0.0)) throw DegenerateWeights();
  return sw / swx;
}

TruncatedLbfpLaw fit_service_proposal(std::span<const BusyPeriodPath> paths, const Law& nominal, const Law& trial,
                                      const nis::BandwidthRule& rule) {
  std::vector<double> values;
  std::vector<double> weights;
  for_each_hit(paths, [&](const BusyPeriodPath& p) {
    for (double y : p.service_times) {
      values.push_back(y);
      weights.push_back(density(nominal, y) / density(trial, y));
    }
  });
  if (values.empty()) throw NoRareEventHits();
  double h = 0.0;
  if (const auto* fixed = std::get_if<nis::FixedBandwidth>(&rule))
    h = fixed->h;
  else if (std::holds_alternative<nis::ReferenceBandwidth>(rule))
    h = nis::reference_bandwidth(values, weights, 1, values.size());
  else
    throw ContractViolation("service proposals support fixed and reference bin widths only");
  return TruncatedLbfpLaw(lbfp::LbfpDensity(lbfp::build_histogram(values, 1, weights, h)));
}

std::string to_string(QueueMethod m) {
  switch (m) {
    case QueueMethod::Mc:
      return "mc";
    case QueueMethod::Is:
      return "is";
    case QueueMethod::Nis:
      return "nis";
  }
  return "unknown";
}

QueueMethod parse_queue_method(const std::string& name) {
  for (QueueMethod m : {QueueMethod::Mc, QueueMethod::Is, QueueMethod::Nis})
    if (to_string(m) == name) return m;
  throw ContractViolation("unknown queue method '" + name + "'");
}

namespace {

struct ChunkSums {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t hits = 0;
};

/// Likelihood-ratio weighted hit frequency over `periods` busy periods.
LevelProbEstimate run_estimation(const QueueModel& model, const Law& arrival_proposal, const Law& service_proposal,
                                 std::size_t periods, std::uint64_t seed, std::size_t workers) {
  const LogRatio ar(model.interarrival, arrival_proposal);
  const LogRatio sr(model.service, service_proposal);
  const std::size_t chunks = (periods + kChunk - 1) / kChunk;
  const auto sums = parallel_map(chunks, workers, [&](std::size_t c) {
    Rng rng(derive_seed(seed, c));
    const std::size_t n = std::min(kChunk, periods - c * kChunk);
    ChunkSums s;
    for (std::size_t i = 0; i < n; ++i) {
      const auto path = run_period(model, arrival_proposal, service_proposal, ar, sr, rng, false);
      if (!path.hit) continue;
      const double w = std::exp(path.log_lr);
      s.sum += w;
      s.sum_sq += w * w;
      ++s.hits;
    }
    return s;
  });
  ChunkSums total;
  for (const auto& s : sums) {
    total.sum += s.sum;
    total.sum_sq += s.sum_sq;
    total.hits += s.hits;
  }
  LevelProbEstimate r;
  const double n = static_cast<double>(periods);
  r.periods = periods;
  r.hits = total.hits;
  r.estimate = total.sum / n;
  const double var = periods > 1 ? std::max(total.sum_sq - n * r.estimate * r.estimate, 0.0) / (n - 1.0) : 0.0;
  r.std_error = std::sqrt(var / n);
  if (r.estimate > 1.0) r.warnings.push_back("estimate exceeds 1; likelihood ratios are unstable");
  return r;
}

}  // namespace

std::vector<BusyPeriodPath> run_pilot(const QueueModel& model, const Law& trial_arrival, const Law& trial_service,
                                      std::size_t periods, std::uint64_t seed, std::size_t workers) {
  validate(model);
  const LogRatio ar(model.interarrival, trial_arrival);
  const LogRatio sr(model.service, trial_service);
  const std::size_t chunks = (periods + kChunk - 1) / kChunk;
  auto parts = parallel_map(chunks, workers, [&](std::size_t c) {
    Rng rng(derive_seed(seed, c));
    const std::size_t n = std::min(kChunk, periods - c * kChunk);
    std::vector<BusyPeriodPath> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto path = run_period(model, trial_arrival, trial_service, ar, sr, rng, true);
      if (!path.hit) {
        path.arrival_times.clear();
        path.arrival_times.shrink_to_fit();
        path.service_times.clear();
        path.service_times.shrink_to_fit();
      }
      out.push_back(std::move(path));
    }
    return out;
  });
  std::vector<BusyPeriodPath> all;
  all.reserve(periods);
  for (auto& part : parts)
    for (auto& p : part) all.push_back(std::move(p));
  return all;
}

LevelProbEstimate estimate_level_prob(const QueueModel& model, QueueMethod method, const QueueConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  validate(model);
  if (config.periods < 2) throw ContractViolation("at least two busy periods are required");
  const std::uint64_t main_seed = derive_seed(config.seed, 1);

  LevelProbEstimate r;
  const bool fitted_is = method == QueueMethod::Is && !config.is_arrival;
  if (method == QueueMethod::Mc) {
    r = run_estimation(model, model.interarrival, model.service, config.periods, main_seed, config.workers);
  } else if (method == QueueMethod::Is && !fitted_is) {
    const Law& service = config.is_service ? *config.is_service : model.service;
    r = run_estimation(model, *config.is_arrival, service, config.periods, main_seed, config.workers);
    if (const auto* e = std::get_if<ExponentialLaw>(&*config.is_arrival)) r.arrival_rate = e->rate;
  } else {
    const std::size_t M = nis::pilot_size(config.periods, config.pilot_fraction);
    const Law trial_arrival = ExponentialLaw{config.trial_arrival_rate.value_or(1.0 / mean(model.service))};
    const auto pilot = run_pilot(model, trial_arrival, model.service, M, derive_seed(config.seed, 0), config.workers);
    const double rate = fit_interarrival_rate(pilot, model.interarrival, trial_arrival);
    const Law arrival = ExponentialLaw{rate};
    if (method == QueueMethod::Is) {
      const Law& service = config.is_service ? *config.is_service : model.service;
      r = run_estimation(model, arrival, service, config.periods - M, main_seed, config.workers);
    } else {
      const Law service = fit_service_proposal(pilot, model.service, model.service, config.service_bandwidth);
      r = run_estimation(model, arrival, service, config.periods - M, main_seed, config.workers);
      r.service_proposal = std::get<TruncatedLbfpLaw>(service);
    }
    r.pilot_periods = M;
    r.arrival_rate = rate;
  }
  r.method = method;
  r.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<TraceRow> generate_synthetic_trace(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ContractViolation("trace length must be positive");
  struct Component {
    double weight, mean, cv;
  };
  static constexpr Component kMix[] = {{0.7, 4000.0, 0.3}, {0.3, 13340.0, 0.5}};
  Rng rng(derive_seed(seed, 0));
  std::vector<TraceRow> rows(n);
  for (auto& row : rows) {
    row.interarrival_s = rng.exponential(0.074);
    const Component& c = rng.uniform() < kMix[0].weight ? kMix[0] : kMix[1];
    const double s2 = std::log1p(c.cv * c.cv);
    row.service_ms = std::exp(std::log(c.mean) - 0.5 * s2 + std::sqrt(s2) * rng.normal());
  }
  return rows;
}

void write_trace(std::ostream& os, std::span<const TraceRow> rows) {
  os << "interarrival_s,service_ms\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", r.interarrival_s, r.service_ms);
    os << buf;
  }
}

std::vector<TraceRow> read_trace(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  do {
    if (!std::getline(is, line)) throw ParseError(line_no + 1, 1, "empty trace");
    ++line_no;
  } while (!line.empty() && line.front() == '#');
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "interarrival_s,service_ms")
    throw ParseError(line_no, 1, "expected header interarrival_s,service_ms");
  std::vector<TraceRow> rows;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(line_no, line.size() + 1, "expected two columns");
    auto parse = [&](std::size_t from, std::size_t to) {
      double v = 0.0;
      const auto res = std::from_chars(line.data() + from, line.data() + to, v);
      if (res.ec != std::errc() || res.ptr != line.data() + to) throw ParseError(line_no, from + 1, "expected a number");
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidSample("trace times must be finite and non-negative");
      return v;
    };
    rows.push_back({parse(0, comma), parse(comma + 1, line.size())});
  }
  if (rows.empty()) throw ParseError(line_no, 1, "trace has no rows");
  return rows;
}

TraceRates fitted_rates(std::span<const TraceRow> rows) {
  if (rows.empty()) throw ContractViolation("empty trace");
  double st = 0.0;
  double ss = 0.0;
  for (const auto& r : rows) {
    st += r.interarrival_s;
    ss += r.service_ms / 1000.0;
  }
  const double n = static_cast<double>(rows.size());
  return {n / st, n / ss};
}

QueueModel model_from_trace(std::span<const TraceRow> rows, int servers, int level) {
  std::vector<double> service(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) service[i] = rows[i].service_ms / 1000.0;
  QueueModel m;
  m.servers = servers;
  m.level = level;
  m.interarrival = ExponentialLaw{fitted_rates(rows).arrival};
  m.service = fit_lbfp_law(service);
  validate(m);
  return m;
}

}  // namespace npis::queueing
