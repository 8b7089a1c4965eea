#include "npis/nis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "npis/error.hpp"
#include "npis/rng.hpp"

namespace npis::nis {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double part_of(double phi, Part part) {
  switch (part) {
    case Part::Abs:
      return std::abs(phi);
    case Part::Positive:
      return std::max(phi, 0.0);
    case Part::Negative:
      return std::max(-phi, 0.0);
  }
  return 0.0;
}

/// Running mean and sum of squared deviations.
struct Welford {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double variance_of_mean() const {
    return n > 1 ? m2 / static_cast<double>(n - 1) / static_cast<double>(n) : 0.0;
  }
};

void check_problem(const Problem& problem) {
  if (problem.dim == 0) throw ContractViolation("problem dimension must be positive");
  if (!problem.target || !problem.integrand || !problem.trial_sample || !problem.trial_density)
    throw ContractViolation("problem is missing a target, integrand or trial distribution");
}

/// Main stage of Algorithm 1: N draws from q-hat, unnormalized IS average of
/// part(phi) p / q-hat.
Welford run_main_is(const Problem& problem, const lbfp::LbfpDensity& q, std::size_t n, std::uint64_t seed,
                    std::optional<Part> part) {
  Rng rng(seed);
  const std::size_t d = problem.dim;
  std::vector<double> u(d), x(d);
  Welford acc;
  for (std::size_t i = 0; i < n; ++i) {
    rng.fill_uniform(u);
    q.sample_into(u, x);
    double phi = problem.integrand(x);
    if (part) phi = part_of(phi, *part);
    if (phi == 0.0) {
      acc.add(0.0);
      continue;
    }
    const double qd = q(x);
    if (!(qd > 0.0)) throw ContractViolation("proposal density vanished at its own sample");
    acc.add(phi * problem.p(x) / qd);
  }
  return acc;
}

IntegrationResult finish(Method method, const Welford& acc, std::size_t M, const ProposalEstimate* est,
                         Clock::time_point start) {
  IntegrationResult r;
  r.method = method;
  r.estimate = acc.mean;
  r.within_run_variance = acc.variance_of_mean();
  r.pilot_size = M;
  r.main_size = acc.n;
  if (est) {
    r.mean_pilot_weight = est->mean_weight;
    r.pilot_hits = est->hits;
    r.bandwidth = est->bandwidth.h;
    r.warnings = est->warnings;
  }
  r.elapsed_seconds = seconds_since(start);
  return r;
}

void warn_large_lambda(double lambda, std::vector<std::string>& warnings) {
  if (lambda > 0.25) warnings.push_back("pilot fraction above 0.25");
}

}  // namespace

std::string describe(const BandwidthRule& rule) {
  if (const auto* f = std::get_if<FixedBandwidth>(&rule)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "fixed:%.17g", f->h);
    return buf;
  }
  return std::holds_alternative<ReferenceBandwidth>(rule) ? "reference" : "plugin";
}

std::string to_string(Method m) {
  switch (m) {
    case Method::MonteCarlo:
      return "mc";
    case Method::Is:
      return "is";
    case Method::Sis:
      return "sis";
    case Method::Nis:
      return "nis";
    case Method::NisSplit:
      return "nis-split";
    case Method::Nsis:
      return "nsis";
    case Method::Cdis:
      return "cdis";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::MonteCarlo, Method::Is, Method::Cdis, Method::Sis, Method::Nis, Method::NisSplit,
                   Method::Nsis})
    if (to_string(m) == name) return m;
  throw ContractViolation("unknown method '" + name + "'");
}

double optimal_lambda(std::size_t d) { return 4.0 / (static_cast<double>(d) + 8.0); }

double default_pilot_fraction(Method method, std::size_t d) {
  switch (method) {
    case Method::NisSplit:
      return optimal_lambda(d);
    case Method::Nis:
      return 0.15;
    case Method::Nsis:
      return 0.2;
    default:
      return 0.0;
  }
}

std::size_t pilot_size(std::size_t budget, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ContractViolation("pilot fraction must lie in (0, 1)");
  const double m = std::round(lambda * static_cast<double>(budget));
  if (m < 1.0 || m >= static_cast<double>(budget))
    throw ContractViolation("pilot size round(lambda N) must satisfy 1 <= M < N");
  return static_cast<std::size_t>(m);
}

Pilot draw_pilot(const Problem& problem, std::size_t M, std::uint64_t seed) {
  check_problem(problem);
  Pilot pilot;
  pilot.dim = problem.dim;
  pilot.points.resize(M * problem.dim);
  pilot.phi.resize(M);
  pilot.target.resize(M);
  pilot.trial.resize(M);
  Rng rng(derive_seed(seed, 0));
  std::vector<double> u(problem.dim);
  for (std::size_t j = 0; j < M; ++j) {
    rng.fill_uniform(u);
    std::span<double> x(pilot.points.data() + j * problem.dim, problem.dim);
    problem.trial_sample(u, x);
    pilot.phi[j] = problem.integrand(x);
    pilot.target[j] = problem.target(x);
    pilot.trial[j] = problem.trial_density(x);
    if (!(pilot.trial[j] > 0.0)) throw InvalidSample("trial density is zero at its own draw");
  }
  return pilot;
}

double reference_bandwidth(std::span<const double> points, std::span<const double> weights, std::size_t d,
                           std::size_t M) {
  if (d == 0 || points.size() != weights.size() * d) throw ContractViolation("points and weights differ in length");
  if (M == 0) throw ContractViolation("sample size must be positive");
  double total = 0.0;
  std::size_t positive = 0;
  for (double w : weights) {
    if (w > 0.0) {
      total += w;
      ++positive;
    }
  }
  if (positive < 2) throw DegenerateSpread();
  double log_sigma = 0.0;
  double sigma1 = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    double mean = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j)
      if (weights[j] > 0.0) mean += weights[j] / total * points[j * d + a];
    double var = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
      if (weights[j] <= 0.0) continue;
      const double dev = points[j * d + a] - mean;
      var += weights[j] / total * dev * dev;
    }
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) throw DegenerateSpread();
    sigma1 = sd;
    log_sigma += std::log(sd);
  }
  const double sigma = d == 1 ? sigma1 : std::exp(log_sigma / static_cast<double>(d));
  return 2.15 * sigma * std::pow(static_cast<double>(M), -1.0 / (static_cast<double>(d) + 4.0));
}

namespace {

/// Per-bin quantities shared by both plug-in variants.
template <typename Visit>
void visit_bins(const lbfp::HistogramGrid& q, Visit&& visit) {
  const std::size_t d = q.dim();
  const double h2 = q.bin_width() * q.bin_width();
  const auto& heights = q.heights();
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> t(d), second(d);
  for (std::size_t flat = 0; flat < q.size(); ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = 0; a < d; ++a) {
      idx[a] = rem / q.strides()[a];
      rem %= q.strides()[a];
      t[a] = q.midpoint(a, static_cast<std::ptrdiff_t>(idx[a]));
    }
    const double qk = heights[flat];
    for (std::size_t a = 0; a < d; ++a) {
      const double lo = idx[a] > 0 ? heights[flat - q.strides()[a]] : 0.0;
      const double hi = idx[a] + 1 < q.counts()[a] ? heights[flat + q.strides()[a]] : 0.0;
      second[a] = (hi - 2.0 * qk + lo) / h2;
    }
    visit(Point(t), qk, std::span<const double>(second));
  }
}

double h1_term(double qk, std::span<const double> second) {
  double diag = 0.0;
  double cross = 0.0;
  for (std::size_t i = 0; i < second.size(); ++i) {
    diag += second[i] * second[i];
    for (std::size_t j = 0; j < second.size(); ++j)
      if (j != i) cross += second[i] * second[j];
  }
  return (49.0 / 2880.0 * diag + cross / 64.0) / qk;
}

}  // namespace

TheoryConstants plugin_constants(const lbfp::HistogramGrid& q, const Density& q0, std::size_t M) {
  const std::size_t d = q.dim();
  const double dd = static_cast<double>(d);
  const double vol = std::pow(q.bin_width(), dd);
  double h1 = 0.0;
  double h2 = 0.0;
  visit_bins(q, [&](Point t, double qk, std::span<const double> second) {
    if (qk > 0.0) h1 += h1_term(qk, second);
    const double q0t = q0(t);
    if (q0t > 0.0) h2 += qk / q0t;
  });
  TheoryConstants c;
  c.H1 = h1 * vol;
  c.H2 = h2 * vol;
  c.h_star = std::pow(dd * c.H2 * std::pow(2.0, dd) / (4.0 * c.H1 * std::pow(3.0, dd)), 1.0 / (dd + 4.0)) *
             std::pow(static_cast<double>(M), -1.0 / (dd + 4.0));
  c.lambda_star = optimal_lambda(d);
  return c;
}

TheoryConstants plugin_constants_signed(const lbfp::HistogramGrid& q, const Density& q0, const Density& f_phi,
                                        std::size_t M) {
  TheoryConstants c = plugin_constants(q, q0, M);
  const double dd = static_cast<double>(q.dim());
  const double vol = std::pow(q.bin_width(), dd);
  double hb1 = 0.0;
  double hb2 = 0.0;
  visit_bins(q, [&](Point t, double qk, std::span<const double> second) {
    const double f = f_phi(t);
    const double lap = std::accumulate(second.begin(), second.end(), 0.0);
    if (qk > 0.0) hb1 += f * f * lap / (8.0 * qk * qk) + f * lap / (4.0 * qk);
    const double q0t = q0(t);
    if (q0t > 0.0) {
      hb2 += qk / q0t - 2.0 * f / q0t;
      if (qk > 0.0) hb2 -= f * f / (q0t * qk);
    }
  });
  c.Hbar1 = -hb1 * vol;
  c.Hbar2 = hb2 * vol;
  c.h_double_star =
      std::pow(dd * c.Hbar2 * std::pow(2.0, dd - 1.0) / (c.Hbar1 * std::pow(3.0, dd)), 1.0 / (dd + 2.0)) *
      std::pow(static_cast<double>(M), -1.0 / (dd + 2.0));
  return c;
}

double pilot_snis_estimate(std::span<const double> phi, std::span<const double> target,
                           std::span<const double> trial) {
  if (phi.size() != target.size() || phi.size() != trial.size())
    throw ContractViolation("pilot arrays differ in length");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t j = 0; j < phi.size(); ++j) {
    const double w = target[j] / trial[j];
    if (w == 0.0) continue;
    num += phi[j] * w;
    den += w;
  }
  if (!(den > 0.0)) throw EmptyPilot();
  return num / den;
}

namespace {
bool usable(double h) noexcept { return std::isfinite(h) && h > 0.0; }
}  // namespace

ProposalEstimate fit_proposal(const Problem& problem, const Pilot& pilot, std::span<const double> weights,
                              const BandwidthRule& rule, bool signed_integrand) {
  const std::size_t M = pilot.size();
  const std::size_t d = pilot.dim;
  if (weights.size() != M) throw ContractViolation("one weight per pilot draw required");
  std::size_t hits = 0;
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw InvalidSample("pilot weight must be finite and non-negative");
    if (w > 0.0) ++hits;
    total += w;
  }
  if (hits == 0) throw EmptyPilot();

  BandwidthChoice choice;
  std::vector<std::string> warnings;
  if (const auto* fixed = std::get_if<FixedBandwidth>(&rule)) {
    choice.h = fixed->h;
    choice.reference = fixed->h;
  } else {
    choice.reference = reference_bandwidth(pilot.points, weights, d, M);
    choice.h = choice.reference;
    if (std::holds_alternative<PluginBandwidth>(rule)) {
      const lbfp::LbfpDensity q_ref(lbfp::build_histogram(pilot.points, d, weights, choice.reference));
      double h = 0.0;
      if (signed_integrand) {
        double i_hat = 0.0;
        double ibar_hat = 0.0;
        for (std::size_t j = 0; j < M; ++j) {
          const double w = problem.target_scale * pilot.target[j] / pilot.trial[j];
          i_hat += pilot.phi[j] * w;
          ibar_hat += std::abs(pilot.phi[j]) * w;
        }
        i_hat /= static_cast<double>(M);
        ibar_hat /= static_cast<double>(M);
        const Density f_phi = [&](Point t) {
          const double phi = problem.integrand(t);
          const double p = problem.p(t);
          return phi * p / i_hat - std::abs(phi) * p / ibar_hat;
        };
        choice.constants = plugin_constants_signed(q_ref.grid(), problem.trial_density, f_phi, M);
        h = choice.constants.h_double_star;
        if (!usable(h) && usable(choice.constants.h_star)) {
          h = choice.constants.h_star;
          warnings.push_back("signed plug-in bandwidth not usable; using h*");
        }
      } else {
        choice.constants = plugin_constants(q_ref.grid(), problem.trial_density, M);
        h = choice.constants.h_star;
      }
      if (!usable(h)) {
        choice.fallback = true;
        warnings.push_back("plug-in bandwidth not usable; using the reference rule");
      } else {
        choice.h = std::clamp(h, choice.reference / 5.0, choice.reference * 5.0);
        choice.clamped = choice.h != h;
      }
    }
  }

  ProposalEstimate est{lbfp::LbfpDensity(lbfp::build_histogram(pilot.points, d, weights, choice.h)),
                       total / static_cast<double>(M),
                       M,
                       hits,
                       choice,
                       0.0,
                       std::move(warnings)};
  return est;
}

ProposalEstimate estimate_is_proposal(const Problem& problem, std::size_t M, const BandwidthRule& rule,
                                      std::uint64_t seed, Part part) {
  if (M == 0) throw ContractViolation("pilot size must be positive");
  const Pilot pilot = draw_pilot(problem, M, seed);
  std::vector<double> weights(M);
  bool has_pos = false;
  bool has_neg = false;
  double sum = 0.0;
  for (std::size_t j = 0; j < M; ++j) {
    const double w = problem.target_scale * pilot.target[j] / pilot.trial[j];
    weights[j] = part_of(pilot.phi[j], part) * w;
    sum += pilot.phi[j] * w;
    if (weights[j] > 0.0) {
      has_pos = has_pos || pilot.phi[j] > 0.0;
      has_neg = has_neg || pilot.phi[j] < 0.0;
    }
  }
  ProposalEstimate est = fit_proposal(problem, pilot, weights, rule, has_pos && has_neg);
  est.pilot_estimate = sum / static_cast<double>(M);
  return est;
}

ProposalEstimate estimate_sis_proposal(const Problem& problem, std::size_t M, const BandwidthRule& rule,
                                       std::uint64_t seed) {
  if (M == 0) throw ContractViolation("pilot size must be positive");
  const Pilot pilot = draw_pilot(problem, M, seed);
  const double center = pilot_snis_estimate(pilot.phi, pilot.target, pilot.trial);
  std::vector<double> weights(M);
  double mad = 0.0;
  double den = 0.0;
  for (std::size_t j = 0; j < M; ++j) {
    const double w = pilot.target[j] / pilot.trial[j];
    weights[j] = std::abs(pilot.phi[j] - center) * w;
    mad += weights[j];
    den += w;
  }
  ProposalEstimate est = fit_proposal(problem, pilot, weights, rule, false);
  est.pilot_estimate = center;
  est.bandwidth.constants.Itilde = mad / den;
  return est;
}

IntegrationResult nis_integrate(const Problem& problem, const NisConfig& config) {
  const auto start = Clock::now();
  check_problem(problem);
  const double lambda = config.pilot_fraction.value_or(default_pilot_fraction(Method::Nis, problem.dim));
  const std::size_t M = pilot_size(config.budget, lambda);
  ProposalEstimate est = estimate_is_proposal(problem, M, config.bandwidth, config.seed, Part::Abs);
  warn_large_lambda(lambda, est.warnings);
  const Welford acc = run_main_is(problem, est.density, config.budget - M, derive_seed(config.seed, 1), std::nullopt);
  return finish(Method::Nis, acc, M, &est, start);
}

IntegrationResult nis_split_integrate(const Problem& problem, const NisConfig& config) {
  const auto start = Clock::now();
  check_problem(problem);
  const double lambda = config.pilot_fraction.value_or(default_pilot_fraction(Method::NisSplit, problem.dim));
  const std::size_t side_budget = config.budget / 2;
  const std::size_t M = pilot_size(side_budget, lambda);

  IntegrationResult r;
  r.method = Method::NisSplit;
  double h_sum = 0.0;
  int sides_run = 0;
  for (Part part : {Part::Positive, Part::Negative}) {
    const std::uint64_t side_seed = derive_seed(config.seed, part == Part::Positive ? 1 : 2);
    const char* name = part == Part::Positive ? "positive" : "negative";
    std::optional<ProposalEstimate> est;
    try {
      est.emplace(estimate_is_proposal(problem, M, config.bandwidth, side_seed, part));
    } catch (const EmptyPilot&) {
      r.warnings.push_back(std::string("empty pilot on the ") + name + " side; its estimate is 0");
      r.pilot_size += M;
      continue;
    }
    const Welford acc = run_main_is(problem, est->density, side_budget - M, derive_seed(side_seed, 1), part);
    const double sign = part == Part::Positive ? 1.0 : -1.0;
    r.estimate += sign * acc.mean;
    r.within_run_variance += acc.variance_of_mean();
    r.pilot_size += M;
    r.main_size += acc.n;
    r.mean_pilot_weight += est->mean_weight;
    r.pilot_hits += est->hits;
    h_sum += est->bandwidth.h;
    ++sides_run;
    for (auto& w : est->warnings) r.warnings.push_back(std::string(name) + " side: " + w);
  }
  if (sides_run > 0) r.bandwidth = h_sum / sides_run;
  r.elapsed_seconds = seconds_since(start);
  return r;
}

IntegrationResult nsis_integrate(const Problem& problem, const NisConfig& config) {
  const auto start = Clock::now();
  check_problem(problem);
  const double lambda = config.pilot_fraction.value_or(default_pilot_fraction(Method::Nsis, problem.dim));
  const std::size_t M = pilot_size(config.budget, lambda);
  ProposalEstimate est = estimate_sis_proposal(problem, M, config.bandwidth, config.seed);
  warn_large_lambda(lambda, est.warnings);

  const std::size_t n = config.budget - M;
  const std::size_t d = problem.dim;
  Rng rng(derive_seed(config.seed, 1));
  std::vector<double> u(d), x(d), phis(n), ws(n);
  double sw = 0.0;
  double swphi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    rng.fill_uniform(u);
    est.density.sample_into(u, x);
    const double t = problem.target(x);
    double w = 0.0;
    if (t != 0.0) {
      const double qd = est.density(x);
      if (!(qd > 0.0)) throw ContractViolation("proposal density vanished at its own sample");
      w = t / qd;
    }
    const double phi = w != 0.0 ? problem.integrand(x) : 0.0;
    phis[i] = phi;
    ws[i] = w;
    sw += w;
    swphi += w * phi;
  }
  if (!(sw > 0.0)) throw DegenerateWeights();
  IntegrationResult r;
  r.method = Method::Nsis;
  r.estimate = swphi / sw;
  double v = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dev = ws[i] * (phis[i] - r.estimate);
    v += dev * dev;
  }
  r.within_run_variance = v / (sw * sw);
  r.pilot_size = M;
  r.main_size = n;
  r.mean_pilot_weight = est.mean_weight;
  r.pilot_hits = est.hits;
  r.bandwidth = est.bandwidth.h;
  r.warnings = std::move(est.warnings);
  r.elapsed_seconds = seconds_since(start);
  return r;
}

IntegrationResult mc_integrate(const Problem& problem, std::size_t N, std::uint64_t seed) {
  const auto start = Clock::now();
  if (!problem.target_sample) throw ContractViolation("crude Monte Carlo needs a sampler of the target");
  if (N == 0) throw ContractViolation("sample size must be positive");
  Rng rng(derive_seed(seed, 1));
  std::vector<double> u(problem.dim), x(problem.dim);
  Welford acc;
  for (std::size_t i = 0; i < N; ++i) {
    rng.fill_uniform(u);
    problem.target_sample(u, x);
    acc.add(problem.integrand(x));
  }
  return finish(Method::MonteCarlo, acc, 0, nullptr, start);
}

IntegrationResult is_integrate(const Problem& problem, const Proposal& proposal, std::size_t N, std::uint64_t seed) {
  const auto start = Clock::now();
  check_problem(problem);
  if (N == 0) throw ContractViolation("sample size must be positive");
  Rng rng(derive_seed(seed, 1));
  std::vector<double> u(problem.dim), x(problem.dim);
  Welford acc;
  for (std::size_t i = 0; i < N; ++i) {
    rng.fill_uniform(u);
    proposal.sample(u, x);
    const double phi = problem.integrand(x);
    if (phi == 0.0) {
      acc.add(0.0);
      continue;
    }
    acc.add(phi * problem.p(x) / proposal.density(x));
  }
  return finish(Method::Is, acc, 0, nullptr, start);
}

IntegrationResult sis_integrate(const Problem& problem, const Proposal& proposal, std::size_t N,
                                std::uint64_t seed) {
  const auto start = Clock::now();
  check_problem(problem);
  if (N == 0) throw ContractViolation("sample size must be positive");
  Rng rng(derive_seed(seed, 1));
  std::vector<double> u(problem.dim), x(problem.dim), phis(N), ws(N);
  double sw = 0.0;
  double swphi = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    rng.fill_uniform(u);
    proposal.sample(u, x);
    const double t = problem.target(x);
    const double w = t != 0.0 ? t / proposal.density(x) : 0.0;
    ws[i] = w;
    phis[i] = w != 0.0 ? problem.integrand(x) : 0.0;
    sw += w;
    swphi += w * phis[i];
  }
  if (!(sw > 0.0)) throw DegenerateWeights();
  IntegrationResult r;
  r.method = Method::Sis;
  r.estimate = swphi / sw;
  double v = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double dev = ws[i] * (phis[i] - r.estimate);
    v += dev * dev;
  }
  r.within_run_variance = v / (sw * sw);
  r.main_size = N;
  r.elapsed_seconds = seconds_since(start);
  return r;
}

Proposal trial_proposal(const Problem& problem) { return Proposal{problem.trial_sample, problem.trial_density}; }

}  // namespace npis::nis
