#include "npis/integrands.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "npis/error.hpp"
#include "npis/rng.hpp"

namespace npis::integrands {

using nis::Point;

double normal_pdf(double x) noexcept { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double black_scholes_price(const BsParams& p) {
  if (!(p.volatility > 0.0) || !(p.maturity > 0.0) || !(p.spot > 0.0) || !(p.strike > 0.0))
    throw ContractViolation("Black-Scholes parameters must be positive");
  const double sd = p.volatility * std::sqrt(p.maturity);
  const double d1 = (std::log(p.spot / p.strike) + (p.rate + 0.5 * p.volatility * p.volatility) * p.maturity) / sd;
  const double d2 = d1 - sd;
  return p.spot * normal_cdf(d1) - p.strike * std::exp(-p.rate * p.maturity) * normal_cdf(d2);
}

double discounted_payoff(const BsParams& p, double z) noexcept {
  const double st = p.spot * std::exp((p.rate - 0.5 * p.volatility * p.volatility) * p.maturity +
                                      p.volatility * std::sqrt(p.maturity) * z);
  return std::exp(-p.rate * p.maturity) * std::max(st - p.strike, 0.0);
}

double payoff_kink(const BsParams& p) noexcept {
  return (std::log(p.strike / p.spot) - (p.rate - 0.5 * p.volatility * p.volatility) * p.maturity) /
         (p.volatility * std::sqrt(p.maturity));
}

double optimal_drift(const BsParams& p) {
  const double kink = payoff_kink(p);
  auto g = [&](double z) { return std::log(discounted_payoff(p, z)) - 0.5 * z * z; };
  // log F - z^2/2 is concave on (kink, inf) and tends to -inf at both ends.
  double lo = kink;
  double hi = std::max(kink, 0.0) + 20.0;
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - ratio * (hi - lo);
  double b = lo + ratio * (hi - lo);
  double ga = g(a);
  double gb = g(b);
  while (hi - lo > 1e-10) {
    if (ga < gb) {
      lo = a;
      a = b;
      ga = gb;
      b = lo + ratio * (hi - lo);
      gb = g(b);
    } else {
      hi = b;
      b = a;
      gb = ga;
      a = hi - ratio * (hi - lo);
      ga = g(a);
    }
  }
  const double z = 0.5 * (lo + hi);
  if (!(z > kink) || !std::isfinite(g(z))) throw Error("no interior maximum of the drift objective");
  return z;
}

namespace {

nis::Sampler uniform_box_sampler(std::vector<double> lo, std::vector<double> hi) {
  return [lo = std::move(lo), hi = std::move(hi)](Point u, std::span<double> x) {
    for (std::size_t a = 0; a < x.size(); ++a) x[a] = lo[a] + (hi[a] - lo[a]) * u[a];
  };
}

nis::Density uniform_box_density(std::vector<double> lo, std::vector<double> hi) {
  double vol = 1.0;
  for (std::size_t a = 0; a < lo.size(); ++a) vol *= hi[a] - lo[a];
  return [lo = std::move(lo), hi = std::move(hi), inv = 1.0 / vol](Point x) {
    for (std::size_t a = 0; a < x.size(); ++a)
      if (x[a] < lo[a] || x[a] > hi[a]) return 0.0;
    return inv;
  };
}

double safe_quantile(double u) { return normal_quantile(u > 0.0 ? u : 0x1.0p-54); }

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

BenchmarkProblem example1(std::size_t d) {
  if (d < 1 || d > 8) throw ContractViolation("example1 dimension must be in 1..8");
  BenchmarkProblem b;
  b.name = "example1?d=" + std::to_string(d);
  nis::Problem& pr = b.problem;
  pr.dim = d;
  const double log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  pr.target = [log_norm](Point x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::exp(log_norm - 0.5 * s);
  };
  pr.integrand = [](Point x) {
    for (double v : x)
      if (v < -1.0 || v > 1.0) return 0.0;
    return x[0];
  };
  const std::vector<double> lo(d, -1.0), hi(d, 1.0);
  pr.trial_sample = uniform_box_sampler(lo, hi);
  pr.trial_density = uniform_box_density(lo, hi);
  pr.target_sample = [](Point u, std::span<double> x) {
    for (std::size_t a = 0; a < x.size(); ++a) x[a] = safe_quantile(u[a]);
  };
  b.methods = {nis::Method::MonteCarlo, nis::Method::Is, nis::Method::Nis, nis::Method::NisSplit};
  b.oracle_value = 0.0;
  b.oracle_source = "odd integrand on a symmetric domain";
  const double ibar = 2.0 * (normal_pdf(0.0) - normal_pdf(1.0)) *
                      std::pow(2.0 * normal_cdf(1.0) - 1.0, static_cast<double>(d) - 1.0);
  b.optimal_variance = ibar * ibar;
  b.baseline = nis::trial_proposal(pr);
  b.pilot_fractions = {{nis::Method::Nis, 0.15}, {nis::Method::NisSplit, nis::optimal_lambda(d)}};
  if (d == 1)
    b.published_re = {{"is", {{1000, 1.5}, {5000, 1.8}, {10000, 1.6}}},
                      {"nis", {{1000, 1.6}, {5000, 1.8}, {10000, 1.7}}},
                      {"nis-split", {{1000, 25.0}, {5000, 57.3}, {10000, 51.3}}}};
  else if (d == 4)
    b.published_re = {{"is", {{1000, 5.0}, {5000, 5.2}, {10000, 4.2}}},
                      {"nis", {{1000, 3.1}, {5000, 4.0}, {10000, 3.8}}},
                      {"nis-split", {{1000, 9.1}, {5000, 26.0}, {10000, 22.0}}}};
  else if (d == 8)
    b.published_re = {{"is", {{1000, 18.6}, {5000, 23.0}, {10000, 26.3}}},
                      {"nis", {{1000, 7.8}, {5000, 17.4}, {10000, 5.4}}},
                      {"nis-split", {{1000, 7.5}, {5000, 30.2}, {10000, 37.4}}}};
  return b;
}

BenchmarkProblem bs_call(const BsParams& params) {
  const double price = black_scholes_price(params);
  BenchmarkProblem b;
  b.name = "bs-call?K=" + format_number(params.strike);
  if (params.spot != 100.0) b.name += "&S0=" + format_number(params.spot);
  if (params.rate != 0.1) b.name += "&r=" + format_number(params.rate);
  if (params.volatility != 0.2) b.name += "&sigma=" + format_number(params.volatility);
  if (params.maturity != 1.0) b.name += "&T=" + format_number(params.maturity);
  nis::Problem& pr = b.problem;
  pr.dim = 1;
  pr.target = [](Point x) { return normal_pdf(x[0]); };
  pr.integrand = [params](Point x) { return discounted_payoff(params, x[0]); };
  pr.trial_sample = uniform_box_sampler({-5.0}, {5.0});
  pr.trial_density = uniform_box_density({-5.0}, {5.0});
  pr.target_sample = [](Point u, std::span<double> x) { x[0] = safe_quantile(u[0]); };
  b.methods = {nis::Method::MonteCarlo, nis::Method::Cdis, nis::Method::Nis, nis::Method::Nsis};
  b.oracle_value = price;
  b.oracle_source = "Black-Scholes closed form";
  b.optimal_variance = 0.0;
  b.baseline = nis::trial_proposal(pr);
  const double drift = optimal_drift(params);
  b.cdis = nis::Proposal{[drift](Point u, std::span<double> x) { x[0] = drift + safe_quantile(u[0]); },
                         [drift](Point x) { return normal_pdf(x[0] - drift); }};
  b.pilot_fractions = {{nis::Method::Nis, 4.0 / 9.0}, {nis::Method::Nsis, 0.05}};
  return b;
}

BenchmarkProblem example3(double a, int phi_index) {
  if (!(a > 0.0)) throw ContractViolation("example3 needs a > 0");
  if (phi_index != 1 && phi_index != 2) throw ContractViolation("example3 phi must be 1 or 2");
  BenchmarkProblem b;
  b.name = "example3?a=" + format_number(a) + "&phi=" + std::to_string(phi_index);
  nis::Problem& pr = b.problem;
  pr.dim = 2;
  const double var = 0.09 * a * a;
  pr.target = [var](Point x) {
    if (x[0] < -1.0 || x[0] > 4.0) return 0.0;
    const double dev = x[1] - std::abs(x[0]);
    return std::exp(-0.5 * dev * dev / var);
  };
  // The normalizing constant 5 sqrt(2 pi var) is treated as unknown; this
  // arbitrary factor makes sure nothing silently relies on it.
  pr.target_scale = 0.37;
  pr.normalized = false;
  if (phi_index == 1)
    pr.integrand = [](Point x) { return x[1]; };
  else
    pr.integrand = [](Point x) { return x[0] < 0.0 ? 1.0 : 0.0; };
  pr.trial_sample = uniform_box_sampler({-4.0, -4.0}, {7.0, 8.0});
  pr.trial_density = uniform_box_density({-4.0, -4.0}, {7.0, 8.0});
  const double sd = std::sqrt(var);
  pr.target_sample = [sd](Point u, std::span<double> x) {
    x[0] = -1.0 + 5.0 * u[0];
    x[1] = std::abs(x[0]) + sd * safe_quantile(u[1]);
  };
  b.methods = {nis::Method::MonteCarlo, nis::Method::Sis, nis::Method::Nsis};
  // E|X1| = (1/2 + 8) / 5 for X1 ~ U[-1,4]; P(X1 < 0) = 1/5.
  b.oracle_value = phi_index == 1 ? 1.7 : 0.2;
  b.oracle_source = "generative model";
  b.baseline = nis::trial_proposal(pr);
  b.pilot_fractions = {{nis::Method::Nsis, 0.2}};
  b.published_bandwidths = {{1250, 1.54}, {5000, 1.224}, {10000, 1.09}};
  // Relative to SIS with the uniform proposal, columns (phi, a).
  using Column = std::map<std::size_t, double>;
  const std::map<std::pair<int, double>, std::array<Column, 3>> table = {
      {{1, 0.75}, {Column{{1250, 1.59}, {5000, 8.08}, {10000, 9.38}}, Column{{1250, 0.02}, {5000, 5.88}},
                   Column{{1250, 0.75}, {5000, 3.45}}}},
      {{1, 3.5}, {Column{{1250, 2.89}, {5000, 4.50}, {10000, 4.75}}, Column{{1250, 3.45}, {5000, 0.67}},
                  Column{{1250, 0.99}, {5000, 1.30}}}},
      {{2, 0.75}, {Column{{1250, 0.58}, {5000, 9.21}, {10000, 11.06}}, Column{{1250, 0.30}, {5000, 0.96}},
                   Column{{1250, 1.92}, {5000, 2.63}}}},
      {{2, 3.5}, {Column{{1250, 3.82}, {5000, 5.09}, {10000, 5.77}}, Column{{1250, 1.11}, {5000, 0.36}},
                  Column{{1250, 0.58}, {5000, 0.42}}}}};
  if (const auto it = table.find({phi_index, a}); it != table.end())
    b.published_re = {{"nsis", it->second[0]}, {"gais", it->second[1]}, {"lais", it->second[2]}};
  return b;
}

namespace {

std::map<std::string, std::string> parse_query(const std::string& query) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while (pos < query.size()) {
    std::size_t amp = query.find('&', pos);
    if (amp == std::string::npos) amp = query.size();
    const std::string item = query.substr(pos, amp - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ContractViolation("malformed registry parameter '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
    pos = amp + 1;
  }
  return out;
}

double to_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty() || !std::isfinite(v))
    throw ContractViolation("parameter " + key + " is not a number: '" + text + "'");
  return v;
}

}  // namespace

BenchmarkProblem from_registry(const std::string& key) {
  const std::size_t q = key.find('?');
  const std::string name = key.substr(0, q);
  auto params = q == std::string::npos ? std::map<std::string, std::string>{} : parse_query(key.substr(q + 1));
  auto take = [&](const std::string& k, double fallback) {
    const auto it = params.find(k);
    if (it == params.end()) return fallback;
    const double v = to_double(k, it->second);
    params.erase(it);
    return v;
  };
  auto finish = [&](BenchmarkProblem b) {
    if (!params.empty()) throw ContractViolation("unknown parameter '" + params.begin()->first + "' for " + name);
    return b;
  };
  if (name == "example1") {
    const double d = take("d", 1.0);
    if (d != std::floor(d) || d < 1.0) throw ContractViolation("example1 needs an integer d >= 1");
    return finish(example1(static_cast<std::size_t>(d)));
  }
  if (name == "bs-call") {
    BsParams p;
    p.strike = take("K", p.strike);
    p.spot = take("S0", p.spot);
    p.rate = take("r", p.rate);
    p.volatility = take("sigma", p.volatility);
    p.maturity = take("T", p.maturity);
    return finish(bs_call(p));
  }
  if (name == "example3") {
    const double a = take("a", 0.75);
    const double phi = take("phi", 1.0);
    return finish(example3(a, static_cast<int>(phi)));
  }
  throw ContractViolation("unknown problem '" + name + "'");
}

std::vector<std::string> registry_names() { return {"example1", "bs-call", "example3"}; }

nis::IntegrationResult run_method(const BenchmarkProblem& bench, nis::Method method, nis::NisConfig config) {
  if (!config.pilot_fraction) {
    const auto it = bench.pilot_fractions.find(method);
    if (it != bench.pilot_fractions.end()) config.pilot_fraction = it->second;
  }
  switch (method) {
    case nis::Method::MonteCarlo:
      return nis::mc_integrate(bench.problem, config.budget, config.seed);
    case nis::Method::Is:
      return nis::is_integrate(bench.problem, bench.baseline, config.budget, config.seed);
    case nis::Method::Cdis: {
      if (!bench.cdis) throw ContractViolation("no change-of-drift proposal for " + bench.name);
      auto r = nis::is_integrate(bench.problem, *bench.cdis, config.budget, config.seed);
      r.method = nis::Method::Cdis;
      return r;
    }
    case nis::Method::Sis:
      return nis::sis_integrate(bench.problem, bench.baseline, config.budget, config.seed);
    case nis::Method::Nis:
      return nis::nis_integrate(bench.problem, config);
    case nis::Method::NisSplit:
      return nis::nis_split_integrate(bench.problem, config);
    case nis::Method::Nsis:
      return nis::nsis_integrate(bench.problem, config);
  }
  throw ContractViolation("unhandled method");
}

}  // namespace npis::integrands
