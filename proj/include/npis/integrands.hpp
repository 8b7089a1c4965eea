#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "npis/nis.hpp"

namespace npis::integrands {

double normal_pdf(double x) noexcept;
double normal_cdf(double x) noexcept;

/// Black-Scholes call parameters.
struct BsParams {
  double spot = 100.0;
  double rate = 0.1;
  double volatility = 0.2;
  double maturity = 1.0;
  double strike = 130.0;
};

/// Closed-form Black-Scholes call price.
double black_scholes_price(const BsParams& p);

/// exp(-rT) (S(T) - K)^+ with S(T) driven by the standard normal z.
double discounted_payoff(const BsParams& p, double z) noexcept;

/// The z at which S(T) = K.
double payoff_kink(const BsParams& p) noexcept;

/// argmax over z > kink of log F(z) - z^2/2, by golden-section search to 1e-10.
double optimal_drift(const BsParams& p);

/// A registered benchmark: the problem plus its oracle and baselines.
struct BenchmarkProblem {
  std::string name;
  nis::Problem problem;
  /// Methods that make sense for this problem, in display order.
  std::vector<nis::Method> methods;
  double oracle_value = 0.0;
  std::string oracle_source;
  /// Ibar^2 - I^2, the smallest variance any IS proposal can reach.
  std::optional<double> optimal_variance;
  /// Proposal of the parametric IS / SIS baseline.
  nis::Proposal baseline;
  /// Change-of-drift proposal, for option pricing only.
  std::optional<nis::Proposal> cdis;
  /// Pilot fractions used in the published experiments, by method.
  std::map<nis::Method, double> pilot_fractions;
  /// Fixed bin widths used in the published experiments, by budget N.
  std::map<std::size_t, double> published_bandwidths;
  /// Published relative efficiencies by method label and budget N. Includes
  /// competitors (gais, lais) that are never run here.
  std::map<std::string, std::map<std::size_t, double>> published_re;
};

/// phi(x) = x_1 on [-1,1]^d under a standard normal, q0 = U[-1,1]^d.
BenchmarkProblem example1(std::size_t d);

/// Discounted call payoff under a standard normal driver, q0 = U[-5,5].
BenchmarkProblem bs_call(const BsParams& params);

/// X1 ~ U[-1,4], X2 | X1 ~ N(|X1|, 0.09 a^2), known only up to a constant.
/// phi_index 1 gives phi = x2, phi_index 2 gives phi = 1{x1 < 0}.
/// q0 = U[-4,7] x [-4,8].
BenchmarkProblem example3(double a, int phi_index);

/// Looks up `example1?d=`, `bs-call?K=` (also S0, r, sigma, T) or
/// `example3?a=&phi=`. Throws ContractViolation for unknown names or keys.
BenchmarkProblem from_registry(const std::string& key);

std::vector<std::string> registry_names();

/// Runs `method` once on the benchmark. Pilot fraction defaults come from the
/// benchmark when the config leaves them empty.
nis::IntegrationResult run_method(const BenchmarkProblem& bench, nis::Method method, nis::NisConfig config);

}  // namespace npis::integrands
