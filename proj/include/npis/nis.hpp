#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "npis/lbfp.hpp"

namespace npis::nis {

using Point = std::span<const double>;
using Density = std::function<double(Point)>;
/// Maps a vector of uniforms in [0,1) to a draw, written into the second argument.
using Sampler = std::function<void(Point, std::span<double>)>;

/// An integration problem E_p[phi].
///
/// The target is given as a shape function times `target_scale`; the
/// unnormalized IS estimators use p = target_scale * target, while the
/// self-normalized ones only ever see `target`, so they do not depend on the
/// (possibly unknown) constant at all.
struct Problem {
  std::size_t dim = 1;
  Density target;
  Density integrand;
  Sampler trial_sample;
  Density trial_density;
  double target_scale = 1.0;
  /// False when target_scale * target does not integrate to one.
  bool normalized = true;
  /// Optional direct sampler of p, used by crude Monte Carlo.
  Sampler target_sample;

  double p(Point x) const { return target_scale * target(x); }
};

/// A fixed parametric proposal for the baseline estimators.
struct Proposal {
  Sampler sample;
  Density density;
};

struct FixedBandwidth {
  double h;
};
struct ReferenceBandwidth {};
struct PluginBandwidth {};
using BandwidthRule = std::variant<FixedBandwidth, ReferenceBandwidth, PluginBandwidth>;

std::string describe(const BandwidthRule& rule);

/// Cdis is plain IS with a change-of-drift Gaussian proposal.
enum class Method { MonteCarlo, Is, Cdis, Sis, Nis, NisSplit, Nsis };

std::string to_string(Method m);
/// Accepts mc, is, cdis, sis, nis, nis-split, nsis. Throws ContractViolation otherwise.
Method parse_method(const std::string& name);

/// Which part of phi drives the pilot weights.
enum class Part { Abs, Positive, Negative };

struct NisConfig {
  std::size_t budget = 0;
  /// Pilot fraction lambda; the method default is used when empty.
  std::optional<double> pilot_fraction;
  BandwidthRule bandwidth = PluginBandwidth{};
  std::uint64_t seed = 0;
};

/// Constants of the asymptotic MSE expansions, estimated by plug-in.
struct TheoryConstants {
  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  double H1 = kNaN;
  double H2 = kNaN;
  double h_star = kNaN;
  double Hbar1 = kNaN;
  double Hbar2 = kNaN;
  double h_double_star = kNaN;
  double lambda_star = kNaN;
  /// Mean absolute deviation int |phi - I| p, the optimal SIS scale.
  double Itilde = kNaN;
};

struct BandwidthChoice {
  double h = 0.0;
  double reference = 0.0;
  bool fallback = false;
  bool clamped = false;
  TheoryConstants constants;
};

/// Pilot draws from q0 with everything Step 1 needs, row-major points.
struct Pilot {
  std::size_t dim = 0;
  std::vector<double> points;
  std::vector<double> phi;
  std::vector<double> target;
  std::vector<double> trial;

  std::size_t size() const noexcept { return phi.size(); }
  Point point(std::size_t j) const { return Point(points).subspan(j * dim, dim); }
};

/// Estimated optimal proposal q-hat plus pilot diagnostics.
struct ProposalEstimate {
  lbfp::LbfpDensity density;
  /// Mean pilot weight (omega-bar_M).
  double mean_weight = 0.0;
  std::size_t pilot_size = 0;
  /// Number of pilot draws with positive weight.
  std::size_t hits = 0;
  BandwidthChoice bandwidth;
  /// Self-normalized pilot estimate for SIS proposals, plain IS pilot mean otherwise.
  double pilot_estimate = 0.0;
  std::vector<std::string> warnings;
};

struct IntegrationResult {
  double estimate = 0.0;
  /// Estimated variance of `estimate` given the proposal.
  double within_run_variance = 0.0;
  std::size_t pilot_size = 0;
  std::size_t main_size = 0;
  Method method = Method::MonteCarlo;
  double elapsed_seconds = 0.0;
  double mean_pilot_weight = 0.0;
  std::size_t pilot_hits = 0;
  double bandwidth = 0.0;
  std::vector<std::string> warnings;
};

/// 4 / (d + 8).
double optimal_lambda(std::size_t d);

/// Pilot fraction used by `method` when the config leaves it empty.
double default_pilot_fraction(Method method, std::size_t d);

/// M = round(lambda N). Throws ContractViolation unless 1 <= M < N.
std::size_t pilot_size(std::size_t budget, double lambda);

/// Draws M points from q0 under the pilot substream of `seed`.
Pilot draw_pilot(const Problem& problem, std::size_t M, std::uint64_t seed);

/// Gaussian reference rule 2.15 sigma M^(-1/(d+4)), sigma the geometric mean
/// of the weighted per-axis standard deviations (d = 1 gives 2.15 sigma M^(-1/5)).
/// Throws DegenerateSpread when fewer than two weights are positive or a
/// spread is zero.
double reference_bandwidth(std::span<const double> points, std::span<const double> weights, std::size_t d,
                           std::size_t M);

/// H1, H2 and h* of an IS-type proposal grid q, by second differences and
/// Riemann sums over the bins.
TheoryConstants plugin_constants(const lbfp::HistogramGrid& q, const Density& q0, std::size_t M);

/// As plugin_constants, plus Hbar1, Hbar2 and h** for a signed integrand,
/// where f_phi(x) = phi p / I - |phi| p / Ibar is supplied by the caller.
TheoryConstants plugin_constants_signed(const lbfp::HistogramGrid& q, const Density& q0, const Density& f_phi,
                                        std::size_t M);

/// Self-normalized pilot estimate sum(phi p/q0) / sum(p/q0). Throws
/// EmptyPilot when the denominator is zero.
double pilot_snis_estimate(std::span<const double> phi, std::span<const double> target,
                           std::span<const double> trial);

/// Step 1 of the NIS algorithm: weights |phi| p / q0 (or the positive or
/// negative part of phi) turned into an LBFP. Throws EmptyPilot when every
/// weight is zero.
ProposalEstimate estimate_is_proposal(const Problem& problem, std::size_t M, const BandwidthRule& rule,
                                      std::uint64_t seed, Part part = Part::Abs);

/// Step 1 of the NSIS algorithm with centered weights |phi - I| p / q0.
ProposalEstimate estimate_sis_proposal(const Problem& problem, std::size_t M, const BandwidthRule& rule,
                                       std::uint64_t seed);

/// Proposal fitted from an existing pilot and weights.
ProposalEstimate fit_proposal(const Problem& problem, const Pilot& pilot, std::span<const double> weights,
                              const BandwidthRule& rule, bool signed_integrand);

IntegrationResult nis_integrate(const Problem& problem, const NisConfig& config);
IntegrationResult nis_split_integrate(const Problem& problem, const NisConfig& config);
IntegrationResult nsis_integrate(const Problem& problem, const NisConfig& config);

/// Crude Monte Carlo. Requires problem.target_sample.
IntegrationResult mc_integrate(const Problem& problem, std::size_t N, std::uint64_t seed);
/// IS with a fixed proposal.
IntegrationResult is_integrate(const Problem& problem, const Proposal& proposal, std::size_t N, std::uint64_t seed);
/// Self-normalized IS with a fixed proposal.
IntegrationResult sis_integrate(const Problem& problem, const Proposal& proposal, std::size_t N,
                                std::uint64_t seed);

/// The trial density q0 as a Proposal.
Proposal trial_proposal(const Problem& problem);

}  // namespace npis::nis
