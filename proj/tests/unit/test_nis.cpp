#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "npis/error.hpp"
#include "npis/integrands.hpp"
#include "npis/nis.hpp"
#include "npis/rng.hpp"

using namespace npis;
using namespace npis::nis;

namespace {

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// p = q0 = U[lo, hi] in one dimension with the given integrand.
Problem uniform_problem(double lo, double hi, Density phi) {
  Problem pr;
  pr.dim = 1;
  pr.target = [lo, hi](Point x) { return x[0] >= lo && x[0] <= hi ? 1.0 / (hi - lo) : 0.0; };
  pr.integrand = std::move(phi);
  pr.trial_sample = [lo, hi](Point u, std::span<double> x) { x[0] = lo + (hi - lo) * u[0]; };
  pr.trial_density = pr.target;
  pr.target_sample = pr.trial_sample;
  return pr;
}

/// p = q0 = N(0, 1).
Problem normal_problem(Density phi) {
  Problem pr;
  pr.dim = 1;
  pr.target = [](Point x) { return std_normal_pdf(x[0]); };
  pr.integrand = std::move(phi);
  pr.trial_sample = [](Point u, std::span<double> x) { x[0] = normal_quantile(u[0] > 0.0 ? u[0] : 1e-300); };
  pr.trial_density = pr.target;
  pr.target_sample = pr.trial_sample;
  return pr;
}

NisConfig config(std::size_t budget, std::uint64_t seed, BandwidthRule rule = PluginBandwidth{}) {
  NisConfig c;
  c.budget = budget;
  c.seed = seed;
  c.bandwidth = rule;
  return c;
}

}  // namespace

TEST(OptimalLambda, KnownValues) {
  EXPECT_DOUBLE_EQ(optimal_lambda(1), 4.0 / 9.0);
  EXPECT_DOUBLE_EQ(optimal_lambda(8), 0.25);
}

TEST(OptimalLambda, DecreasingInDimension) {
  for (std::size_t d = 1; d < 64; ++d) EXPECT_GT(optimal_lambda(d), optimal_lambda(d + 1));
}

TEST(PilotSize, RoundsAndValidates) {
  EXPECT_EQ(pilot_size(2500, 0.15), 375u);
  EXPECT_EQ(pilot_size(5000, 4.0 / 9.0), 2222u);
  EXPECT_THROW(pilot_size(10, 0.01), ContractViolation);
  EXPECT_THROW(pilot_size(10, 0.97), ContractViolation);
  EXPECT_THROW(pilot_size(10, 0.0), ContractViolation);
}

TEST(ReferenceBandwidth, UnitInputs) {
  const double pts[] = {-1.0, 1.0};
  const double w[] = {1.0, 1.0};
  EXPECT_NEAR(reference_bandwidth(pts, w, 1, 1), 2.15, 1e-14);
}

TEST(ReferenceBandwidth, ScaleCancelsAgainstSampleSize) {
  const double pts[] = {-2.0, 2.0};
  const double w[] = {3.0, 3.0};
  EXPECT_NEAR(reference_bandwidth(pts, w, 1, 32), 2.15, 1e-13);
}

TEST(ReferenceBandwidth, WeightedSpreadMatchesDirectComputation) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> z(1.0, 3.0);
  std::uniform_real_distribution<double> uw(0.0, 2.0);
  std::vector<double> pts(200), w(200);
  for (std::size_t j = 0; j < pts.size(); ++j) {
    pts[j] = z(gen);
    w[j] = j % 7 == 0 ? 0.0 : uw(gen);
  }
  long double sw = 0, swx = 0, swxx = 0;
  for (std::size_t j = 0; j < pts.size(); ++j) {
    sw += w[j];
    swx += w[j] * pts[j];
    swxx += w[j] * pts[j] * pts[j];
  }
  const double sd = static_cast<double>(std::sqrt(swxx / sw - (swx / sw) * (swx / sw)));
  EXPECT_NEAR(reference_bandwidth(pts, w, 1, 200), 2.15 * sd * std::pow(200.0, -0.2), 1e-10);
}

TEST(ReferenceBandwidth, GeometricMeanInTwoDimensions) {
  // Axis 0 has sd 1, axis 1 has sd 4.
  const double pts[] = {-1.0, -4.0, 1.0, 4.0};
  const double w[] = {1.0, 1.0};
  EXPECT_NEAR(reference_bandwidth(pts, w, 2, 64), 2.15 * 2.0 * std::pow(64.0, -1.0 / 6.0), 1e-13);
}

TEST(ReferenceBandwidth, DegenerateSpreadThrows) {
  const double pts[] = {0.5, 0.5, 0.7};
  const double w[] = {1.0, 2.0, 0.0};
  EXPECT_THROW(reference_bandwidth(pts, w, 1, 3), DegenerateSpread);
  const double one[] = {1.0, 0.0, 0.0};
  EXPECT_THROW(reference_bandwidth(pts, one, 1, 3), DegenerateSpread);
}

TEST(PluginConstants, H2IsOneWhenProposalEqualsTrial) {
  const lbfp::HistogramGrid q({-0.05}, 0.1, {12}, {0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0});
  const Density q0 = [](Point x) { return x[0] >= 0.0 && x[0] <= 1.0 ? 1.0 : 0.0; };
  const auto c = plugin_constants(q, q0, 100);
  EXPECT_NEAR(c.H2, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(c.lambda_star, 4.0 / 9.0);
}

TEST(PluginConstants, GaussianH1AgreesWithAnalyticMoment) {
  // For q = N(0,1), (q'')^2 / q = (x^2 - 1)^2 q, whose integral is E[(X^2-1)^2] = 2.
  const double h = 0.02;
  const std::size_t n = 801;
  std::vector<double> heights(n);
  const double origin = -0.5 * static_cast<double>(n - 1) * h;
  for (std::size_t k = 0; k < n; ++k) heights[k] = std_normal_pdf(origin + static_cast<double>(k) * h);
  double mass = 0.0;
  for (double v : heights) mass += v * h;
  for (double& v : heights) v /= mass;
  const lbfp::HistogramGrid q({origin}, h, {n}, heights);
  const auto c = plugin_constants(q, [](Point x) { return std_normal_pdf(x[0]); }, 1000);
  const double analytic = 49.0 / 2880.0 * 2.0;
  EXPECT_NEAR(c.H1 / analytic, 1.0, 0.05);
  // q / q0 = 1 on every bin, so H2 is the grid length.
  EXPECT_NEAR(c.H2, static_cast<double>(n) * h, 1e-6);
  const double expected_h = std::pow(c.H2 * 2.0 / (4.0 * c.H1 * 3.0), 0.2) * std::pow(1000.0, -0.2);
  EXPECT_NEAR(c.h_star, expected_h, 1e-12);
}

TEST(PilotSnisEstimate, ConstantIntegrandIsExact) {
  const double phi[] = {2.5, 2.5, 2.5};
  const double t[] = {0.1, 0.7, 0.3};
  const double q0[] = {0.5, 0.5, 0.25};
  EXPECT_DOUBLE_EQ(pilot_snis_estimate(phi, t, q0), 2.5);
}

TEST(PilotSnisEstimate, InvariantToTargetScale) {
  const double phi[] = {1.0, -3.0, 0.5};
  const double t[] = {0.1, 0.7, 0.3};
  const double t2[] = {0.2, 1.4, 0.6};
  const double q0[] = {0.5, 0.5, 0.25};
  EXPECT_DOUBLE_EQ(pilot_snis_estimate(phi, t, q0), pilot_snis_estimate(phi, t2, q0));
}

TEST(PilotSnisEstimate, ZeroDenominatorThrows) {
  const double phi[] = {1.0, 2.0};
  const double t[] = {0.0, 0.0};
  const double q0[] = {1.0, 1.0};
  EXPECT_THROW(pilot_snis_estimate(phi, t, q0), EmptyPilot);
}

TEST(PilotSnisEstimate, MatchesGenerativeSimulationOnExample3) {
  const auto bench = integrands::example3(3.5, 1);
  const Pilot pilot = draw_pilot(bench.problem, 1000, 11);
  const double est = pilot_snis_estimate(pilot.phi, pilot.target, pilot.trial);
  double sw = 0.0, v = 0.0;
  for (std::size_t j = 0; j < pilot.size(); ++j) sw += pilot.target[j] / pilot.trial[j];
  for (std::size_t j = 0; j < pilot.size(); ++j) {
    const double w = pilot.target[j] / pilot.trial[j];
    v += w * w * (pilot.phi[j] - est) * (pilot.phi[j] - est);
  }
  const double se = std::sqrt(v) / sw;

  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> x1(-1.0, 4.0);
  std::normal_distribution<double> z(0.0, 0.3 * 3.5);
  const std::size_t n = 10'000'000;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::abs(x1(gen)) + z(gen);
  const double truth = sum / static_cast<double>(n);
  EXPECT_NEAR(truth, 1.7, 2e-3);
  EXPECT_LT(std::abs(est - truth), 3.0 * se);
}

TEST(EstimateIsProposal, UnitWeightsGiveThePlainPolygon) {
  const auto pr = uniform_problem(-1.0, 1.0, [](Point) { return 1.0; });
  const auto est = estimate_is_proposal(pr, 500, FixedBandwidth{0.2}, 3);
  EXPECT_EQ(est.hits, 500u);
  EXPECT_DOUBLE_EQ(est.mean_weight, 1.0);
  const Pilot pilot = draw_pilot(pr, 500, 3);
  const std::vector<double> ones(500, 1.0);
  const auto plain = lbfp::build_histogram(pilot.points, 1, ones, 0.2);
  EXPECT_EQ(est.density.grid().heights(), plain.heights());
  EXPECT_EQ(est.density.grid().origin(), plain.origin());
}

TEST(EstimateIsProposal, ConcentratesOnTheIndicatorSupport) {
  const auto pr = uniform_problem(-1.0, 1.0, [](Point x) { return x[0] >= 0.0 && x[0] <= 1.0 ? 1.0 : 0.0; });
  const auto est = estimate_is_proposal(pr, 10'000, ReferenceBandwidth{}, 8);
  EXPECT_LT(est.density.marginal_cdf(0.0), 0.02);
  EXPECT_NEAR(est.mean_weight, 0.5, 0.02);
}

TEST(EstimateIsProposal, EmptyPilotThrows) {
  const auto pr = uniform_problem(-1.0, 1.0, [](Point x) { return x[0] > 5.0 ? 1.0 : 0.0; });
  EXPECT_THROW(estimate_is_proposal(pr, 100, ReferenceBandwidth{}, 1), EmptyPilot);
}

TEST(EstimateIsProposal, PluginWidthIsClampedAroundReference) {
  const auto bench = integrands::bs_call({});
  const auto est = estimate_is_proposal(bench.problem, 2000, PluginBandwidth{}, 4);
  const auto& bw = est.bandwidth;
  EXPECT_GE(bw.h, bw.reference / 5.0);
  EXPECT_LE(bw.h, bw.reference * 5.0);
  EXPECT_TRUE(std::isfinite(bw.constants.H1));
  EXPECT_TRUE(std::isfinite(bw.constants.h_star));
}

TEST(EstimateIsProposal, OptionProposalPeaksNearOptimalDrift) {
  integrands::BsParams params;
  const auto bench = integrands::bs_call(params);
  const auto est = estimate_is_proposal(bench.problem, 20'000, ReferenceBandwidth{}, 6);
  const double drift = integrands::optimal_drift(params);
  double best_x = 0.0, best_q = -1.0;
  int rises = 0;
  double prev = 0.0;
  for (double x = -5.0; x <= 5.0; x += 0.01) {
    const double v = est.density(std::span<const double>(&x, 1));
    if (v > best_q) best_q = v, best_x = x;
    if (x > -5.0 && v > prev + 1e-12 && x > best_x + 0.5) ++rises;
    prev = v;
  }
  EXPECT_NEAR(best_x, drift, 0.3);
  EXPECT_EQ(rises, 0);
}

TEST(NisIntegrate, ConstantIntegrandIsUnbiased) {
  const auto pr = normal_problem([](Point) { return 3.0; });
  double sum = 0.0, var_sum = 0.0;
  const int runs = 100;
  for (int r = 0; r < runs; ++r) {
    const auto res = nis_integrate(pr, config(1000, derive_seed(17, r)));
    sum += res.estimate;
    var_sum += res.within_run_variance;
  }
  const double se = std::sqrt(var_sum) / runs;
  EXPECT_LT(std::abs(sum / runs - 3.0), 3.0 * se + 1e-12);
}

TEST(NisIntegrate, UnbiasedForAFixedPilot) {
  const auto bench = integrands::example1(1);
  const auto est = estimate_is_proposal(bench.problem, 375, PluginBandwidth{}, 21);
  Rng rng(77);
  double u = 0.0, x = 0.0;
  double sum = 0.0, sum2 = 0.0;
  const std::size_t reps = 10'000, n = 50;
  for (std::size_t r = 0; r < reps; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      u = rng.uniform();
      est.density.sample_into(std::span<const double>(&u, 1), std::span<double>(&x, 1));
      const Point pt(&x, 1);
      s += bench.problem.integrand(pt) * bench.problem.p(pt) / est.density(pt);
    }
    s /= n;
    sum += s;
    sum2 += s * s;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum2 / reps - mean * mean) / reps);
  EXPECT_LT(std::abs(mean - bench.oracle_value), 4.0 * se);
}

TEST(NisIntegrate, ResultBookkeeping) {
  const auto bench = integrands::example1(2);
  const auto res = nis_integrate(bench.problem, config(2000, 5));
  EXPECT_EQ(res.pilot_size, 300u);
  EXPECT_EQ(res.main_size, 1700u);
  EXPECT_EQ(res.method, Method::Nis);
  EXPECT_GE(res.within_run_variance, 0.0);
  EXPECT_GT(res.pilot_hits, 0u);
  EXPECT_GT(res.bandwidth, 0.0);
}

TEST(NisIntegrate, WarnsAboveQuarterPilotFraction) {
  const auto bench = integrands::example1(1);
  auto c = config(1000, 5);
  c.pilot_fraction = 0.3;
  const auto res = nis_integrate(bench.problem, c);
  bool found = false;
  for (const auto& w : res.warnings) found = found || w.find("0.25") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(NisIntegrate, OptimalVarianceSequenceApproachesTarget) {
  const auto bench = integrands::example1(1);
  const double target = *bench.optimal_variance;
  std::vector<double> scaled;
  for (std::size_t N : {500u, 1000u, 2500u}) {
    double s = 0.0, s2 = 0.0;
    const int runs = 2000;
    for (int r = 0; r < runs; ++r) {
      const auto res = nis_integrate(bench.problem, config(N, derive_seed(1234, r)));
      s += res.estimate;
      s2 += res.estimate * res.estimate;
    }
    const double var = s2 / runs - (s / runs) * (s / runs);
    scaled.push_back(var * 0.85 * static_cast<double>(N));
  }
  // Relative Monte Carlo error of a variance from 2000 runs is about 3%.
  EXPECT_GT(scaled[0] * 1.07, scaled[1]);
  EXPECT_GT(scaled[1] * 1.07, scaled[2]);
  EXPECT_GT(scaled[2], target * 0.95);
  EXPECT_LT(scaled[2], target * 1.25);
}

TEST(NisSplit, OneSignedIntegrandMatchesPlainNis) {
  const auto bench = integrands::bs_call({});
  const auto split = nis_split_integrate(bench.problem, config(10'000, 9));
  bool warned = false;
  for (const auto& w : split.warnings) warned = warned || w.find("negative") != std::string::npos;
  EXPECT_TRUE(warned);
  const auto plain = nis_integrate(bench.problem, config(10'000, 9));
  const double se = std::sqrt(split.within_run_variance + plain.within_run_variance);
  EXPECT_LT(std::abs(split.estimate - plain.estimate), 4.0 * se);
  EXPECT_LT(std::abs(split.estimate - bench.oracle_value), 4.0 * std::sqrt(split.within_run_variance));
}

TEST(NisSplit, DifferenceAgreesWithCrudeMonteCarlo) {
  // phi = x1 + 0.3 on [-1,1]^2 under a standard normal, q0 uniform on the box.
  auto pr = integrands::example1(2).problem;
  pr.integrand = [](Point x) {
    for (double v : x)
      if (v < -1.0 || v > 1.0) return 0.0;
    return x[0] + 0.3;
  };
  Rng rng(31);
  double s = 0.0, s2 = 0.0;
  const std::size_t n = 10'000'000;
  std::vector<double> u(2), x(2);
  for (std::size_t i = 0; i < n; ++i) {
    rng.fill_uniform(u);
    pr.target_sample(u, x);
    const double v = pr.integrand(x);
    s += v;
    s2 += v * v;
  }
  const double mc = s / n;
  const double mc_var = (s2 / n - mc * mc) / n;
  const double m = 2.0 * integrands::normal_cdf(1.0) - 1.0;
  EXPECT_NEAR(mc, 0.3 * m * m, 4.0 * std::sqrt(mc_var));

  const auto res = nis_split_integrate(pr, config(20'000, 12));
  EXPECT_EQ(res.pilot_size, 2 * pilot_size(10'000, optimal_lambda(2)));
  EXPECT_LT(std::abs(res.estimate - mc), 4.0 * std::sqrt(res.within_run_variance + mc_var));
}

TEST(Determinism, SameSeedSameEstimates) {
  const auto e1 = integrands::example1(2);
  const auto e3 = integrands::example3(0.75, 1);
  EXPECT_EQ(nis_integrate(e1.problem, config(3000, 8)).estimate, nis_integrate(e1.problem, config(3000, 8)).estimate);
  EXPECT_EQ(nis_split_integrate(e1.problem, config(3000, 8)).estimate,
            nis_split_integrate(e1.problem, config(3000, 8)).estimate);
  EXPECT_EQ(nsis_integrate(e3.problem, config(3000, 8)).estimate, nsis_integrate(e3.problem, config(3000, 8)).estimate);
  EXPECT_NE(nis_integrate(e1.problem, config(3000, 8)).estimate, nis_integrate(e1.problem, config(3000, 9)).estimate);
}

TEST(Nsis, ScaleInvariantBitForBit) {
  for (int phi : {1, 2}) {
    auto pr = integrands::example3(0.75, phi).problem;
    const auto base = nsis_integrate(pr, config(4000, 3));
    for (double alpha : {0.1, 3.0, 100.0}) {
      pr.target_scale = alpha;
      const auto res = nsis_integrate(pr, config(4000, 3));
      EXPECT_EQ(res.estimate, base.estimate);
      EXPECT_EQ(res.within_run_variance, base.within_run_variance);
    }
  }
}

TEST(Nsis, ProposalIsScaleInvariant) {
  auto pr = integrands::example3(3.5, 2).problem;
  const auto a = estimate_sis_proposal(pr, 800, PluginBandwidth{}, 2);
  pr.target_scale = 5.0;
  const auto b = estimate_sis_proposal(pr, 800, PluginBandwidth{}, 2);
  EXPECT_EQ(a.density.grid().heights(), b.density.grid().heights());
  EXPECT_EQ(a.bandwidth.h, b.bandwidth.h);
}

TEST(Nsis, ConstantIntegrandHasDegeneratePilot) {
  auto pr = integrands::example3(0.75, 1).problem;
  pr.integrand = [](Point) { return 2.0; };
  EXPECT_THROW(estimate_sis_proposal(pr, 500, ReferenceBandwidth{}, 1), EmptyPilot);
  EXPECT_THROW(nsis_integrate(pr, config(2000, 1)), EmptyPilot);
}

TEST(Nsis, RatioIsExactForConstantIntegrandUnderFixedProposal) {
  auto pr = integrands::example3(0.75, 1).problem;
  pr.integrand = [](Point) { return 2.0; };
  EXPECT_EQ(sis_integrate(pr, trial_proposal(pr), 5000, 4).estimate, 2.0);
}

TEST(Nsis, IndicatorProposalFollowsTheRidge) {
  const auto bench = integrands::example3(0.75, 2);
  const auto est = estimate_sis_proposal(bench.problem, 20'000, ReferenceBandwidth{}, 13);
  auto q = [&](double a, double b) {
    const double x[] = {a, b};
    return est.density(x);
  };
  EXPECT_GT(q(-0.5, 0.5), 5.0 * q(-0.5, -0.5));
  EXPECT_GT(q(2.0, 2.0), 5.0 * q(2.0, 0.5));
  EXPECT_GT(q(3.0, 3.0), 5.0 * q(3.0, 1.5));
  // |phi - I| p puts mass 0.8 * 0.2 on each side of x1 = 0.
  EXPECT_NEAR(est.density.marginal_cdf(0.0), 0.5, 0.08);
}

TEST(Nsis, EstimateNearOracle) {
  const auto bench = integrands::example3(0.75, 1);
  auto c = config(5000, 10, FixedBandwidth{1.224});
  const auto res = nsis_integrate(bench.problem, c);
  EXPECT_LT(std::abs(res.estimate - bench.oracle_value), 4.0 * std::sqrt(res.within_run_variance));
  EXPECT_EQ(res.pilot_size, 1000u);
}

TEST(ParseMethod, RoundTripAndRejects) {
  for (Method m : {Method::MonteCarlo, Method::Is, Method::Cdis, Method::Sis, Method::Nis, Method::NisSplit,
                   Method::Nsis})
    EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("nis+"), ContractViolation);
}

TEST(Describe, BandwidthRules) {
  EXPECT_EQ(describe(PluginBandwidth{}), "plugin");
  EXPECT_EQ(describe(ReferenceBandwidth{}), "reference");
  EXPECT_EQ(describe(FixedBandwidth{0.5}), "fixed:0.5");
}
