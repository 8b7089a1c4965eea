#include "npis/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "npis/error.hpp"
#include "npis/integrands.hpp"
#include "npis/lbfp.hpp"
#include "npis/metrics.hpp"
#include "npis/nis.hpp"
#include "npis/queueing.hpp"
#include "npis/rng.hpp"

namespace npis::cli {

namespace {

std::string num(double x) {
  if (!std::isfinite(x)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
  return s;
}

template <typename T>
std::string join_numbers(const std::vector<T>& v) {
  std::vector<std::string> s;
  for (const auto& x : v) s.push_back(std::to_string(x));
  return join(s);
}

/// Writes to the --output file, or to `fallback` when none was given.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : os_(&fallback) {
    if (path.empty()) return;
    file_ = std::make_unique<std::ofstream>(path);
    if (!*file_) throw Error("cannot open output file " + path);
    os_ = file_.get();
  }
  std::ostream& operator*() { return *os_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* os_;
};

std::ifstream open_input(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open input file " + path);
  return is;
}

struct ProblemArgs {
  std::string problem = "example1";
  std::optional<std::size_t> d;
  std::optional<double> K;
  std::optional<double> a;
  std::optional<int> phi;
  std::optional<double> lambda;
  std::string h = "plugin";

  void add(CLI::App& app) {
    app.add_option("--problem", problem, "example1, bs-call or example3, optionally with ?key=value")
        ->capture_default_str();
    app.add_option("--d", d, "dimension of example1");
    app.add_option("--K", K, "strike of bs-call");
    app.add_option("--a", a, "spread of example3");
    app.add_option("--phi", phi, "integrand index of example3 (1 or 2)");
    app.add_option("--lambda", lambda, "pilot fraction (method default when absent)");
    app.add_option("--bandwidth", h, "bin width: plugin, reference, published or a number")->capture_default_str();
  }

  std::string key() const {
    std::string k = problem;
    char sep = k.find('?') == std::string::npos ? '?' : '&';
    auto append = [&](const std::string& name, const std::string& value) {
      k += sep + name + "=" + value;
      sep = '&';
    };
    if (d) append("d", std::to_string(*d));
    if (K) append("K", num(*K));
    if (a) append("a", num(*a));
    if (phi) append("phi", std::to_string(*phi));
    return k;
  }

  nis::BandwidthRule rule(const integrands::BenchmarkProblem& bench, std::size_t N) const {
    if (h == "plugin") return nis::PluginBandwidth{};
    if (h == "reference") return nis::ReferenceBandwidth{};
    if (h == "published") {
      const auto it = bench.published_bandwidths.find(N);
      if (it == bench.published_bandwidths.end())
        throw ContractViolation("no published bin width for " + bench.name + " at N=" + std::to_string(N));
      return nis::FixedBandwidth{it->second};
    }
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(h, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != h.size() || !(v > 0.0)) throw ContractViolation("bad --bandwidth value '" + h + "'");
    return nis::FixedBandwidth{v};
  }

  void record(RunSpec& spec, const integrands::BenchmarkProblem& bench) const {
    spec.set("problem", bench.name);
    spec.set("lambda", lambda ? num(*lambda) : "default");
    spec.set("h", h);
  }
};

void warn_wasteful(const integrands::BenchmarkProblem& bench, nis::Method m, std::ostream& err) {
  if (m == nis::Method::Nsis && bench.problem.normalized)
    err << "warning: nsis on a normalized target; nis needs fewer assumptions\n";
}

int run_integrate(RunSpec& spec, const ProblemArgs& pa, const std::string& method_name, std::size_t N, bool timing,
                  std::ostream& out, std::ostream& err) {
  const auto bench = integrands::from_registry(pa.key());
  const nis::Method method = nis::parse_method(method_name);
  warn_wasteful(bench, method, err);
  nis::NisConfig config;
  config.budget = N;
  config.pilot_fraction = pa.lambda;
  config.bandwidth = pa.rule(bench, N);
  config.seed = spec.seed;
  pa.record(spec, bench);
  spec.set("method", nis::to_string(method));
  spec.set("n", std::to_string(N));
  spec.set("timing", timing ? "1" : "0");

  const auto r = integrands::run_method(bench, method, config);
  Sink sink(spec.output, out);
  std::ostream& os = *sink;
  os << spec.header() << '\n';
  for (const auto& w : r.warnings) os << "# warning: " << w << '\n';
  os << "problem,method,N,d,estimate,std_error,oracle,pilot_size,main_size,bandwidth,time_ms,seed\n";
  os << bench.name << ',' << nis::to_string(method) << ',' << N << ',' << bench.problem.dim << ','
     << num(r.estimate) << ',' << num(std::sqrt(r.within_run_variance)) << ',' << num(bench.oracle_value) << ','
     << r.pilot_size << ',' << r.main_size << ',' << (r.bandwidth > 0.0 ? num(r.bandwidth) : "NA") << ','
     << (timing ? num(1e3 * r.elapsed_seconds) : "NA") << ',' << spec.seed << '\n';
  return 0;
}

int run_study(RunSpec& spec, const ProblemArgs& pa, std::vector<std::string> methods, const std::vector<std::size_t>& ns,
              std::size_t runs, std::string baseline, bool timing, std::ostream& out, std::ostream& err) {
  const auto bench = integrands::from_registry(pa.key());
  if (methods.empty())
    for (auto m : bench.methods) methods.push_back(nis::to_string(m));
  std::vector<nis::Method> parsed;
  for (const auto& m : methods) {
    parsed.push_back(nis::parse_method(m));
    warn_wasteful(bench, parsed.back(), err);
  }
  if (baseline.empty()) baseline = bench.problem.normalized ? "mc" : "sis";
  pa.record(spec, bench);
  spec.set("methods", join(methods));
  spec.set("n", join_numbers(ns));
  spec.set("runs", std::to_string(runs));
  spec.set("baseline", baseline);
  spec.set("timing", timing ? "1" : "0");

  std::vector<metrics::ReplicationReport> reports;
  for (std::size_t N : ns) {
    for (std::size_t i = 0; i < parsed.size(); ++i) {
      nis::NisConfig config;
      config.budget = N;
      config.pilot_fraction = pa.lambda;
      config.bandwidth = pa.rule(bench, N);
      reports.push_back(metrics::run_replications(bench, parsed[i], config, runs, spec.seed, spec.workers));
    }
  }
  metrics::assign_relative_efficiency(reports, baseline);
  Sink sink(spec.output, out);
  std::ostream& os = *sink;
  os << spec.header() << '\n';
  metrics::write_csv_header(os);
  for (const auto& r : reports) metrics::write_csv_row(os, r, timing);
  return 0;
}

struct QueueArgs {
  int servers = 1;
  int K = 10;
  std::vector<std::string> methods = {"mc", "is", "nis"};
  std::size_t periods = 1'000'000;
  std::size_t runs = 20;
  double lambda = 0.15;
  std::string trace;
  std::size_t trace_n = 22'248;
  std::uint64_t trace_seed = 1;
  std::optional<double> arrival_rate;
  std::optional<double> service_rate;
  bool timing = false;

  void add(CLI::App& app) {
    app.add_option("--servers", servers, "1 or 2")->capture_default_str();
    app.add_option("--K", K, "level")->capture_default_str();
    app.add_option("--method,--methods", methods, "mc, is, nis")->delimiter(',')->capture_default_str();
    app.add_option("--periods", periods, "busy periods per run")->capture_default_str();
    app.add_option("--runs", runs, "replications")->capture_default_str();
    app.add_option("--lambda", lambda, "pilot fraction")->capture_default_str();
    app.add_option("--trace", trace, "trace CSV; a synthetic trace is generated when absent");
    app.add_option("--trace-n", trace_n, "rows of the synthetic trace")->capture_default_str();
    app.add_option("--trace-seed", trace_seed, "seed of the synthetic trace")->capture_default_str();
    app.add_option("--arrival-rate", arrival_rate, "exponential interarrival rate (with --service-rate)");
    app.add_option("--service-rate", service_rate, "exponential service rate (with --arrival-rate)");
    app.add_flag("--timing", timing, "report wall-clock columns");
  }
};

int run_queue(RunSpec& spec, const QueueArgs& qa, std::ostream& out) {
  queueing::QueueModel model;
  std::string label;
  std::optional<double> oracle;
  if (qa.arrival_rate || qa.service_rate) {
    if (!qa.arrival_rate || !qa.service_rate)
      throw ContractViolation("--arrival-rate and --service-rate go together");
    if (!qa.trace.empty()) throw ContractViolation("--trace cannot be combined with exponential rates");
    model.servers = qa.servers;
    model.level = qa.K;
    model.interarrival = queueing::ExponentialLaw{*qa.arrival_rate};
    model.service = queueing::ExponentialLaw{*qa.service_rate};
    label = "mm" + std::to_string(qa.servers) + "?mu=" + num(*qa.arrival_rate) + "&nu=" + num(*qa.service_rate) +
            "&K=" + std::to_string(qa.K);
    if (qa.servers == 1) oracle = queueing::gambler_ruin_prob(*qa.arrival_rate, *qa.service_rate, qa.K);
    spec.set("arrival_rate", num(*qa.arrival_rate));
    spec.set("service_rate", num(*qa.service_rate));
  } else {
    std::vector<queueing::TraceRow> rows;
    if (qa.trace.empty()) {
      rows = queueing::generate_synthetic_trace(qa.trace_n, qa.trace_seed);
      spec.set("trace", "synthetic");
      spec.set("trace_n", std::to_string(qa.trace_n));
      spec.set("trace_seed", std::to_string(qa.trace_seed));
    } else {
      auto is = open_input(qa.trace);
      rows = queueing::read_trace(is);
      spec.set("trace", qa.trace);
    }
    model = queueing::model_from_trace(rows, qa.servers, qa.K);
    label = "trace?servers=" + std::to_string(qa.servers) + "&K=" + std::to_string(qa.K);
  }
  queueing::validate(model);
  std::vector<queueing::QueueMethod> methods;
  for (const auto& m : qa.methods) methods.push_back(queueing::parse_queue_method(m));
  spec.set("servers", std::to_string(qa.servers));
  spec.set("K", std::to_string(qa.K));
  spec.set("methods", join(qa.methods));
  spec.set("periods", std::to_string(qa.periods));
  spec.set("runs", std::to_string(qa.runs));
  spec.set("lambda", num(qa.lambda));
  spec.set("timing", qa.timing ? "1" : "0");

  queueing::QueueConfig config;
  config.periods = qa.periods;
  config.pilot_fraction = qa.lambda;
  config.workers = spec.workers;

  Sink sink(spec.output, out);
  std::ostream& os = *sink;
  if (qa.runs == 1) {
    os << spec.header() << '\n';
    os << "problem,method,periods,pilot_periods,estimate,std_error,oracle,hits,arrival_rate,service_mean,time_ms,"
          "seed\n";
    for (auto m : methods) {
      config.seed = derive_seed(spec.seed, 0);
      const auto r = queueing::estimate_level_prob(model, m, config);
      for (const auto& w : r.warnings) os << "# warning: " << w << '\n';
      os << label << ',' << queueing::to_string(m) << ',' << r.periods << ',' << r.pilot_periods << ','
         << num(r.estimate) << ',' << num(r.std_error) << ',' << (oracle ? num(*oracle) : "NA") << ',' << r.hits
         << ',' << num(r.arrival_rate) << ',' << (r.service_proposal ? num(r.service_proposal->mean()) : "NA")
         << ',' << (qa.timing ? num(1e3 * r.elapsed_seconds) : "NA") << ',' << spec.seed << '\n';
    }
    return 0;
  }
  std::vector<metrics::ReplicationReport> reports;
  for (auto m : methods) reports.push_back(metrics::run_replications(model, label, m, config, qa.runs, spec.seed, oracle));
  metrics::assign_relative_efficiency(reports, "mc");
  os << spec.header() << '\n';
  metrics::write_csv_header(os);
  for (const auto& r : reports) metrics::write_csv_row(os, r, qa.timing);
  return 0;
}

int run_trace_gen(RunSpec& spec, std::size_t n, std::ostream& out) {
  spec.set("n", std::to_string(n));
  const auto rows = queueing::generate_synthetic_trace(n, spec.seed);
  Sink sink(spec.output, out);
  *sink << spec.header() << '\n';
  queueing::write_trace(*sink, rows);
  return 0;
}

/// Numeric CSV with a header row; returns row-major values and the column count.
std::vector<double> read_numeric_csv(std::istream& is, std::size_t& columns) {
  std::string line;
  std::size_t lineno = 0;
  do {
    if (!std::getline(is, line)) throw ParseError(lineno + 1, 1, "missing header");
    ++lineno;
  } while (!line.empty() && line.front() == '#');
  columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<double> values;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t start = 0, fields = 0;
    for (;;) {
      const std::size_t end = std::min(line.find(',', start), line.size());
      const std::string cell = line.substr(start, end - start);
      char* stop = nullptr;
      const double v = std::strtod(cell.c_str(), &stop);
      if (cell.empty() || stop != cell.c_str() + cell.size()) throw ParseError(lineno, start + 1, "not a number");
      if (!std::isfinite(v)) throw InvalidSample("non-finite value at line " + std::to_string(lineno));
      values.push_back(v);
      ++fields;
      if (end == line.size()) break;
      start = end + 1;
    }
    if (fields != columns)
      throw ParseError(lineno, 1, "expected " + std::to_string(columns) + " fields, got " + std::to_string(fields));
  }
  if (values.empty()) throw ParseError(lineno + 1, 1, "no data rows");
  return values;
}

int run_density(RunSpec& spec, const std::string& input, const std::string& h, std::ostream& out) {
  auto is = open_input(input);
  std::size_t d = 0;
  std::vector<double> x = read_numeric_csv(is, d);
  const std::size_t n = x.size() / d;
  std::vector<double> scale(d);
  for (std::size_t k = 0; k < d; ++k) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i * d + k];
    const double m = s / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) ss += (x[i * d + k] - m) * (x[i * d + k] - m);
    scale[k] = std::sqrt(ss / static_cast<double>(n));
    if (!(scale[k] > 0.0)) throw DegenerateSpread();
    for (std::size_t i = 0; i < n; ++i) x[i * d + k] /= scale[k];
  }
  const std::vector<double> w(n, 1.0);
  double width = 0.0;
  if (h == "reference") {
    width = nis::reference_bandwidth(x, w, d, n);
  } else {
    std::size_t pos = 0;
    try {
      width = std::stod(h, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != h.size() || !(width > 0.0)) throw ContractViolation("bad --bandwidth value '" + h + "'");
  }
  const auto grid = lbfp::build_histogram(x, d, w, width);
  spec.set("input", input);
  spec.set("h", h);
  spec.set("rows", std::to_string(n));
  Sink sink(spec.output, out);
  std::ostream& os = *sink;
  os << spec.header() << '\n';
  os << "# coordinates divided by scale; density in data units is f(x / scale) / prod(scale)\n# scale";
  for (double s : scale) os << ' ' << num(s);
  os << '\n';
  lbfp::write_grid(os, grid);
  return 0;
}

}  // namespace

void RunSpec::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : fields)
    if (k == key) {
      v = value;
      return;
    }
  fields.emplace_back(key, value);
}

std::string RunSpec::header() const {
  std::string h = "# npis " NPIS_VERSION " " + subcommand;
  for (const auto& [k, v] : fields) h += " " + k + "=" + v;
  if (seeded) h += " seed=" + std::to_string(seed);
  h += " generator=" + std::string(kGeneratorName);
  return h;
}

int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nonparametric importance sampling benchmarks", "npis"};
  app.set_version_flag("--version", NPIS_VERSION);
  app.require_subcommand(1);
  RunSpec spec;

  auto common = [&](CLI::App* sub, bool seeded) {
    if (seeded) sub->add_option("--seed", spec.seed, "master seed")->envname("NPIS_SEED")->capture_default_str();
    sub->add_option("--workers", spec.workers, "worker threads (0: all cores)")->envname("NPIS_WORKERS");
    sub->add_option("-o,--output", spec.output, "output file (default stdout)");
  };

  ProblemArgs integrate_args;
  std::string method = "nis";
  std::size_t n = 10'000;
  bool timing = false;
  auto* integrate = app.add_subcommand("integrate", "one problem, method and budget");
  integrate_args.add(*integrate);
  integrate->add_option("--method", method, "mc, is, cdis, sis, nis, nis-split, nsis")->capture_default_str();
  integrate->add_option("--n", n, "sample budget N")->capture_default_str();
  integrate->add_flag("--timing", timing, "report wall-clock time");
  common(integrate, true);

  ProblemArgs study_args;
  std::vector<std::string> study_methods;
  std::vector<std::size_t> study_ns = {1000, 5000, 10'000};
  std::size_t runs = 100;
  std::string baseline;
  bool study_timing = false;
  auto* study = app.add_subcommand("study", "replication sweep over budgets and methods");
  study_args.add(*study);
  study->add_option("--methods", study_methods, "methods (default: all for the problem)")->delimiter(',');
  study->add_option("--n", study_ns, "budgets")->delimiter(',')->capture_default_str();
  study->add_option("--runs", runs, "replications")->capture_default_str();
  study->add_option("--baseline", baseline, "method the RE column is relative to (mc, or sis when unnormalized)");
  study->add_flag("--timing", study_timing, "report wall-clock columns");
  common(study, true);

  QueueArgs queue_args;
  auto* queue = app.add_subcommand("queue", "level-probability study on a queue model");
  queue_args.add(*queue);
  common(queue, true);

  std::size_t trace_rows = 22'248;
  auto* trace_gen = app.add_subcommand("trace-gen", "synthetic queue trace CSV");
  trace_gen->add_option("--n", trace_rows, "rows")->capture_default_str();
  common(trace_gen, true);

  std::string input;
  std::string density_h = "reference";
  auto* density = app.add_subcommand("density", "fit and serialize an LBFP from a sample CSV");
  density->add_option("--input", input, "numeric CSV with header")->required();
  density->add_option("--bandwidth", density_h, "bin width on standardized data, or reference")->capture_default_str();
  common(density, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*integrate) {
      spec.subcommand = "integrate";
      return run_integrate(spec, integrate_args, method, n, timing, out, err);
    }
    if (*study) {
      spec.subcommand = "study";
      return run_study(spec, study_args, study_methods, study_ns, runs, baseline, study_timing, out, err);
    }
    if (*queue) {
      spec.subcommand = "queue";
      return run_queue(spec, queue_args, out);
    }
    if (*trace_gen) {
      spec.subcommand = "trace-gen";
      return run_trace_gen(spec, trace_rows, out);
    }
    spec.subcommand = "density";
    spec.seeded = false;
    return run_density(spec, input, density_h, out);
  } catch (const std::exception& e) {
    err << "npis: " << e.what() << '\n';
    return 1;
  }
}

int parse_and_dispatch(int argc, char** argv) { return parse_and_dispatch(argc, argv, std::cout, std::cerr); }

}  // namespace npis::cli
