#include <pybind11/iostream.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <string>
#include <vector>

#include "npis/cli.hpp"
#include "npis/error.hpp"
#include "npis/integrands.hpp"
#include "npis/lbfp.hpp"
#include "npis/metrics.hpp"
#include "npis/nis.hpp"
#include "npis/queueing.hpp"

namespace py = pybind11;
using namespace npis;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

nis::BandwidthRule to_rule(const py::object& bandwidth) {
  if (bandwidth.is_none()) return nis::PluginBandwidth{};
  if (py::isinstance<py::str>(bandwidth)) {
    const auto s = bandwidth.cast<std::string>();
    if (s == "plugin") return nis::PluginBandwidth{};
    if (s == "reference") return nis::ReferenceBandwidth{};
    throw ContractViolation("bandwidth must be 'plugin', 'reference' or a positive number, got '" + s + "'");
  }
  return nis::FixedBandwidth{bandwidth.cast<double>()};
}

nis::NisConfig make_config(std::size_t n, std::uint64_t seed, std::optional<double> pilot_fraction,
                           const py::object& bandwidth) {
  nis::NisConfig c;
  c.budget = n;
  c.seed = seed;
  c.pilot_fraction = pilot_fraction;
  c.bandwidth = to_rule(bandwidth);
  return c;
}

/// Rows of a 1-D or 2-D array as a flat row-major vector plus the column count.
std::pair<std::vector<double>, std::size_t> rows(const Array& a) {
  if (a.ndim() == 1) return {std::vector<double>(a.data(), a.data() + a.size()), 1};
  if (a.ndim() != 2) throw ContractViolation("expected a 1-D or 2-D array");
  return {std::vector<double>(a.data(), a.data() + a.size()), static_cast<std::size_t>(a.shape(1))};
}

class PyLbfp {
 public:
  explicit PyLbfp(lbfp::HistogramGrid grid) : density_(std::move(grid)) {}

  static PyLbfp fit(const Array& points, std::optional<Array> weights, double bin_width) {
    auto [flat, d] = rows(points);
    const std::size_t n = flat.size() / d;
    std::vector<double> w(n, 1.0);
    if (weights) {
      if (static_cast<std::size_t>(weights->size()) != n) throw ContractViolation("one weight per point is needed");
      w.assign(weights->data(), weights->data() + n);
    }
    const auto grid = lbfp::build_histogram(flat, d, w, bin_width);
    return PyLbfp(grid);
  }

  std::size_t dim() const { return density_.dim(); }
  double bin_width() const { return density_.bin_width(); }

  py::array_t<double> evaluate(const Array& x) const {
    auto [flat, d] = rows(x);
    if (d != dim() && !(x.ndim() == 1 && dim() > 1 && flat.size() == dim()))
      throw ContractViolation("points must have " + std::to_string(dim()) + " columns");
    if (x.ndim() == 1 && dim() > 1) d = dim();
    const std::size_t n = flat.size() / d;
    py::array_t<double> out(static_cast<py::ssize_t>(n));
    auto o = out.mutable_unchecked<1>();
    for (std::size_t i = 0; i < n; ++i) o(i) = density_(std::span<const double>(flat.data() + i * d, d));
    return out;
  }

  py::array_t<double> sample(const Array& u) const {
    auto [flat, d] = rows(u);
    if (u.ndim() == 1 && dim() > 1) d = dim();
    if (d != dim() || flat.size() % d != 0) throw ContractViolation("uniforms must have " + std::to_string(dim()) + " columns");
    const std::size_t n = flat.size() / d;
    py::array_t<double> out({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(d)});
    double* o = out.mutable_data();
    for (std::size_t i = 0; i < n; ++i)
      density_.sample_into(std::span<const double>(flat.data() + i * d, d), std::span<double>(o + i * d, d));
    return out;
  }

  std::string serialize() const { return lbfp::serialize_grid(density_.grid()); }
  static PyLbfp deserialize(const std::string& text) { return PyLbfp(lbfp::deserialize_grid(text)); }

 private:
  lbfp::LbfpDensity density_;
};

queueing::QueueModel exponential_model(double arrival_rate, double service_rate, int servers, int K) {
  queueing::QueueModel m;
  m.servers = servers;
  m.interarrival = queueing::ExponentialLaw{arrival_rate};
  m.service = queueing::ExponentialLaw{service_rate};
  m.level = K;
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Nonparametric importance sampling core";
  m.attr("__version__") = NPIS_VERSION;

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  py::class_<nis::IntegrationResult>(m, "Result")
      .def_readonly("estimate", &nis::IntegrationResult::estimate)
      .def_readonly("within_run_variance", &nis::IntegrationResult::within_run_variance)
      .def_readonly("pilot_size", &nis::IntegrationResult::pilot_size)
      .def_readonly("main_size", &nis::IntegrationResult::main_size)
      .def_readonly("bandwidth", &nis::IntegrationResult::bandwidth)
      .def_readonly("elapsed_seconds", &nis::IntegrationResult::elapsed_seconds)
      .def_readonly("warnings", &nis::IntegrationResult::warnings)
      .def("__repr__", [](const nis::IntegrationResult& r) {
        return "Result(estimate=" + std::to_string(r.estimate) + ", main_size=" + std::to_string(r.main_size) + ")";
      });

  py::class_<metrics::ReplicationReport>(m, "Report")
      .def_readonly("problem", &metrics::ReplicationReport::problem)
      .def_readonly("method", &metrics::ReplicationReport::method)
      .def_readonly("budget", &metrics::ReplicationReport::budget)
      .def_readonly("estimates", &metrics::ReplicationReport::estimates)
      .def_readonly("oracle", &metrics::ReplicationReport::oracle)
      .def_readonly("mean", &metrics::ReplicationReport::mean)
      .def_readonly("variance", &metrics::ReplicationReport::variance)
      .def_readonly("bias", &metrics::ReplicationReport::bias)
      .def_readonly("mse", &metrics::ReplicationReport::mse)
      .def_readonly("cv", &metrics::ReplicationReport::cv)
      .def("relative_efficiency",
           [](const metrics::ReplicationReport& self, const metrics::ReplicationReport& baseline) {
             return metrics::relative_efficiency(baseline, self);
           },
           py::arg("baseline"), "MSE of `baseline` over the MSE of this report.");

  m.def("problems", &integrands::registry_names, "Registered benchmark names.");

  m.def(
      "integrate",
      [](const std::string& problem, const std::string& method, std::size_t n, std::uint64_t seed,
         std::optional<double> pilot_fraction, const py::object& bandwidth) {
        const auto bench = integrands::from_registry(problem);
        const auto config = make_config(n, seed, pilot_fraction, bandwidth);
        py::gil_scoped_release release;
        return integrands::run_method(bench, nis::parse_method(method), config);
      },
      py::arg("problem"), py::arg("method") = "nis", py::arg("n") = 10000, py::arg("seed") = 0,
      py::arg("pilot_fraction") = py::none(), py::arg("bandwidth") = py::none(),
      "One run of `method` on a registered benchmark such as 'example1?d=2'.");

  m.def(
      "replicate",
      [](const std::string& problem, const std::string& method, std::size_t n, std::size_t runs,
         std::uint64_t seed, std::optional<double> pilot_fraction, const py::object& bandwidth,
         std::size_t workers) {
        const auto bench = integrands::from_registry(problem);
        const auto config = make_config(n, 0, pilot_fraction, bandwidth);
        py::gil_scoped_release release;
        return metrics::run_replications(bench, nis::parse_method(method), config, runs, seed, workers);
      },
      py::arg("problem"), py::arg("method"), py::arg("n"), py::arg("runs"), py::arg("seed") = 0,
      py::arg("pilot_fraction") = py::none(), py::arg("bandwidth") = py::none(), py::arg("workers") = 0,
      "Independent runs with per-run seeds derived from `seed`.");

  m.def("black_scholes_price",
        [](double spot, double rate, double volatility, double maturity, double strike) {
          return integrands::black_scholes_price({spot, rate, volatility, maturity, strike});
        },
        py::arg("spot") = 100.0, py::arg("rate") = 0.1, py::arg("volatility") = 0.2, py::arg("maturity") = 1.0,
        py::arg("strike") = 130.0);

  m.def("gambler_ruin_prob", &queueing::gambler_ruin_prob, py::arg("mu"), py::arg("nu"), py::arg("K"),
        "Probability that an M/M/1 busy period reaches K jobs.");

  m.def(
      "level_prob",
      [](double arrival_rate, double service_rate, int K, int servers, const std::string& method,
         std::size_t periods, std::uint64_t seed) {
        const auto model = exponential_model(arrival_rate, service_rate, servers, K);
        queueing::QueueConfig c;
        c.periods = periods;
        c.seed = seed;
        const auto m = queueing::parse_queue_method(method);
        const auto r = [&] {
          py::gil_scoped_release release;
          return queueing::estimate_level_prob(model, m, c);
        }();
        return py::make_tuple(r.estimate, r.std_error);
      },
      py::arg("arrival_rate"), py::arg("service_rate"), py::arg("K"), py::arg("servers") = 1,
      py::arg("method") = "nis", py::arg("periods") = 1'000'000, py::arg("seed") = 0,
      "(estimate, std_error) of reaching K jobs in a busy period with exponential laws.");

  m.def(
      "synthetic_trace",
      [](std::size_t n, std::uint64_t seed) {
        const auto rows = queueing::generate_synthetic_trace(n, seed);
        py::array_t<double> inter(static_cast<py::ssize_t>(n)), service(static_cast<py::ssize_t>(n));
        auto a = inter.mutable_unchecked<1>();
        auto s = service.mutable_unchecked<1>();
        for (std::size_t i = 0; i < n; ++i) {
          a(i) = rows[i].interarrival_s;
          s(i) = rows[i].service_ms;
        }
        return py::make_tuple(inter, service);
      },
      py::arg("n") = 22248, py::arg("seed") = 1, "(interarrival seconds, service milliseconds) arrays.");

  py::class_<PyLbfp>(m, "Lbfp")
      .def_static("fit", &PyLbfp::fit, py::arg("points"), py::arg("weights") = py::none(), py::arg("bin_width"),
                  "Weighted histogram of `points` (n or n x d) blended into a density.")
      .def_static("deserialize", &PyLbfp::deserialize, py::arg("text"))
      .def_property_readonly("dim", &PyLbfp::dim)
      .def_property_readonly("bin_width", &PyLbfp::bin_width)
      .def("__call__", &PyLbfp::evaluate, py::arg("x"))
      .def("sample", &PyLbfp::sample, py::arg("u"), "Inversion sample from uniforms (n x d).")
      .def("serialize", &PyLbfp::serialize);

  m.def(
      "main",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::scoped_ostream_redirect out(std::cout, py::module_::import("sys").attr("stdout"));
        py::scoped_ostream_redirect err(std::cerr, py::module_::import("sys").attr("stderr"));
        return cli::parse_and_dispatch(static_cast<int>(argv.size()), argv.data(), std::cout, std::cerr);
      },
      py::arg("argv"));
}
