#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pboguard/error.hpp"
#include "pboguard/harness.hpp"
#include "pboguard/indicators.hpp"
#include "pboguard/pbo.hpp"
#include "pboguard/splits.hpp"
#include "pboguard/synthetic.hpp"

namespace py = pybind11;
using namespace pboguard;

namespace {

using Matrix = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::list plan_to_list(const SplitPlan& plan) {
    py::list out;
    for (const auto& s : plan.splits) out.append(py::make_tuple(s.train_groups, s.validation_groups));
    return out;
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

py::dict estimate(const Matrix& returns, std::size_t S, const std::string& metric, const std::string& mode,
                  std::size_t samples, std::uint64_t seed, double alpha, std::size_t bins) {
    if (returns.ndim() != 2) throw std::invalid_argument("estimate_pbo: expected a 2-D array (rows x trials)");
    TrialMatrix m;
    m.num_rows = static_cast<std::size_t>(returns.shape(0));
    m.num_trials = static_cast<std::size_t>(returns.shape(1));
    m.values.assign(returns.data(), returns.data() + returns.size());

    PboOptions o;
    o.num_blocks = S;
    o.metric = parse_pbo_metric(metric);
    if (mode == "exhaustive") o.mode = PboMode::Exhaustive;
    else if (mode == "sampled") o.mode = PboMode::Sampled;
    else if (mode == "auto") o.mode = PboMode::Auto;
    else throw std::invalid_argument("estimate_pbo: mode must be exhaustive, sampled or auto");
    o.samples = samples;
    o.seed = seed;
    o.alpha = alpha;
    o.histogram_bins = bins;

    PboResult r;
    {
        py::gil_scoped_release release;
        r = estimate_pbo(m, o);
    }
    py::dict d;
    d["p"] = r.p;
    d["verdict"] = to_string(r.verdict);
    d["alpha"] = r.alpha;
    d["lambdas"] = py::array_t<double>(static_cast<py::ssize_t>(r.lambdas.size()), r.lambdas.data());
    d["S"] = r.num_blocks;
    d["H"] = r.num_trials;
    d["combination_count"] = r.combination_count;
    d["exhaustive"] = r.exhaustive;
    d["histogram_edges"] = r.histogram.edges;
    d["histogram_counts"] = r.histogram.counts;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Probability of backtest overfitting for trading strategy hyperparameter searches";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("binomial", &binomial, py::arg("n"), py::arg("k"));

    m.def("make_combinatorial", [](std::size_t N, std::size_t k) { return plan_to_list(make_combinatorial(N, k)); },
          py::arg("N"), py::arg("k"), "All C(N, k) splits as (train_groups, validation_groups), lexicographic.");
    m.def("make_walk_forward", [](std::size_t N, double f) { return plan_to_list(make_walk_forward(N, f)); },
          py::arg("N"), py::arg("train_fraction"));
    m.def("make_kfold", [](std::size_t N) { return plan_to_list(make_kfold(N)); }, py::arg("N"));

    m.def("estimate_pbo", &estimate, py::arg("returns"), py::arg("S") = 14, py::arg("metric") = "sharpe",
          py::arg("mode") = "auto", py::arg("samples") = 0, py::arg("seed") = 0, py::arg("alpha") = 0.10,
          py::arg("bins") = 20, "PBO of a (rows x trials) matrix of per-step returns.");

    m.def("gate", [](double p, double alpha) { return to_string(gate(p, alpha)); }, py::arg("p"),
          py::arg("alpha") = 0.10);

    m.def(
        "compute_indicator",
        [](const std::vector<double>& close, const std::string& spec, std::optional<std::vector<double>> high,
           std::optional<std::vector<double>> low, std::optional<std::vector<double>> volume) {
            const auto h = high.value_or(close), l = low.value_or(close);
            const auto v = volume.value_or(std::vector<double>(close.size(), 1.0));
            const auto s = compute_indicator(h, l, close, v, IndicatorSpec::parse(spec));
            return py::make_tuple(py::array_t<double>(static_cast<py::ssize_t>(s.values.size()), s.values.data()),
                                  s.warmup);
        },
        py::arg("close"), py::arg("spec"), py::arg("high") = py::none(), py::arg("low") = py::none(),
        py::arg("volume") = py::none(), "Returns (values, warmup); values before warmup are NaN.");

    m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson(x, y); },
          py::arg("x"), py::arg("y"));

    m.def(
        "sample_trials",
        [](std::size_t H, const std::string& sampler, std::uint64_t seed) {
            return sample_trials(default_hyperparameter_grid(), H, parse_trial_sampler(sampler), seed);
        },
        py::arg("H"), py::arg("sampler") = "random", py::arg("seed") = 0,
        "H hyperparameter sets drawn from the default 2700-point grid.");

    m.def(
        "write_synthetic_dataset",
        [](const std::string& dir, std::uint64_t seed, std::size_t assets, std::size_t steps) {
            SyntheticSpec spec;
            spec.seed = seed;
            spec.num_assets = assets;
            spec.num_steps = steps;
            write_synthetic_dataset(make_synthetic_market(spec), dir);
        },
        py::arg("dir"), py::arg("seed") = 7, py::arg("assets") = 3, py::arg("steps") = 2000,
        "Writes a seeded synthetic market plus a ready-to-run config.toml into dir.");

    m.def(
        "run_experiment",
        [](const std::string& config_path, std::optional<std::uint64_t> seed, std::size_t jobs,
           std::optional<std::string> out) {
            auto config = load_config(config_path);
            if (seed) config.master_seed = *seed;
            std::string text;
            {
                py::gil_scoped_release release;
                const auto data = load_experiment_data(config);
                const auto report = run_experiment(config, data, jobs);
                if (out) emit_report(report, *out);
                text = report.to_json().dump();
            }
            return parse_json(text);
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("jobs") = 1, py::arg("out") = py::none(),
        "Runs the full pipeline and returns the report as a dict; writes artifacts when out is given.");
}
