#include "pboguard/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <toml.hpp>

#include "pboguard/error.hpp"
#include "pboguard/indicators.hpp"
#include "pboguard/io.hpp"
#include "pboguard/rng.hpp"

namespace pboguard {

using nlohmann::json;

namespace {

constexpr const char* kNotReproduced =
    "Published absolute returns and volatilities need the original proprietary 5-minute market data and DRL "
    "training runs; every number here describes the supplied dataset only.";

// ---------------------------------------------------------------------------
// Config reading helpers. Every section rejects unknown keys so typos surface.

void check_keys(const json& section, const std::string& name, std::initializer_list<const char*> allowed) {
    if (!section.is_object()) throw ConfigError("config: [" + name + "] must be a table");
    for (const auto& [key, value] : section.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            throw ConfigError("config: unknown key '" + key + "' in [" + name + "]");
        }
    }
}

template <typename T>
T get_or(const json& section, const std::string& section_name, const char* key, T fallback) {
    if (!section.contains(key)) return fallback;
    try {
        return section.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: [" + section_name + "] " + key + " has the wrong type");
    }
}

double get_number(const json& section, const std::string& name, const char* key, double fallback) {
    if (!section.contains(key)) return fallback;
    const auto& v = section.at(key);
    if (!v.is_number()) throw ConfigError("config: [" + name + "] " + key + " must be a number");
    return v.get<double>();
}

std::size_t get_count(const json& section, const std::string& name, const char* key, std::size_t fallback) {
    if (!section.contains(key)) return fallback;
    const auto& v = section.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError("config: [" + name + "] " + key + " must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

std::optional<std::int64_t> get_timestamp(const json& section, const char* key) {
    if (!section.contains(key)) return std::nullopt;
    const auto& v = section.at(key);
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_string()) {
        if (auto ts = io::parse_timestamp(v.get<std::string>())) return ts;
    }
    throw ConfigError(std::string("config: [windows] ") + key + " is not a timestamp");
}

template <typename F>
auto as_config_error(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

json perf_to_json(const PerfMetrics& m) {
    return {{"cumulative_return", m.cumulative_return}, {"volatility", m.volatility}, {"sharpe", m.sharpe}};
}

double metric_value(const PerfMetrics& m, PboMetric metric) {
    return metric == PboMetric::Sharpe ? m.sharpe : m.cumulative_return;
}

json window_to_json(const Window& w, const std::vector<std::int64_t>& timestamps) {
    json j = {{"begin_row", w.begin}, {"end_row", w.end}};
    if (w.size() > 0) {
        j["first"] = io::format_iso8601(timestamps[w.begin]);
        j["last"] = io::format_iso8601(timestamps[w.end - 1]);
    }
    return j;
}

std::string file_safe(std::string name) {
    for (char& c : name) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    }
    return name;
}

// Runs f(0..n-1) on up to `jobs` threads. Rethrows the failure with the lowest
// index so the error is the same for every thread count.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& f) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), n);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

// Re-raises the active exception with context, keeping its category.
[[noreturn]] void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const DataError& e) {
        throw DataError(context + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(context + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(context + ": " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(context + ": " + e.what());
    }
}

SplitPlan make_plan(SplitScheme scheme, const ExperimentConfig& c) {
    switch (scheme) {
        case SplitScheme::Combinatorial: return make_combinatorial(c.num_groups, c.validation_groups);
        case SplitScheme::WalkForward: return make_walk_forward(c.num_groups, c.train_fraction);
        case SplitScheme::KFold: return make_kfold(c.num_groups);
    }
    throw std::invalid_argument("unknown split scheme");
}

// Rows are the union of imported timestamps; each entry averages a trial's
// returns over the splits that cover that timestamp.
TrialMatrix external_trial_matrix(const std::vector<TrialReturns>& trials) {
    std::map<std::int64_t, std::size_t> rows;
    for (const auto& s : trials.front().splits) {
        for (auto ts : s.timestamps) rows.emplace(ts, 0);
    }
    std::size_t r = 0;
    for (auto& [ts, idx] : rows) idx = r++;

    TrialMatrix m;
    m.num_rows = rows.size();
    m.num_trials = trials.size();
    m.values.assign(m.num_rows * m.num_trials, 0.0);
    for (const auto& [ts, idx] : rows) m.row_timestamps.push_back(ts);
    std::vector<double> counts(m.num_rows * m.num_trials, 0.0);
    for (std::size_t i = 0; i < trials.size(); ++i) {
        m.trial_ids.push_back(trials[i].trial_id);
        for (const auto& s : trials[i].splits) {
            for (std::size_t k = 0; k < s.timestamps.size(); ++k) {
                const std::size_t row = rows.at(s.timestamps[k]);
                m.at(row, i) += s.returns[k];
                counts[row * m.num_trials + i] += 1.0;
            }
        }
    }
    for (std::size_t k = 0; k < m.values.size(); ++k) m.values[k] /= counts[k];
    return m;
}

StrategyResult strategy_from_episode(std::string name, EpisodeResult episode) {
    StrategyResult s;
    s.name = std::move(name);
    s.metrics = compute_metrics(episode.equity);
    s.timestamps = std::move(episode.timestamps);
    s.equity = std::move(episode.equity);
    s.trades = std::move(episode.trades);
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(TrialSampler sampler) { return sampler == TrialSampler::Grid ? "grid" : "random"; }

TrialSampler parse_trial_sampler(const std::string& name) {
    if (name == "grid" || name == "GRID") return TrialSampler::Grid;
    if (name == "random" || name == "RANDOM") return TrialSampler::Random;
    throw std::invalid_argument("unknown trial sampler '" + name + "'");
}

json ExperimentConfig::to_json() const {
    json j;
    json data;
    data["assets"] = json::array();
    for (const auto& p : asset_paths) data["assets"].push_back(p.generic_string());
    data["names"] = asset_names;
    if (cvix_path) data["cvix"] = cvix_path->generic_string();
    if (index_path) data["index"] = index_path->generic_string();
    if (external_trials_path) data["external_trials"] = external_trials_path->generic_string();
    data["min_rows"] = min_rows;
    data["schema"] = {{"timestamp", schema.timestamp}, {"open", schema.open},   {"high", schema.high},
                      {"low", schema.low},             {"close", schema.close}, {"volume", schema.volume}};
    j["data"] = data;

    json windows;
    if (train_start) windows["train_start"] = *train_start;
    if (train_end) windows["train_end"] = *train_end;
    if (test_start) windows["test_start"] = *test_start;
    if (test_end) windows["test_end"] = *test_end;
    windows["test_fraction"] = test_fraction;
    j["windows"] = windows;

    json e = {{"initial_cash", env.initial_cash},
              {"fee_rate", env.fee_rate},
              {"cvix_threshold", env.cvix_threshold},
              {"buy_fill", env.buy_fill == BuyFill::SkipWhole ? "skip_whole" : "pro_rata"}};
    if (env.max_position_per_step) e["max_position_per_step"] = *env.max_position_per_step;
    j["env"] = e;

    j["features"] = {{"candidates", feature_candidates.empty() ? canonical_feature_names() : feature_candidates},
                     {"threshold", correlation_threshold},
                     {"filter", correlation_filter}};

    json s = {{"N", num_groups}, {"k", validation_groups}, {"train_fraction", train_fraction}, {"embargo", embargo}};
    s["schemes"] = json::array();
    for (auto scheme : schemes) s["schemes"].push_back(to_string(scheme));
    j["splits"] = s;

    json grid_json = json::array();
    for (const auto& [name, values] : grid.axes) grid_json.push_back({{"name", name}, {"values", values}});
    j["trials"] = {{"source", source == TrialSource::Cem ? "cem" : "external"},
                   {"H", num_trials},
                   {"sampler", to_string(sampler)},
                   {"master_seed", master_seed},
                   {"grid", grid_json},
                   {"selection_metric", to_string(selection_metric)},
                   {"cem",
                    {{"population_divisor", scaling.population_divisor},
                     {"width_divisor", scaling.width_divisor},
                     {"horizon_divisor", scaling.horizon_divisor},
                     {"rate_scale", scaling.rate_scale},
                     {"elite_fraction", scaling.elite_fraction},
                     {"init_std", scaling.init_std},
                     {"min_std", scaling.min_std},
                     {"rebalance_band", scaling.rebalance_band}}}};

    const char* mode = pbo.mode == PboMode::Exhaustive ? "exhaustive" : pbo.mode == PboMode::Sampled ? "sampled" : "auto";
    j["pbo"] = {{"S", pbo.num_blocks}, {"metric", to_string(pbo.metric)}, {"alpha", pbo.alpha},
                {"mode", mode},        {"samples", pbo.samples},          {"seed", pbo.seed},
                {"cap", pbo.cap},      {"bins", pbo.histogram_bins}};

    json bench = json::array();
    for (auto b : benchmarks) bench.push_back(to_string(b));
    j["report"] = {{"benchmarks", bench}, {"test_all_trials", test_all_trials}};
    return j;
}

void ExperimentConfig::validate() const {
    if (source == TrialSource::Cem && asset_paths.empty()) throw ConfigError("config: [data] assets is empty");
    if (source == TrialSource::External && !external_trials_path) {
        throw ConfigError("config: external trials need [data] external_trials");
    }
    if (!asset_names.empty() && asset_names.size() != asset_paths.size()) {
        throw ConfigError("config: [data] names must match assets one to one");
    }
    if (source == TrialSource::Cem && num_trials < 2) throw ConfigError("config: [trials] H must be at least 2");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("config: test_fraction must lie in (0, 1)");
    if (train_end && test_start && *test_start < *train_end) {
        throw ConfigError("config: the test window must start at or after the end of the training window");
    }
    if (train_start && train_end && *train_end <= *train_start) throw ConfigError("config: empty training window");
    if (test_start && test_end && *test_end <= *test_start) throw ConfigError("config: empty test window");
    if (schemes.empty()) throw ConfigError("config: [splits] schemes is empty");
    if (pbo.num_blocks < 2 || pbo.num_blocks % 2 != 0) throw ConfigError("config: [pbo] S must be even and >= 2");
    if (!(pbo.alpha > 0.0 && pbo.alpha < 1.0)) throw ConfigError("config: [pbo] alpha must lie in (0, 1)");
    if (pbo.histogram_bins == 0) throw ConfigError("config: [pbo] bins must be positive");
    if (!(correlation_threshold >= 0.0 && correlation_threshold <= 1.0)) {
        throw ConfigError("config: [features] threshold must lie in [0, 1]");
    }
    as_config_error([&] {
        env.validate();
        for (auto scheme : schemes) make_plan(scheme, *this);
        if (source == TrialSource::Cem) {
            if (grid.cardinality() == 0) throw std::invalid_argument("[trials.grid] is empty");
            if (num_trials > grid.cardinality()) {
                throw std::invalid_argument("[trials] H = " + std::to_string(num_trials) + " exceeds the grid size " +
                                            std::to_string(grid.cardinality()));
            }
            for (std::size_t i = 0; i < grid.cardinality(); i += std::max<std::size_t>(1, grid.cardinality() / 64)) {
                cem_layout(CemHyperparameters::from_set(grid.at(i)), scaling);
            }
        }
        for (const auto& f : feature_candidates) {
            if (f != "volume") IndicatorSpec::parse(f);
        }
        return 0;
    });
}

ExperimentConfig parse_config_json(const json& j, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    c.base_dir = base_dir;
    check_keys(j, "root", {"data", "windows", "env", "features", "splits", "trials", "pbo", "report", "output"});
    const json empty = json::object();
    auto section = [&](const char* name) -> const json& { return j.contains(name) ? j.at(name) : empty; };

    const auto& data = section("data");
    check_keys(data, "data", {"assets", "names", "cvix", "index", "external_trials", "min_rows", "schema"});
    for (const auto& p : get_or<std::vector<std::string>>(data, "data", "assets", {})) c.asset_paths.emplace_back(p);
    c.asset_names = get_or<std::vector<std::string>>(data, "data", "names", {});
    if (data.contains("cvix")) c.cvix_path = get_or<std::string>(data, "data", "cvix", "");
    if (data.contains("index")) c.index_path = get_or<std::string>(data, "data", "index", "");
    if (data.contains("external_trials")) {
        c.external_trials_path = get_or<std::string>(data, "data", "external_trials", "");
    }
    c.min_rows = get_count(data, "data", "min_rows", c.min_rows);
    if (data.contains("schema")) {
        const auto& s = data.at("schema");
        check_keys(s, "data.schema", {"timestamp", "open", "high", "low", "close", "volume"});
        c.schema.timestamp = get_or<std::string>(s, "data.schema", "timestamp", c.schema.timestamp);
        c.schema.open = get_or<std::string>(s, "data.schema", "open", c.schema.open);
        c.schema.high = get_or<std::string>(s, "data.schema", "high", c.schema.high);
        c.schema.low = get_or<std::string>(s, "data.schema", "low", c.schema.low);
        c.schema.close = get_or<std::string>(s, "data.schema", "close", c.schema.close);
        c.schema.volume = get_or<std::string>(s, "data.schema", "volume", c.schema.volume);
    }

    const auto& windows = section("windows");
    check_keys(windows, "windows", {"train_start", "train_end", "test_start", "test_end", "test_fraction"});
    c.train_start = get_timestamp(windows, "train_start");
    c.train_end = get_timestamp(windows, "train_end");
    c.test_start = get_timestamp(windows, "test_start");
    c.test_end = get_timestamp(windows, "test_end");
    c.test_fraction = get_number(windows, "windows", "test_fraction", c.test_fraction);

    const auto& env = section("env");
    check_keys(env, "env", {"initial_cash", "fee_rate", "cvix_threshold", "buy_fill", "max_position_per_step"});
    c.env.initial_cash = get_number(env, "env", "initial_cash", c.env.initial_cash);
    c.env.fee_rate = get_number(env, "env", "fee_rate", c.env.fee_rate);
    c.env.cvix_threshold = get_number(env, "env", "cvix_threshold", c.env.cvix_threshold);
    const auto fill = get_or<std::string>(env, "env", "buy_fill", "skip_whole");
    if (fill == "skip_whole") c.env.buy_fill = BuyFill::SkipWhole;
    else if (fill == "pro_rata") c.env.buy_fill = BuyFill::ProRata;
    else throw ConfigError("config: [env] buy_fill must be skip_whole or pro_rata");
    if (env.contains("max_position_per_step")) {
        c.env.max_position_per_step = get_number(env, "env", "max_position_per_step", 0.0);
    }

    const auto& features = section("features");
    check_keys(features, "features", {"candidates", "threshold", "filter"});
    c.feature_candidates = get_or<std::vector<std::string>>(features, "features", "candidates", {});
    c.correlation_threshold = get_number(features, "features", "threshold", c.correlation_threshold);
    c.correlation_filter = get_or<bool>(features, "features", "filter", c.correlation_filter);

    const auto& splits = section("splits");
    check_keys(splits, "splits", {"schemes", "scheme", "N", "k", "train_fraction", "embargo"});
    std::vector<std::string> schemes;
    if (splits.contains("scheme")) schemes.push_back(get_or<std::string>(splits, "splits", "scheme", ""));
    for (const auto& s : get_or<std::vector<std::string>>(splits, "splits", "schemes", {})) {
        if (std::find(schemes.begin(), schemes.end(), s) == schemes.end()) schemes.push_back(s);
    }
    if (!schemes.empty()) {
        c.schemes.clear();
        for (const auto& s : schemes) c.schemes.push_back(as_config_error([&] { return parse_split_scheme(s); }));
    }
    c.num_groups = get_count(splits, "splits", "N", c.num_groups);
    c.validation_groups = get_count(splits, "splits", "k", c.validation_groups);
    c.train_fraction = get_number(splits, "splits", "train_fraction", c.train_fraction);
    c.embargo = get_count(splits, "splits", "embargo", c.embargo);

    const auto& trials = section("trials");
    check_keys(trials, "trials", {"source", "H", "sampler", "master_seed", "grid", "cem", "selection_metric"});
    const auto source = get_or<std::string>(trials, "trials", "source", "");
    if (source.empty()) c.source = c.asset_paths.empty() && c.external_trials_path ? TrialSource::External : TrialSource::Cem;
    else if (source == "cem") c.source = TrialSource::Cem;
    else if (source == "external") c.source = TrialSource::External;
    else throw ConfigError("config: [trials] source must be cem or external");
    c.num_trials = get_count(trials, "trials", "H", c.num_trials);
    c.sampler = as_config_error([&] { return parse_trial_sampler(get_or<std::string>(trials, "trials", "sampler", "random")); });
    c.master_seed = get_or<std::uint64_t>(trials, "trials", "master_seed", c.master_seed);
    c.selection_metric = as_config_error(
        [&] { return parse_pbo_metric(get_or<std::string>(trials, "trials", "selection_metric", "sharpe")); });
    if (trials.contains("grid")) {
        const auto& g = trials.at("grid");
        if (!g.is_object()) throw ConfigError("config: [trials.grid] must be a table");
        HyperparameterGrid grid;
        // Known axes keep their canonical order; the rest follow by name.
        std::vector<std::string> order;
        for (const auto& [name, values] : default_hyperparameter_grid().axes) {
            if (g.contains(name)) order.push_back(name);
        }
        for (const auto& [name, values] : g.items()) {
            if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
        }
        for (const auto& name : order) {
            const auto& v = g.at(name);
            if (!v.is_array() || v.empty()) throw ConfigError("config: [trials.grid] " + name + " must be a non-empty list");
            std::vector<double> values;
            for (const auto& x : v) {
                if (!x.is_number()) throw ConfigError("config: [trials.grid] " + name + " must hold numbers");
                values.push_back(x.get<double>());
            }
            grid.axes.emplace_back(name, std::move(values));
        }
        c.grid = std::move(grid);
    }
    if (trials.contains("cem")) {
        const auto& s = trials.at("cem");
        check_keys(s, "trials.cem",
                   {"population_divisor", "width_divisor", "horizon_divisor", "rate_scale", "elite_fraction", "init_std",
                    "min_std", "rebalance_band"});
        auto& k = c.scaling;
        k.population_divisor = get_number(s, "trials.cem", "population_divisor", k.population_divisor);
        k.width_divisor = get_number(s, "trials.cem", "width_divisor", k.width_divisor);
        k.horizon_divisor = get_number(s, "trials.cem", "horizon_divisor", k.horizon_divisor);
        k.rate_scale = get_number(s, "trials.cem", "rate_scale", k.rate_scale);
        k.elite_fraction = get_number(s, "trials.cem", "elite_fraction", k.elite_fraction);
        k.init_std = get_number(s, "trials.cem", "init_std", k.init_std);
        k.min_std = get_number(s, "trials.cem", "min_std", k.min_std);
        k.rebalance_band = get_number(s, "trials.cem", "rebalance_band", k.rebalance_band);
    }

    const auto& pbo = section("pbo");
    check_keys(pbo, "pbo", {"S", "metric", "alpha", "mode", "samples", "seed", "cap", "bins"});
    c.pbo.num_blocks = get_count(pbo, "pbo", "S", c.pbo.num_blocks);
    c.pbo.metric = as_config_error([&] { return parse_pbo_metric(get_or<std::string>(pbo, "pbo", "metric", "sharpe")); });
    c.pbo.alpha = get_number(pbo, "pbo", "alpha", c.pbo.alpha);
    const auto mode = get_or<std::string>(pbo, "pbo", "mode", "auto");
    if (mode == "auto") c.pbo.mode = PboMode::Auto;
    else if (mode == "exhaustive") c.pbo.mode = PboMode::Exhaustive;
    else if (mode == "sampled") c.pbo.mode = PboMode::Sampled;
    else throw ConfigError("config: [pbo] mode must be auto, exhaustive or sampled");
    c.pbo.samples = get_count(pbo, "pbo", "samples", c.pbo.samples);
    c.pbo.seed = get_or<std::uint64_t>(pbo, "pbo", "seed", c.pbo.seed);
    c.pbo.cap = get_count(pbo, "pbo", "cap", c.pbo.cap);
    c.pbo.histogram_bins = get_count(pbo, "pbo", "bins", c.pbo.histogram_bins);

    const auto& report = section("report");
    check_keys(report, "report", {"benchmarks", "test_all_trials"});
    if (report.contains("benchmarks")) {
        c.benchmarks.clear();
        for (const auto& b : get_or<std::vector<std::string>>(report, "report", "benchmarks", {})) {
            const auto kind = as_config_error([&] { return parse_agent_kind(b); });
            if (kind == AgentKind::CemPolicy || kind == AgentKind::External) {
                throw ConfigError("config: [report] benchmarks take baseline agents only");
            }
            c.benchmarks.push_back(kind);
        }
    }
    c.test_all_trials = get_or<bool>(report, "report", "test_all_trials", c.test_all_trials);

    const auto& output = section("output");
    check_keys(output, "output", {"dir", "test_all_trials"});
    c.output_dir = get_or<std::string>(output, "output", "dir", c.output_dir.string());
    c.test_all_trials = get_or<bool>(output, "output", "test_all_trials", c.test_all_trials);

    c.validate();
    return c;
}

ExperimentConfig parse_config_toml(std::string_view text, const std::filesystem::path& base_dir) {
    toml::table table;
    try {
        table = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "config: " << e.description() << " (line " << e.source().begin.line << ")";
        throw ConfigError(msg.str());
    }
    std::ostringstream as_json;
    as_json << toml::json_formatter{table};
    return parse_config_json(json::parse(as_json.str()), base_dir);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    const auto text = io::read_file(path);
    const auto base = path.parent_path();
    if (path.extension() == ".json") {
        try {
            return parse_config_json(json::parse(text), base);
        } catch (const json::parse_error& e) {
            throw ConfigError("config: " + std::string(e.what()));
        }
    }
    return parse_config_toml(text, base);
}

std::vector<HyperparameterSet> sample_trials(const HyperparameterGrid& grid, std::size_t num_trials,
                                             TrialSampler sampler, std::uint64_t master_seed,
                                             std::vector<std::string>* warnings) {
    const std::size_t card = grid.cardinality();
    if (card == 0) throw std::invalid_argument("sample_trials: empty grid");
    if (num_trials == 0) throw std::invalid_argument("sample_trials: H must be positive");
    if (num_trials > card) {
        throw std::invalid_argument("sample_trials: H = " + std::to_string(num_trials) + " exceeds the grid size " +
                                    std::to_string(card));
    }
    if (num_trials < 50 && warnings) {
        const double coverage = 1.0 - std::pow(0.95, static_cast<double>(num_trials));
        warnings->push_back("H = " + std::to_string(num_trials) + " < 50: chance of including a top-5% configuration is " +
                            io::format_double(std::round(coverage * 1000.0) / 1000.0) +
                            "; H = 50 gives 1 - 0.95^50 = 0.923 >= 0.9");
    }
    std::vector<std::uint64_t> indices;
    if (sampler == TrialSampler::Grid) {
        for (std::size_t i = 0; i < num_trials; ++i) indices.push_back(i * card / num_trials);
    } else {
        Rng rng(mix_seed(master_seed));
        indices = sample_without_replacement(rng, card, num_trials);
    }
    std::vector<HyperparameterSet> out;
    out.reserve(num_trials);
    for (auto i : indices) out.push_back(grid.at(static_cast<std::size_t>(i)));
    return out;
}

// ---------------------------------------------------------------------------

ExperimentInputs read_inputs(const ExperimentConfig& config) {
    auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() ? p : config.base_dir / p; };
    auto read = [&](const std::filesystem::path& p) {
        const auto full = resolve(p);
        if (!std::filesystem::exists(full)) throw ConfigError("referenced file does not exist: " + full.string());
        return io::read_file(full);
    };
    ExperimentInputs in;
    for (std::size_t i = 0; i < config.asset_paths.size(); ++i) {
        const auto& p = config.asset_paths[i];
        const auto name = i < config.asset_names.size() ? config.asset_names[i] : p.stem().string();
        const auto text = read(p);
        in.assets.push_back(parse_bars_csv(text, config.schema, name, resolve(p).string()));
        in.hashes["asset:" + name] = io::sha256_hex(text);
    }
    if (config.cvix_path) {
        in.cvix_csv = read(*config.cvix_path);
        in.hashes["cvix"] = io::sha256_hex(*in.cvix_csv);
    }
    if (config.index_path) {
        in.index_csv = read(*config.index_path);
        in.hashes["index"] = io::sha256_hex(*in.index_csv);
    }
    if (config.external_trials_path) {
        in.external_csv = read(*config.external_trials_path);
        in.hashes["external_trials"] = io::sha256_hex(*in.external_csv);
    }
    return in;
}

ExperimentData prepare_data(const ExperimentConfig& config, const ExperimentInputs& inputs) {
    ExperimentData d;
    d.hashes = inputs.hashes;
    if (inputs.external_csv) d.external = parse_external_trials(*inputs.external_csv, "external_trials");
    if (inputs.assets.empty()) {
        if (config.source == TrialSource::Cem) throw ConfigError("no asset data for the trainable agent");
        return d;
    }

    auto aligned = align(inputs.assets, config.min_rows);
    d.dropped_rows = aligned.dropped_rows;
    auto panel = std::make_shared<const Panel>(std::move(aligned.panel));
    const std::size_t T = panel->num_steps();
    const auto candidates = config.feature_candidates.empty() ? canonical_feature_names() : config.feature_candidates;
    const auto full = as_config_error([&] { return compute_features(*panel, candidates); });

    const std::size_t split_row = T - static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(T)));
    std::size_t train_begin = config.train_start ? panel->lower_bound(*config.train_start) : 0;
    const std::size_t train_end = config.train_end ? panel->lower_bound(*config.train_end) : split_row;
    const std::size_t test_begin = config.test_start ? panel->lower_bound(*config.test_start) : train_end;
    const std::size_t test_end = config.test_end ? panel->lower_bound(*config.test_end) : T;
    train_begin = std::max(train_begin, full.warmup);
    if (train_end <= train_begin || train_end - train_begin < 2) {
        throw DataError("training window holds fewer than 2 usable rows after the indicator warm-up (" +
                        std::to_string(full.warmup) + " rows)");
    }
    if (test_end <= test_begin || test_end - test_begin < 2) throw DataError("test window holds fewer than 2 rows");
    if (test_begin < train_end) throw ConfigError("test window overlaps the training window");
    d.train = {train_begin, train_end};
    d.test = {test_begin, test_end};

    // Feature selection sees training rows only.
    const auto train_rows = slice_rows(full, train_begin, train_end);
    if (config.correlation_filter) {
        d.correlation = filtered_report(train_rows, config.correlation_threshold);
    } else {
        d.correlation = pearson_matrix(train_rows);
        d.correlation.threshold = config.correlation_threshold;
        d.correlation.kept = d.correlation.feature_names;
    }
    d.features = std::make_shared<const FeatureMatrix>(select_features(full, d.correlation.kept));

    if (inputs.cvix_csv) d.cvix = align_cvix(*inputs.cvix_csv, *panel, "cvix");
    if (inputs.index_csv) d.index = align_cvix(*inputs.index_csv, *panel, "index");
    d.panel = std::move(panel);
    return d;
}

ExperimentData load_experiment_data(const ExperimentConfig& config) { return prepare_data(config, read_inputs(config)); }

// ---------------------------------------------------------------------------

Verdict ExperimentReport::verdict() const { return families.empty() ? Verdict::Accept : families.front().pbo.verdict; }

json ExperimentReport::body() const {
    json j;
    j["config"] = config;
    j["inputs"] = input_hashes;
    j["assets"] = assets;
    json corr = {{"candidates", correlation.feature_names},
                 {"matrix", correlation.matrix},
                 {"threshold", correlation.threshold},
                 {"kept", correlation.kept}};
    corr["dropped"] = json::array();
    for (const auto& d : correlation.dropped) {
        corr["dropped"].push_back({{"feature", d.feature}, {"partner", d.partner}, {"rho", d.rho}});
    }
    j["features"] = features;
    j["correlation"] = corr;
    j["windows"] = {{"train", window_to_json(train, panel_timestamps)}, {"test", window_to_json(test, panel_timestamps)}};

    j["trials"] = json::array();
    for (const auto& t : trials) {
        json r = {{"id", t.id}, {"hyperparameters", t.hyperparameters}, {"seed", t.seed}, {"mean_metric", t.mean_metric}};
        r["validation"] = json::array();
        for (const auto& m : t.split_metrics) r["validation"].push_back(perf_to_json(m));
        if (t.test_metrics) r["test"] = perf_to_json(*t.test_metrics);
        j["trials"].push_back(r);
    }
    j["families"] = json::array();
    for (const auto& f : families) {
        json r = json::parse(pbo_result_to_json(f.pbo));
        r["name"] = f.name;
        r["rows"] = f.matrix.num_rows;
        j["families"].push_back(r);
    }
    if (selected) {
        const auto& t = trials[*selected];
        j["selected"] = {{"index", *selected},
                         {"id", t.id},
                         {"hyperparameters", t.hyperparameters},
                         {"seed", t.seed},
                         {"mean_metric", t.mean_metric}};
    }
    j["strategies"] = json::array();
    for (const auto& s : strategies) {
        json r = perf_to_json(s.metrics);
        r["name"] = s.name;
        r["final_value"] = s.equity.empty() ? 0.0 : s.equity.back();
        r["trades"] = s.trades.size();
        j["strategies"].push_back(r);
    }
    j["verdict"] = to_string(verdict());
    j["warnings"] = warnings;
    j["not_reproduced"] = kNotReproduced;
    return j;
}

json ExperimentReport::to_json() const {
    json j = body();
    j["content_hash"] = content_hash;
    return j;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentData& data, std::size_t jobs) {
    ExperimentReport report;
    report.config = config.to_json();
    report.input_hashes = data.hashes;
    report.train = data.train;
    report.test = data.test;
    if (data.panel) {
        report.assets = data.panel->assets();
        report.features = data.features->feature_names;
        report.correlation = data.correlation;
        report.panel_timestamps = data.panel->timestamps();
    }

    EnvConfig train_env_config = config.env;
    train_env_config.cvix.reset();
    EnvConfig test_env_config = config.env;
    test_env_config.cvix = data.cvix;

    if (config.source == TrialSource::Cem) {
        const auto sets = sample_trials(config.grid, config.num_trials, config.sampler, config.master_seed, &report.warnings);
        const std::size_t H = sets.size();
        for (std::size_t i = 0; i < H; ++i) {
            TrialRecord t;
            t.id = "trial_" + std::string(i < 10 ? "00" : i < 100 ? "0" : "") + std::to_string(i);
            t.hyperparameters = sets[i];
            t.seed = derive_seed(config.master_seed, i);
            report.trials.push_back(std::move(t));
        }

        const auto partition = make_partition(data.train.size(), config.num_groups);
        const auto& all_ts = data.panel->timestamps();
        const std::vector<std::int64_t> window_ts(all_ts.begin() + static_cast<std::ptrdiff_t>(data.train.begin),
                                                  all_ts.begin() + static_cast<std::ptrdiff_t>(data.train.end));

        struct Job {
            std::size_t scheme, trial, split;
        };
        std::vector<SplitPlan> plans;
        std::vector<std::vector<MaterializedSplit>> materialized;
        std::vector<Job> job_list;
        for (std::size_t s = 0; s < config.schemes.size(); ++s) {
            plans.push_back(make_plan(config.schemes[s], config));
            materialized.push_back(materialize(plans.back(), partition, config.embargo, data.train.begin));
            for (std::size_t i = 0; i < H; ++i) {
                for (std::size_t k = 0; k < plans.back().splits.size(); ++k) job_list.push_back({s, i, k});
            }
        }

        struct JobResult {
            SplitReturns returns;
            PerfMetrics metrics;
        };
        std::vector<JobResult> results(job_list.size());
        parallel_for(job_list.size(), jobs, [&](std::size_t j) {
            const auto& job = job_list[j];
            const auto& trial = report.trials[job.trial];
            try {
                const auto& ms = materialized[job.scheme][job.split];
                TradingEnv env(data.panel, data.features, train_env_config);
                auto agent = train_cem(CemHyperparameters::from_set(trial.hyperparameters), config.scaling, env, ms.train,
                                       derive_seed(trial.seed, job.split));
                auto eval = evaluate(agent, env, ms.validation);
                results[j] = {{std::move(eval.timestamps), std::move(eval.returns)}, eval.metrics};
            } catch (...) {
                rethrow_with_context(trial.id + ", " + to_string(config.schemes[job.scheme]) + " split " +
                                     std::to_string(job.split));
            }
        });

        std::size_t offset = 0;
        for (std::size_t s = 0; s < config.schemes.size(); ++s) {
            const std::size_t J = plans[s].splits.size();
            std::vector<TrialReturns> trial_returns(H);
            for (std::size_t i = 0; i < H; ++i) {
                trial_returns[i].trial_id = report.trials[i].id;
                for (std::size_t k = 0; k < J; ++k) {
                    auto& r = results[offset + i * J + k];
                    trial_returns[i].splits.push_back(r.returns);
                    if (s == 0) report.trials[i].split_metrics.push_back(r.metrics);
                }
            }
            offset += H * J;
            FamilyResult family;
            family.name = "cem/" + to_string(config.schemes[s]);
            family.matrix = build_trial_matrix(trial_returns, plans[s], partition, window_ts);
            family.pbo = estimate_pbo(family.matrix, config.pbo);
            report.families.push_back(std::move(family));
        }

        // Highest mean validation metric on the primary scheme; ties keep the lower index.
        for (auto& t : report.trials) {
            double sum = 0.0;
            for (const auto& m : t.split_metrics) sum += metric_value(m, config.selection_metric);
            t.mean_metric = sum / static_cast<double>(t.split_metrics.size());
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < H; ++i) {
            if (report.trials[i].mean_metric > report.trials[best].mean_metric) best = i;
        }
        report.selected = best;

        // Retrain on the whole training window with the trial seed, then
        // backtest on the test window under risk control.
        std::vector<std::size_t> to_test;
        if (config.test_all_trials) {
            for (std::size_t i = 0; i < H; ++i) to_test.push_back(i);
        } else {
            to_test.push_back(best);
        }
        std::vector<EpisodeResult> episodes(to_test.size());
        parallel_for(to_test.size(), jobs, [&](std::size_t j) {
            const auto& trial = report.trials[to_test[j]];
            try {
                TradingEnv train_env(data.panel, data.features, train_env_config);
                auto agent = train_cem(CemHyperparameters::from_set(trial.hyperparameters), config.scaling, train_env,
                                       {data.train}, trial.seed);
                TradingEnv test_env(data.panel, data.features, test_env_config);
                episodes[j] = run_episode(test_env, agent, data.test);
            } catch (...) {
                rethrow_with_context(trial.id + ", test backtest");
            }
        });
        for (std::size_t j = 0; j < to_test.size(); ++j) {
            report.trials[to_test[j]].test_metrics = compute_metrics(episodes[j].equity);
            if (to_test[j] == best) report.strategies.push_back(strategy_from_episode("cem_selected", episodes[j]));
        }
    }

    if (!data.external.empty()) {
        FamilyResult family;
        family.name = "external";
        family.matrix = external_trial_matrix(data.external);
        family.pbo = estimate_pbo(family.matrix, config.pbo);
        report.families.push_back(std::move(family));
    }

    if (data.panel) {
        TradingEnv bench_env(data.panel, data.features, train_env_config);
        for (auto kind : config.benchmarks) {
            AgentSpec spec{kind, {}, derive_seed(config.master_seed, 0x62656E6368ULL), {}};
            auto agent = make_agent(spec, bench_env, {data.train}, config.scaling);
            report.strategies.push_back(strategy_from_episode(to_string(kind), run_episode(bench_env, *agent, data.test)));
        }
        if (data.index) {
            const auto& idx = *data.index;
            const double base = idx[data.test.begin];
            StrategyResult s;
            s.name = "index";
            s.has_trades = false;
            for (std::size_t t = data.test.begin; t < data.test.end; ++t) {
                if (!std::isfinite(idx[t])) {
                    throw DataError("index series has no value at " + io::format_iso8601(data.panel->timestamps()[t]));
                }
                s.timestamps.push_back(data.panel->timestamps()[t]);
                s.equity.push_back(config.env.initial_cash * idx[t] / base);
            }
            s.metrics = compute_metrics(s.equity);
            report.strategies.push_back(std::move(s));
        }
    }

    if (report.families.empty()) throw ConfigError("nothing to gate: no trainable trials and no external trials");
    report.content_hash = io::sha256_hex(report.body().dump());
    return report;
}

std::map<std::string, std::string> emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    for (const auto& f : report.families) {
        if (f.pbo.lambdas.empty()) throw std::logic_error("internal error: family '" + f.name + "' has no logits to report");
    }
    if (report.families.empty()) throw std::logic_error("internal error: report has no gated family");

    std::map<std::string, std::string> manifest;
    auto put = [&](const std::string& name, const std::string& contents) {
        io::write_file(dir / name, contents);
        manifest[name] = io::sha256_hex(contents);
    };

    put("report.json", report.to_json().dump(2) + "\n");

    std::string logits = "family,index,lambda\n";
    std::vector<LogitSeries> series;
    for (const auto& f : report.families) {
        for (std::size_t i = 0; i < f.pbo.lambdas.size(); ++i) {
            logits += f.name + "," + std::to_string(i) + "," + io::format_double(f.pbo.lambdas[i]) + "\n";
        }
        series.push_back({f.name, &f.pbo});
        put("pbo_" + file_safe(f.name) + ".json", pbo_result_to_json(f.pbo));
        put("matrix_" + file_safe(f.name) + ".csv", trial_matrix_to_csv(f.matrix));
    }
    put("logits.csv", logits);
    put("logit_hist.svg", logit_histogram_svg(series));

    for (const auto& s : report.strategies) {
        put("equity_" + file_safe(s.name) + ".csv", equity_to_csv(s.timestamps, s.equity));
        if (s.has_trades) put("trades_" + file_safe(s.name) + ".csv", trades_to_csv(s.trades, report.assets));
    }

    json m = {{"content_hash", report.content_hash}, {"files", manifest}};
    io::write_file(dir / "manifest.json", m.dump(2) + "\n");
    return manifest;
}

std::string summarize_report(const json& report) {
    std::ostringstream out;
    auto pct = [](double x) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%8.2f%%", 100.0 * x);
        return std::string(buf);
    };
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %10s %10s %10s\n", "strategy", "cum.ret", "vol", "sharpe");
    out << line;
    for (const auto& s : report.at("strategies")) {
        std::snprintf(line, sizeof line, "%-16s %10s %10s %10.4f\n", s.at("name").get<std::string>().c_str(),
                      pct(s.at("cumulative_return").get<double>()).c_str(), pct(s.at("volatility").get<double>()).c_str(),
                      s.at("sharpe").get<double>());
        out << line;
    }
    out << "\n";
    std::snprintf(line, sizeof line, "%-24s %8s %8s %12s %8s\n", "family", "p", "alpha", "combinations", "verdict");
    out << line;
    for (const auto& f : report.at("families")) {
        std::snprintf(line, sizeof line, "%-24s %8.4f %8.3f %12zu %8s\n", f.at("name").get<std::string>().c_str(),
                      f.at("p").get<double>(), f.at("alpha").get<double>(), f.at("combination_count").get<std::size_t>(),
                      f.at("verdict").get<std::string>().c_str());
        out << line;
    }
    if (report.contains("selected")) {
        out << "\nselected " << report.at("selected").at("id").get<std::string>() << " (mean validation metric "
            << io::format_double(report.at("selected").at("mean_metric").get<double>()) << ")\n";
    }
    for (const auto& w : report.at("warnings")) out << "warning: " << w.get<std::string>() << "\n";
    out << "content hash " << report.value("content_hash", std::string("-")) << "\n";
    return out.str();
}

}  // namespace pboguard
