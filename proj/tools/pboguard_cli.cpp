// pboguard: hyperparameter trials, PBO gating and backtests from one config.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 gate REJECT.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pboguard/agents.hpp"
#include "pboguard/error.hpp"
#include "pboguard/harness.hpp"
#include "pboguard/indicators.hpp"
#include "pboguard/io.hpp"
#include "pboguard/pbo.hpp"
#include "pboguard/splits.hpp"
#include "pboguard/synthetic.hpp"

using namespace pboguard;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitReject = 3;

struct GlobalOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    std::string out;
};

ExperimentConfig require_config(const GlobalOptions& g) {
    if (g.config.empty()) throw ConfigError("this command needs --config");
    auto c = load_config(g.config);
    if (g.seed) c.master_seed = *g.seed;
    return c;
}

std::filesystem::path output_dir(const GlobalOptions& g, const ExperimentConfig* c) {
    if (!g.out.empty()) return g.out;
    if (c) return c->output_dir.is_absolute() ? c->output_dir : c->base_dir / c->output_dir;
    return {};
}

void print_metrics(const std::string& name, const PerfMetrics& m) {
    std::printf("%-16s cumulative_return=%.6f volatility=%.6f sharpe=%.6f\n", name.c_str(), m.cumulative_return,
                m.volatility, m.sharpe);
}

int cmd_ingest(const GlobalOptions& g, const std::vector<std::string>& csvs, std::size_t min_rows) {
    std::vector<AssetSeries> series;
    std::optional<ExperimentConfig> config;
    if (!csvs.empty()) {
        for (const auto& p : csvs) series.push_back(load_csv(p, {}, std::filesystem::path(p).stem().string()));
    } else {
        config = require_config(g);
        series = read_inputs(*config).assets;
        min_rows = config->min_rows;
    }
    const auto aligned = align(series, min_rows);
    const auto& panel = aligned.panel;
    json j = {{"assets", panel.assets()},
              {"rows", panel.num_steps()},
              {"bar_interval", panel.bar_interval()},
              {"first", io::format_iso8601(panel.timestamps().front())},
              {"last", io::format_iso8601(panel.timestamps().back())},
              {"dropped_rows", aligned.dropped_rows}};
    const auto text = j.dump(2) + "\n";
    std::cout << text;
    const auto dir = output_dir(g, config ? &*config : nullptr);
    if (!g.out.empty()) io::write_file(dir / "ingest.json", text);
    return kExitOk;
}

int cmd_features(const GlobalOptions& g) {
    const auto config = require_config(g);
    const auto data = load_experiment_data(config);
    const auto& r = data.correlation;
    std::printf("training rows %zu..%zu, threshold %.3f\n", data.train.begin, data.train.end, r.threshold);
    for (const auto& k : r.kept) std::printf("  keep %s\n", k.c_str());
    for (const auto& d : r.dropped) std::printf("  drop %s (|rho| %.4f with %s)\n", d.feature.c_str(), std::abs(d.rho), d.partner.c_str());
    std::printf("state length 1 + (I+2)*D = %zu\n", 1 + (r.kept.size() + 2) * data.panel->num_assets());
    if (!g.out.empty()) {
        io::write_file(std::filesystem::path(g.out) / "features.csv", feature_matrix_to_csv(*data.features));
        json j = {{"features", r.feature_names}, {"matrix", r.matrix}, {"threshold", r.threshold}, {"kept", r.kept}};
        j["dropped"] = json::array();
        for (const auto& d : r.dropped) j["dropped"].push_back({{"feature", d.feature}, {"partner", d.partner}, {"rho", d.rho}});
        io::write_file(std::filesystem::path(g.out) / "correlation.json", j.dump(2) + "\n");
    }
    return kExitOk;
}

int cmd_splits(const GlobalOptions& g, std::string scheme, std::size_t N, std::size_t k, double fraction,
               std::size_t rows, std::size_t embargo) {
    if (!g.config.empty()) {
        const auto c = require_config(g);
        if (scheme.empty()) scheme = to_string(c.schemes.front());
        if (N == 0) N = c.num_groups;
        if (k == 0) k = c.validation_groups;
        if (fraction == 0.0) fraction = c.train_fraction;
        if (embargo == 0) embargo = c.embargo;
    }
    if (scheme.empty()) scheme = "combinatorial";
    if (N == 0) N = 5;
    if (k == 0) k = 2;
    if (fraction == 0.0) fraction = 0.6;
    SplitPlan plan;
    switch (parse_split_scheme(scheme)) {
        case SplitScheme::Combinatorial: plan = make_combinatorial(N, k); break;
        case SplitScheme::WalkForward: plan = make_walk_forward(N, fraction); break;
        case SplitScheme::KFold: plan = make_kfold(N); break;
    }
    auto j = json::parse(split_plan_to_json(plan));
    if (rows > 0) {
        const auto splits = materialize(plan, make_partition(rows, N), embargo);
        for (std::size_t s = 0; s < splits.size(); ++s) {
            auto ranges = [](const std::vector<Window>& ws) {
                json a = json::array();
                for (const auto& w : ws) a.push_back({w.begin, w.end});
                return a;
            };
            j["splits"][s]["train_ranges"] = ranges(splits[s].train);
            j["splits"][s]["validation_ranges"] = ranges(splits[s].validation);
        }
    }
    const auto text = j.dump(2) + "\n";
    std::cout << text;
    if (!g.out.empty()) io::write_file(std::filesystem::path(g.out) / "splits.json", text);
    return kExitOk;
}

int cmd_trials(const GlobalOptions& g, std::size_t H) {
    const auto c = require_config(g);
    std::vector<std::string> warnings;
    const auto sets = sample_trials(c.grid, H ? H : c.num_trials, c.sampler, c.master_seed, &warnings);
    json j = json::array();
    for (std::size_t i = 0; i < sets.size(); ++i) {
        const auto layout = cem_layout(CemHyperparameters::from_set(sets[i]), c.scaling);
        j.push_back({{"index", i},
                     {"seed", derive_seed(c.master_seed, i)},
                     {"hyperparameters", sets[i]},
                     {"cem",
                      {{"population", layout.population},
                       {"width", layout.width},
                       {"horizon", layout.horizon},
                       {"generations", layout.generations},
                       {"update_rate", layout.update_rate}}}});
    }
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    std::cerr << "grid cardinality " << c.grid.cardinality() << "\n";
    const auto text = j.dump(2) + "\n";
    std::cout << text;
    if (!g.out.empty()) io::write_file(std::filesystem::path(g.out) / "trials.json", text);
    return kExitOk;
}

int cmd_pbo(const GlobalOptions& g, const std::string& matrix_path, PboOptions options, const std::string& mode) {
    if (mode == "exhaustive") options.mode = PboMode::Exhaustive;
    else if (mode == "sampled") options.mode = PboMode::Sampled;
    else options.mode = PboMode::Auto;
    if (g.seed) options.seed = *g.seed;
    const auto m = load_trial_matrix(matrix_path);
    const auto r = estimate_pbo(m, options);
    std::printf("rows %zu, trials %zu, S %zu, combinations %zu%s\n", m.num_rows, m.num_trials, r.num_blocks,
                r.combination_count, r.exhaustive ? "" : " (sampled)");
    std::printf("p = %.6f, alpha = %.3f -> %s\n", r.p, r.alpha, to_string(r.verdict).c_str());
    if (!g.out.empty()) {
        const std::filesystem::path dir = g.out;
        io::write_file(dir / "pbo.json", pbo_result_to_json(r));
        io::write_file(dir / "logits.csv", lambdas_to_csv(r));
        io::write_file(dir / "logit_hist.svg", logit_histogram_svg({{"trials", &r}}));
    }
    return kExitOk;
}

int cmd_gate(std::optional<double> p, const std::string& result_path, std::optional<double> alpha) {
    if (!p && result_path.empty()) throw std::invalid_argument("gate needs --p or --result");
    double value = 0.0;
    double a = alpha.value_or(0.10);
    if (p) {
        value = *p;
    } else {
        try {
            const auto j = json::parse(io::read_file(result_path));
            // Accepts a pbo.json or a full report (primary family).
            const auto& r = j.contains("families") ? j.at("families").at(0) : j;
            value = r.at("p").get<double>();
            if (!alpha) a = r.at("alpha").get<double>();
        } catch (const json::exception& e) {
            throw DataError(result_path + ": " + e.what());
        }
    }
    if (!(value >= 0.0 && value <= 1.0)) throw std::invalid_argument("gate: p must lie in [0, 1]");
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("gate: alpha must lie in (0, 1)");
    const auto v = gate(value, a);
    std::printf("p = %.6f, alpha = %.3f -> %s\n", value, a, to_string(v).c_str());
    return v == Verdict::Reject ? kExitReject : kExitOk;
}

int cmd_backtest(const GlobalOptions& g, const std::string& agent_name, const std::string& agent_json,
                 const std::vector<std::string>& hp_args, std::size_t asset) {
    const auto c = require_config(g);
    const auto data = load_experiment_data(c);
    EnvConfig env_config = c.env;
    env_config.cvix = data.cvix;
    TradingEnv env(data.panel, data.features, env_config);

    std::unique_ptr<Agent> agent;
    if (!agent_json.empty()) {
        agent = std::make_unique<CemAgent>(CemAgent::from_json(io::read_file(agent_json)));
    } else {
        const auto kind = parse_agent_kind(agent_name);
        AgentSpec spec{kind, {}, c.master_seed, {}};
        if (kind == AgentKind::CemPolicy) {
            spec.hyperparameters = CemHyperparameters{}.to_set();
            for (const auto& kv : hp_args) {
                const auto eq = kv.find('=');
                const auto v = eq == std::string::npos ? std::nullopt : io::parse_double(kv.substr(eq + 1));
                if (!v) throw std::invalid_argument("--hp expects name=value, got '" + kv + "'");
                spec.hyperparameters[kv.substr(0, eq)] = *v;
            }
            CemHyperparameters::from_set(spec.hyperparameters);
            EnvConfig train_config = c.env;
            TradingEnv train_env(data.panel, data.features, train_config);
            agent = std::make_unique<CemAgent>(train_cem(CemHyperparameters::from_set(spec.hyperparameters), c.scaling,
                                                         train_env, {data.train}, spec.seed));
        } else if (kind == AgentKind::BuyHold) {
            agent = std::make_unique<BuyHoldAgent>(asset);
        } else {
            agent = make_agent(spec, env, {data.train}, c.scaling);
        }
    }
    const auto episode = run_episode(env, *agent, data.test);
    print_metrics(agent->name(), compute_metrics(episode.equity));
    std::printf("halted steps %zu, fees %.4f, trades %zu\n", episode.halted_steps.size(), episode.total_fees,
                episode.trades.size());
    if (!g.out.empty()) {
        const std::filesystem::path dir = g.out;
        io::write_file(dir / ("equity_" + agent->name() + ".csv"), equity_to_csv(episode.timestamps, episode.equity));
        io::write_file(dir / ("trades_" + agent->name() + ".csv"), trades_to_csv(episode.trades, data.panel->assets()));
        if (auto* cem = dynamic_cast<CemAgent*>(agent.get())) io::write_file(dir / "agent.json", cem->to_json());
    }
    return kExitOk;
}

int cmd_report(const GlobalOptions& g, std::string report_path) {
    if (report_path.empty()) {
        if (g.out.empty()) throw std::invalid_argument("report needs --report or --out");
        report_path = (std::filesystem::path(g.out) / "report.json").string();
    }
    json j;
    try {
        j = json::parse(io::read_file(report_path));
        std::cout << summarize_report(j);
        return j.at("verdict").get<std::string>() == "REJECT" ? kExitReject : kExitOk;
    } catch (const json::exception& e) {
        throw DataError(report_path + ": " + e.what());
    }
}

int cmd_run(const GlobalOptions& g) {
    const auto c = require_config(g);
    const auto data = load_experiment_data(c);
    const auto report = run_experiment(c, data, g.jobs);
    const auto dir = output_dir(g, &c);
    emit_report(report, dir);
    std::cout << summarize_report(report.to_json());
    std::cout << "wrote " << dir.string() << "\n";
    return report.verdict() == Verdict::Reject ? kExitReject : kExitOk;
}

int cmd_synth(const GlobalOptions& g, SyntheticSpec spec) {
    if (g.out.empty()) throw std::invalid_argument("synth needs --out");
    if (g.seed) spec.seed = *g.seed;
    write_synthetic_dataset(make_synthetic_market(spec), g.out);
    std::cout << "wrote synthetic dataset to " << g.out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Backtest-overfitting guard for trading-agent hyperparameter searches"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "Experiment config (TOML, or JSON by extension)");
    auto* seed_opt = app.add_option("--seed", seed, "Override the master seed");
    app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "Output directory");

    int code = kExitOk;

    auto* ingest = app.add_subcommand("ingest", "Load and align OHLCV CSVs");
    std::vector<std::string> csvs;
    std::size_t min_rows = 100;
    ingest->add_option("csv", csvs, "Per-asset CSV files (default: the config's assets)");
    ingest->add_option("--min-rows", min_rows, "Minimum aligned rows");

    auto* features = app.add_subcommand("features", "Compute indicators and the correlation filter");

    auto* splits = app.add_subcommand("splits", "Print a split plan");
    std::string scheme;
    std::size_t N = 0, k = 0, rows = 0, embargo = 0;
    double fraction = 0.0;
    splits->add_option("--scheme", scheme, "combinatorial | walk_forward | kfold");
    splits->add_option("--N", N, "Number of groups");
    splits->add_option("--k", k, "Validation groups per split (combinatorial)");
    splits->add_option("--train-fraction", fraction, "Walk-forward training fraction");
    splits->add_option("--rows", rows, "Also materialize index ranges over this many rows");
    splits->add_option("--embargo", embargo, "Bars removed from training next to validation");

    auto* trials = app.add_subcommand("trials", "Sample hyperparameter trials");
    std::size_t H = 0;
    trials->add_option("--H", H, "Number of trials (default: config)");

    auto* pbo = app.add_subcommand("pbo", "Estimate the probability of backtest overfitting of a trial matrix");
    std::string matrix_path, mode = "auto";
    PboOptions options;
    std::string metric = "sharpe";
    pbo->add_option("--matrix", matrix_path, "Trial matrix CSV (timestamp, then one column per trial)")->required();
    pbo->add_option("--S", options.num_blocks, "Number of row blocks (even)");
    pbo->add_option("--metric", metric, "sharpe | cumulative_return");
    pbo->add_option("--mode", mode, "auto | exhaustive | sampled")->check(CLI::IsMember({"auto", "exhaustive", "sampled"}));
    pbo->add_option("--samples", options.samples, "Combinations to sample");
    pbo->add_option("--cap", options.cap, "Largest exhaustive enumeration");
    pbo->add_option("--alpha", options.alpha, "Significance level");
    pbo->add_option("--bins", options.histogram_bins, "Histogram bins");

    auto* gate_cmd = app.add_subcommand("gate", "Apply the hypothesis gate; exit 3 on REJECT");
    std::optional<double> p_value, alpha;
    std::string result_path;
    gate_cmd->add_option("--p", p_value, "Probability of overfitting");
    gate_cmd->add_option("--result", result_path, "pbo.json or report.json");
    gate_cmd->add_option("--alpha", alpha, "Significance level (default 0.10)");

    auto* backtest = app.add_subcommand("backtest", "Backtest one agent on the test window");
    std::string agent_name = "equal_weight", agent_json;
    std::vector<std::string> hp_args;
    std::size_t asset = 0;
    backtest->add_option("--agent", agent_name, "equal_weight | buy_hold | momentum | random | cem");
    backtest->add_option("--agent-json", agent_json, "Trained agent parameters");
    backtest->add_option("--hp", hp_args, "Hyperparameter name=value for --agent cem");
    backtest->add_option("--asset", asset, "Asset index for buy_hold");

    auto* report = app.add_subcommand("report", "Summarize a report.json");
    std::string report_path;
    report->add_option("--report", report_path, "Report file (default: <out>/report.json)");

    auto* run = app.add_subcommand("run", "Full pipeline: trials, PBO gate, retrain, test backtest, report");

    auto* synth = app.add_subcommand("synth", "Write the synthetic demo dataset and config");
    SyntheticSpec spec;
    synth->add_option("--assets", spec.num_assets, "Number of assets");
    synth->add_option("--steps", spec.num_steps, "Number of bars");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }
    if (seed_opt->count() > 0) g.seed = seed;

    try {
        if (ingest->parsed()) code = cmd_ingest(g, csvs, min_rows);
        else if (features->parsed()) code = cmd_features(g);
        else if (splits->parsed()) code = cmd_splits(g, scheme, N, k, fraction, rows, embargo);
        else if (trials->parsed()) code = cmd_trials(g, H);
        else if (pbo->parsed()) {
            options.metric = parse_pbo_metric(metric);
            code = cmd_pbo(g, matrix_path, options, mode);
        } else if (gate_cmd->parsed()) code = cmd_gate(p_value, result_path, alpha);
        else if (backtest->parsed()) code = cmd_backtest(g, agent_name, agent_json, hp_args, asset);
        else if (report->parsed()) code = cmd_report(g, report_path);
        else if (run->parsed()) code = cmd_run(g);
        else if (synth->parsed()) code = cmd_synth(g, spec);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return code;
}
