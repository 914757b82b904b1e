// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "pboguard/harness.hpp"
#include "pboguard/indicators.hpp"
#include "pboguard/pbo.hpp"
#include "pboguard/rng.hpp"
#include "pboguard/splits.hpp"
#include "pboguard/synthetic.hpp"
#include "pboguard/trading_env.hpp"
#include "pbo_oracle.hpp"

using namespace pboguard;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

// Every logit produced anywhere in the suite passes through here.
struct LogitAudit {
    std::size_t seen = 0;
    std::size_t out_of_range = 0;
    std::size_t non_finite = 0;

    void add(const PboResult& r) {
        const double bound = std::log(static_cast<double>(r.num_trials));
        for (double l : r.lambdas) {
            ++seen;
            if (!std::isfinite(l)) ++non_finite;
            else if (std::abs(l) > bound + 1e-12) ++out_of_range;
        }
    }
};

LogitAudit g_logits;

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

TrialMatrix gaussian_matrix(std::uint64_t seed, std::size_t rows, std::size_t H) {
    Rng rng(seed);
    TrialMatrix m;
    m.num_rows = rows;
    m.num_trials = H;
    for (std::size_t r = 0; r < rows; ++r) m.row_timestamps.push_back(static_cast<std::int64_t>(r));
    for (std::size_t i = 0; i < rows * H; ++i) m.values.push_back(rng.normal());
    return m;
}

TrialMatrix rows_matrix(const std::vector<std::vector<double>>& rows) {
    TrialMatrix m;
    m.num_rows = rows.size();
    m.num_trials = rows.front().size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        m.row_timestamps.push_back(static_cast<std::int64_t>(r));
        m.values.insert(m.values.end(), rows[r].begin(), rows[r].end());
    }
    return m;
}

PboOptions exhaustive(std::size_t S, PboMetric metric = PboMetric::Sharpe) {
    PboOptions o;
    o.num_blocks = S;
    o.metric = metric;
    o.mode = PboMode::Exhaustive;
    return o;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome combinatorics() {
    const auto plan = make_combinatorial(5, 2);
    std::vector<int> seen(5, 0);
    for (const auto& s : plan.splits) {
        for (auto g : s.validation_groups) ++seen[g];
    }
    const bool each_four = std::all_of(seen.begin(), seen.end(), [](int c) { return c == 4; });
    const auto m = gaussian_matrix(1, 28, 2);
    const auto blocks = partition_rows(m, 14);
    const auto r = estimate_pbo(m, exhaustive(14));
    std::set<std::vector<std::size_t>> distinct;
    for (std::size_t i = 0; i < r.combination_count; ++i) distinct.insert(unrank_combination(14, 7, i));
    g_logits.add(r);
    const bool ok = plan.num_splits() == 10 && each_four && blocks.size() == 14 && r.combination_count == 3432 &&
                    distinct.size() == 3432;
    return {ok, "J=" + std::to_string(plan.num_splits()) + ", combinations=" + std::to_string(r.combination_count) +
                    ", validations per group=" + std::to_string(seen[0])};
}

Outcome oracle_equivalence() {
    std::size_t cases = 0, verdict_mismatch = 0;
    double worst = 0.0;
    std::uint64_t seed = 5000;
    for (std::size_t S : {2, 4, 6}) {
        for (std::size_t H : {2, 3, 5}) {
            for (int rep = 0; rep < 50; ++rep) {
                Rng shape(++seed);
                const std::size_t rows = S + shape.below(10 * S);
                const auto m = gaussian_matrix(seed * 7919, rows, H);
                const auto lib = estimate_pbo(m, exhaustive(S));
                const auto ref = oracle::brute_force_pbo({m.num_rows, m.num_trials, m.values}, S, true);
                g_logits.add(lib);
                worst = std::max(worst, std::abs(lib.p - ref.p));
                if (lib.verdict != gate(ref.p, 0.10)) ++verdict_mismatch;
                ++cases;
            }
        }
    }
    return {worst <= 1e-12 && verdict_mismatch == 0,
            std::to_string(cases) + " matrices, max |dp|=" + fmt("%.3g", worst) + ", verdict mismatches=" +
                std::to_string(verdict_mismatch)};
}

Outcome calibration() {
    double total = 0.0;
    for (std::uint64_t s = 1; s <= 200; ++s) {
        const auto r = estimate_pbo(gaussian_matrix(s, 280, 10), exhaustive(14));
        g_logits.add(r);
        total += r.p;
    }
    const double mean = total / 200.0;

    // Shared noise plus a per-trial offset: the last trial leads every block at equal variance.
    Rng rng(99);
    TrialMatrix dom;
    dom.num_rows = 280;
    dom.num_trials = 10;
    for (std::size_t r = 0; r < 280; ++r) {
        const double z = rng.normal();
        for (std::size_t j = 0; j < 10; ++j) dom.values.push_back(z + 0.05 * static_cast<double>(j));
    }
    const auto d = estimate_pbo(dom, exhaustive(14));
    g_logits.add(d);

    // S=4, H=3, one row per block; every trial's block returns sum to zero.
    const auto inv = rows_matrix({{5.0, -2.0, 0.5}, {-1.0, 4.0, -3.0}, {-3.0, 1.0, 2.0}, {-1.0, -3.0, 0.5}});
    const auto i = estimate_pbo(inv, exhaustive(4, PboMetric::CumulativeReturn));
    const auto i_ref = oracle::brute_force_pbo({inv.num_rows, inv.num_trials, inv.values}, 4, false);
    g_logits.add(i);

    const bool ok = mean >= 0.45 && mean <= 0.55 && d.p == 0.0 && i.p == 1.0 && i_ref.p == 1.0;
    return {ok, "mean p=" + fmt("%.4f", mean) + " over 200 seeds, dominant p=" + fmt("%g", d.p) + ", inverted p=" +
                    fmt("%g", i.p)};
}

Outcome gate_semantics() {
    const bool ok = gate(0.175, 0.10) == Verdict::Reject && gate(0.079, 0.10) == Verdict::Accept &&
                    gate(0.10, 0.10) == Verdict::Reject;
    return {ok, "0.175 -> " + to_string(gate(0.175, 0.10)) + ", 0.079 -> " + to_string(gate(0.079, 0.10)) +
                    ", p=alpha -> " + to_string(gate(0.10, 0.10))};
}

std::shared_ptr<const FeatureMatrix> empty_features(const Panel& panel) {
    auto fm = std::make_shared<FeatureMatrix>();
    fm->assets = panel.assets();
    fm->timestamps = panel.timestamps();
    return fm;
}

std::shared_ptr<const Panel> synthetic_panel(const SyntheticSpec& spec) {
    return std::make_shared<const Panel>(align(make_synthetic_market(spec).assets, 2).panel);
}

Outcome environment_accounting() {
    std::size_t negative_cash = 0, negative_holdings = 0, reward_breaks = 0, fee_breaks = 0;
    double worst_reward = 0.0, worst_fee = 0.0;
    Rng rng(2024);
    const std::size_t episodes = 1000;
    std::shared_ptr<const Panel> panel;
    std::uint64_t panel_key = 0;
    for (std::size_t e = 0; e < episodes; ++e) {
        SyntheticSpec spec;
        spec.num_assets = 2 + e % 4;
        spec.num_steps = 150;
        spec.seed = 1 + e / 100;
        const std::uint64_t key = spec.seed * 16 + spec.num_assets;
        if (!panel || panel_key != key) {
            panel = synthetic_panel(spec);
            panel_key = key;
        }
        EnvConfig config;
        config.initial_cash = 1000.0 * (1 + e % 7);
        config.fee_rate = 0.003;
        config.buy_fill = e % 2 ? BuyFill::ProRata : BuyFill::SkipWhole;
        TradingEnv env(panel, empty_features(*panel), config);
        const std::size_t begin = rng.below(50);
        const Window w{begin, begin + 20 + rng.below(80)};
        auto s = env.reset(w);
        const double v0 = s.value();
        double rewards = 0.0, fees = 0.0, notional = 0.0;
        while (s.t + 1 < w.end) {
            ActionVector a(s.prices.size());
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double u = rng.uniform(-1.0, 1.0);
                // Mix of oversized orders and modest trades in both directions.
                a[i] = u < 0 ? u * (s.holdings[i] + rng.uniform(0.0, 2.0))
                             : u * config.initial_cash / s.prices[i] * rng.uniform(0.0, 1.5);
            }
            const auto r = env.step(s, a);
            for (std::size_t i = 0; i < a.size(); ++i) notional += s.prices[i] * std::abs(r.executed_action[i]);
            rewards += r.reward;
            fees += r.fee_paid;
            s = r.next_state;
            if (s.cash < 0.0) ++negative_cash;
            for (double h : s.holdings) {
                if (h < 0.0) ++negative_holdings;
            }
        }
        const double reward_gap = std::abs(rewards - (s.value() - v0));
        worst_reward = std::max(worst_reward, reward_gap / v0);
        if (reward_gap > 1e-6 * v0) ++reward_breaks;
        const double expected_fees = 0.003 * notional;
        const double fee_gap = expected_fees > 0 ? std::abs(fees - expected_fees) / expected_fees : std::abs(fees);
        worst_fee = std::max(worst_fee, fee_gap);
        if (fee_gap > 1e-9) ++fee_breaks;
    }
    const bool ok = negative_cash == 0 && negative_holdings == 0 && reward_breaks == 0 && fee_breaks == 0;
    return {ok, std::to_string(episodes) + " episodes, negative cash=" + std::to_string(negative_cash) +
                    ", negative holdings=" + std::to_string(negative_holdings) + ", max reward gap/v0=" +
                    fmt("%.2g", worst_reward) + ", max fee rel err=" + fmt("%.2g", worst_fee)};
}

// Buys as much as it can of every asset each step.
class GreedyAgent final : public Agent {
public:
    std::string name() const override { return "greedy"; }
    ActionVector act(const MarketState& s) override {
        ActionVector a(s.prices.size());
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.4 * s.cash / s.prices[i];
        return a;
    }
};

Outcome risk_control_check() {
    SyntheticSpec spec;
    spec.num_assets = 3;
    spec.num_steps = 600;
    const auto market = make_synthetic_market(spec);
    auto panel = std::make_shared<const Panel>(align(market.assets, 2).panel);
    EnvConfig config;
    config.initial_cash = 10000.0;
    config.cvix = align_cvix(time_values_to_csv(market.cvix), *panel, "cvix");
    config.buy_fill = BuyFill::ProRata;
    const auto& cvix = *config.cvix;
    TradingEnv env(panel, empty_features(*panel), config);

    auto s = env.reset({0, panel->num_steps()});
    GreedyAgent agent;
    std::size_t halted = 0, held_while_halted = 0, bought_while_halted = 0, resumed = 0, early_resume = 0;
    std::size_t flag_mismatch = 0;
    bool was_halted = false;
    while (s.t + 1 < panel->num_steps()) {
        if ((cvix[s.t] > config.cvix_threshold) != s.risk_halt) ++flag_mismatch;
        const auto r = env.step(s, agent.act(s));
        bool bought = false;
        for (const auto& t : r.trades) bought = bought || t.qty > 0.0;
        if (s.risk_halt) {
            ++halted;
            for (double h : r.next_state.holdings) {
                if (h != 0.0) ++held_while_halted;
            }
            if (bought) ++bought_while_halted;
            was_halted = true;
        } else if (was_halted && bought) {
            ++resumed;
            if (cvix[s.t] > config.cvix_threshold) ++early_resume;
            was_halted = false;
        }
        s = r.next_state;
    }
    const bool ok = halted > 0 && held_while_halted == 0 && bought_while_halted == 0 && resumed > 0 &&
                    early_resume == 0 && flag_mismatch == 0;
    return {ok, std::to_string(halted) + " halted steps, holdings after halted steps=" +
                    std::to_string(held_while_halted) + ", buys while halted=" + std::to_string(bought_while_halted) +
                    ", resumptions below threshold=" + std::to_string(resumed)};
}

Outcome state_shape() {
    SyntheticSpec spec;
    spec.num_assets = 10;
    spec.num_steps = 20;
    auto panel = synthetic_panel(spec);
    auto fm = std::make_shared<FeatureMatrix>();
    for (int i = 0; i < 6; ++i) fm->feature_names.push_back("f" + std::to_string(i));
    fm->assets = panel->assets();
    fm->timestamps = panel->timestamps();
    fm->values.assign(panel->num_steps() * 6 * 10, 0.0);
    TradingEnv env(panel, fm, EnvConfig{});
    const auto n = env.reset({0, 20}).flatten().size();
    return {n == 81, "D=10, I=6 -> state length " + std::to_string(n)};
}

Outcome indicator_oracles() {
    auto on_close = [](const std::vector<double>& c, const char* spec) {
        return compute_indicator(c, c, c, std::vector<double>(c.size(), 1.0), IndicatorSpec::parse(spec));
    };
    std::vector<double> up, flat(80, 5.0), wave;
    for (int t = 0; t < 80; ++t) up.push_back(10.0 + 0.25 * t);
    for (int t = 0; t < 500; ++t) wave.push_back(100.0 + 10.0 * std::sin(2.0 * std::numbers::pi * t / 20.0));
    const auto rsi = on_close(up, "rsi:14");
    const auto roc = on_close(flat, "roc:10");
    const auto ht = on_close(wave, "ht");
    bool rsi_ok = true, roc_ok = true;
    for (std::size_t t = rsi.warmup; t < up.size(); ++t) rsi_ok = rsi_ok && rsi.values[t] == 100.0;
    for (std::size_t t = roc.warmup; t < flat.size(); ++t) roc_ok = roc_ok && roc.values[t] == 0.0;
    double worst = 0.0;
    for (std::size_t t = 200; t < wave.size(); ++t) worst = std::max(worst, std::abs(ht.values[t] - 20.0) / 20.0);
    return {rsi_ok && roc_ok && worst <= 0.10, std::string("RSI=100 ") + (rsi_ok ? "yes" : "no") + ", ROC=0 " +
                                                   (roc_ok ? "yes" : "no") + ", HT max rel err=" + fmt("%.4f", worst)};
}

Outcome determinism() {
    const fs::path config_path = fs::path(PBOGUARD_SOURCE_DIR) / "data" / "synthetic" / "config.toml";
    const auto config = load_config(config_path);
    const auto data = load_experiment_data(config);
    const auto one = run_experiment(config, data, 1);
    const auto eight = run_experiment(config, data, 8);
    for (const auto& f : one.families) g_logits.add(f.pbo);
    return {one.content_hash == eight.content_hash && !one.content_hash.empty(),
            "jobs 1: " + one.content_hash.substr(0, 16) + ", jobs 8: " + eight.content_hash.substr(0, 16)};
}

Outcome smoke() {
    const fs::path root = fs::temp_directory_path() / "pboguard_acceptance_smoke";
    std::size_t wins = 0, accepted = 0, accepted_wins = 0;
    std::string seeds_lost;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SyntheticSpec spec;
        spec.seed = seed;
        const fs::path dir = root / ("seed_" + std::to_string(seed));
        fs::remove_all(dir);
        write_synthetic_dataset(make_synthetic_market(spec), dir);
        auto config = load_config(dir / "config.toml");
        config.master_seed = seed;
        config.test_all_trials = true;
        const auto report = run_experiment(config, load_experiment_data(config), worker_count());
        for (const auto& f : report.families) g_logits.add(f.pbo);

        std::vector<double> tests;
        for (const auto& t : report.trials) tests.push_back(t.test_metrics->cumulative_return);
        std::sort(tests.begin(), tests.end());
        const std::size_t n = tests.size();
        const double median = n % 2 ? tests[n / 2] : 0.5 * (tests[n / 2 - 1] + tests[n / 2]);
        const double chosen = report.trials[*report.selected].test_metrics->cumulative_return;
        const bool win = chosen >= median;
        const bool accept = report.verdict() == Verdict::Accept;
        wins += win;
        accepted += accept;
        accepted_wins += accept && win;
        if (!win) seeds_lost += (seeds_lost.empty() ? "" : ",") + std::to_string(seed);
    }
    fs::remove_all(root);
    return {wins >= 12, std::to_string(wins) + "/20 selected >= median (ACCEPT verdicts: " + std::to_string(accepted) +
                            ", of which " + std::to_string(accepted_wins) + " >= median; below median: seeds " +
                            seeds_lost + ")"};
}

Outcome logit_bounds() {
    return {g_logits.seen > 0 && g_logits.out_of_range == 0 && g_logits.non_finite == 0,
            std::to_string(g_logits.seen) + " logits audited, out of range=" + std::to_string(g_logits.out_of_range) +
                ", non-finite=" + std::to_string(g_logits.non_finite)};
}

struct Criterion {
    const char* name;
    double budget_seconds;  // 0: no runtime bound
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    // Logit bounds is audited last, over every run made by the others.
    const std::vector<Criterion> criteria = {
        {"combinatorics", 1.0, combinatorics},
        {"pbo_oracle_equivalence", 30.0, oracle_equivalence},
        {"pbo_calibration", 120.0, calibration},
        {"gate_semantics", 0.0, gate_semantics},
        {"environment_accounting", 60.0, environment_accounting},
        {"risk_control", 0.0, risk_control_check},
        {"state_shape", 0.0, state_shape},
        {"indicator_oracles", 0.0, indicator_oracles},
        {"determinism", 0.0, determinism},
        {"smoke_selected_vs_median", 0.0, smoke},
        {"logit_bounds", 0.0, logit_bounds},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_seconds > 0 && seconds >= c.budget_seconds) {
            o.pass = false;
            o.detail += "; over the " + fmt("%g", c.budget_seconds) + " s budget";
        }
        std::printf("%s %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.name, seconds, o.detail.c_str());
        std::fflush(stdout);
        failures += !o.pass;
    }
    std::printf("NOTE table-level absolute returns and volatilities are not reproduced; the smoke criterion stands in\n");
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
