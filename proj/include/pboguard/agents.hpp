#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pboguard/pbo.hpp"
#include "pboguard/rng.hpp"
#include "pboguard/trading_env.hpp"

namespace pboguard {

// Named hyperparameter values; ordered by name.
using HyperparameterSet = std::map<std::string, double>;

// Cartesian grid of named axes. Enumeration order: the last axis varies fastest.
struct HyperparameterGrid {
    std::vector<std::pair<std::string, std::vector<double>>> axes;

    std::size_t cardinality() const;
    HyperparameterSet at(std::size_t index) const;
    bool contains(const HyperparameterSet& set) const;
};

// Learning rate, batch size, gamma, net dimension, target step, break step:
// 5 * 4 * 5 * 3 * 3 * 3 = 2700 combinations.
HyperparameterGrid default_hyperparameter_grid();

enum class AgentKind { EqualWeight, BuyHold, Momentum, Random, CemPolicy, External };

std::string to_string(AgentKind kind);
AgentKind parse_agent_kind(const std::string& name);

struct AgentSpec {
    AgentKind kind = AgentKind::CemPolicy;
    HyperparameterSet hyperparameters;
    std::uint64_t seed = 0;
    std::filesystem::path external_path;  // EXTERNAL only
};

struct PerfMetrics {
    double cumulative_return = 0.0;  // (v_T - v_0) / v_0
    double volatility = 0.0;         // population std of simple returns
    double sharpe = 0.0;             // mean / std of simple returns, 0 when std is 0
};

// Metrics of an equity curve v_0..v_T.
PerfMetrics compute_metrics(std::span<const double> equity);

// ---------------------------------------------------------------------------
// Benchmarks

// Splits the initial cash equally across all assets on the first step, then holds.
class EqualWeightAgent final : public Agent {
public:
    std::string name() const override { return "equal_weight"; }
    void begin_episode(const EpisodeContext& context) override;
    ActionVector act(const MarketState& state) override;

private:
    EpisodeContext context_;
    bool invested_ = false;
};

// Puts all cash into one asset on the first step, then holds.
class BuyHoldAgent final : public Agent {
public:
    explicit BuyHoldAgent(std::size_t asset = 0) : asset_(asset) {}
    std::string name() const override { return "buy_hold"; }
    void begin_episode(const EpisodeContext& context) override;
    ActionVector act(const MarketState& state) override;

private:
    std::size_t asset_;
    EpisodeContext context_;
    bool invested_ = false;
};

// Equal weight over the assets whose close rose on the last bar; cash otherwise.
class MomentumAgent final : public Agent {
public:
    explicit MomentumAgent(double rebalance_band = 0.02) : band_(rebalance_band) {}
    std::string name() const override { return "momentum"; }
    void begin_episode(const EpisodeContext& context) override;
    ActionVector act(const MarketState& state) override;

private:
    double band_;
    EpisodeContext context_;
    std::vector<double> last_prices_;
};

// Uniform random trades; reseeded at every episode start so reruns match.
class RandomAgent final : public Agent {
public:
    explicit RandomAgent(std::uint64_t seed, double intensity = 0.5) : seed_(seed), intensity_(intensity), rng_(seed) {}
    std::string name() const override { return "random"; }
    void begin_episode(const EpisodeContext& context) override;
    ActionVector act(const MarketState& state) override;

private:
    std::uint64_t seed_;
    double intensity_;
    Rng rng_;
    EpisodeContext context_;
};

// Converts target portfolio weights (assets, then cash) into an order vector:
// sells first, buys scaled to the cash available after sells and fees.
ActionVector rebalance_to_weights(const MarketState& state, std::span<const double> weights, double fee_rate,
                                  double band);

// ---------------------------------------------------------------------------
// Trainable agent: softmax allocation over a shared linear score of random
// tanh features plus a per-asset bias, optimized by the cross-entropy method.

struct CemHyperparameters {
    double step_size = 7.5e-3;
    double batch_size = 512;
    double gamma = 0.95;
    double net_dimension = 1024;
    double target_step = 2500;
    double break_step = 30000;

    static CemHyperparameters from_set(const HyperparameterSet& set);
    HyperparameterSet to_set() const;
};

// Maps the hyperparameter names onto the search: population = batch_size /
// population_divisor, feature width = net_dimension / width_divisor, rollout
// horizon = target_step / horizon_divisor, update rate = step_size * rate_scale
// (capped at 1), total environment steps = break_step.
struct CemScaling {
    double population_divisor = 128;
    double width_divisor = 64;
    double horizon_divisor = 50;
    double rate_scale = 20;
    double elite_fraction = 0.2;
    double init_std = 1.0;
    double min_std = 0.05;
    double rebalance_band = 0.02;
};

struct CemLayout {
    std::size_t population = 0;
    std::size_t width = 0;
    std::size_t horizon = 0;
    std::size_t generations = 0;
    double update_rate = 0.0;
};

CemLayout cem_layout(const CemHyperparameters& hp, const CemScaling& scaling);

struct CemParameters {
    std::size_t num_features = 0;              // I
    std::size_t num_assets = 0;                // D
    std::size_t width = 0;                     // W
    std::vector<double> projection;            // W x (I + 2)
    std::vector<double> theta;                 // W feature weights, D asset biases, cash logit
    std::vector<double> feature_mean;          // I
    std::vector<double> feature_scale;         // I
    double rebalance_band = 0.02;
};

class CemAgent final : public Agent {
public:
    CemAgent() = default;
    explicit CemAgent(CemParameters params) : params_(std::move(params)), trained_(true) {}

    std::string name() const override { return "cem"; }
    void begin_episode(const EpisodeContext& context) override;
    ActionVector act(const MarketState& state) override;

    bool trained() const { return trained_; }
    const CemParameters& parameters() const { return params_; }
    // Target weights (assets, then cash) for a state.
    std::vector<double> target_weights(const MarketState& state) const;

    std::string to_json() const;
    static CemAgent from_json(const std::string& text);

private:
    CemParameters params_;
    bool trained_ = false;
    EpisodeContext context_;
};

struct CemTrainingLog {
    std::vector<double> best_score;  // per generation
    std::vector<double> mean_score;
    std::size_t env_steps = 0;
};

// Searches policy parameters maximizing mean discounted episode return over
// rollouts drawn from the training windows. Deterministic in `seed`.
CemAgent train_cem(const CemHyperparameters& hp, const CemScaling& scaling, TradingEnv& env,
                   const std::vector<Window>& train_windows, std::uint64_t seed, CemTrainingLog* log = nullptr);

// Baselines are returned untrained; CEM_POLICY is trained on `train_windows`.
std::unique_ptr<Agent> make_agent(const AgentSpec& spec, TradingEnv& env, const std::vector<Window>& train_windows,
                                  const CemScaling& scaling = {});

struct Evaluation {
    std::vector<std::int64_t> timestamps;
    std::vector<double> returns;  // v_t - v_{t-1}; 0 on the first step of each episode
    std::vector<EpisodeResult> episodes;
    std::vector<PerfMetrics> episode_metrics;
    PerfMetrics metrics;  // over the chained simple returns of all episodes
};

// Replays each validation window as its own episode from fresh cash.
Evaluation evaluate(Agent& agent, TradingEnv& env, const std::vector<Window>& validation_windows);

// CSV columns trial_id, split_id, timestamp, return. Trials appear in order of
// first occurrence; every trial must cover the same (split, timestamp) cells.
std::vector<TrialReturns> import_external_trials(const std::filesystem::path& path);
std::vector<TrialReturns> parse_external_trials(std::string_view text, std::string_view source = "<memory>");

}  // namespace pboguard
