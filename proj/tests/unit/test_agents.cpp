#include <gtest/gtest.h>

#include <cmath>

#include "pboguard/agents.hpp"
#include "pboguard/error.hpp"
#include "test_util.hpp"

using namespace pboguard;
using namespace pboguard::testing;

namespace {

TradingEnv make_env(const std::vector<std::vector<double>>& closes, EnvConfig config = plain_config(),
                    std::size_t I = 1) {
    auto panel = make_panel(closes);
    auto fm = zero_features(*panel, I);
    return TradingEnv(panel, fm, std::move(config));
}

std::vector<double> geometric(double start, double growth, std::size_t n) {
    std::vector<double> p = {start};
    while (p.size() < n) p.push_back(p.back() * growth);
    return p;
}

std::vector<double> wiggle(std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    std::vector<double> p = {50.0};
    while (p.size() < n) p.push_back(p.back() * std::exp(0.01 * rng.normal()));
    return p;
}

CemHyperparameters small_hp(double break_step = 4000) {
    CemHyperparameters hp;
    hp.step_size = 0.05;
    hp.batch_size = 512;
    hp.gamma = 0.99;
    hp.net_dimension = 128;
    hp.target_step = 500;
    hp.break_step = break_step;
    return hp;
}

}  // namespace

TEST(Grid, DefaultCardinalityAndOrder) {
    const auto grid = default_hyperparameter_grid();
    EXPECT_EQ(grid.cardinality(), 2700u);
    ASSERT_EQ(grid.axes.size(), 6u);
    const auto first = grid.at(0), second = grid.at(1);
    const auto& last_axis = grid.axes.back();
    EXPECT_EQ(second.at(last_axis.first), last_axis.second[1]);
    for (const auto& [name, values] : grid.axes) {
        if (name != last_axis.first) EXPECT_EQ(first.at(name), second.at(name));
    }
    EXPECT_TRUE(grid.contains(grid.at(2699)));
    auto outside = grid.at(5);
    outside.begin()->second = -1.0;
    EXPECT_FALSE(grid.contains(outside));
    EXPECT_THROW(grid.at(2700), std::out_of_range);
}

TEST(Agents, KindNames) {
    for (auto k : {AgentKind::EqualWeight, AgentKind::BuyHold, AgentKind::Momentum, AgentKind::Random,
                   AgentKind::CemPolicy, AgentKind::External}) {
        EXPECT_EQ(parse_agent_kind(to_string(k)), k);
    }
    EXPECT_THROW(parse_agent_kind("ppo"), std::invalid_argument);
}

TEST(Agents, EqualWeightSplitsCashNetOfFee) {
    auto env = make_env({{10, 10, 11}, {20, 20, 19}});
    EqualWeightAgent agent;
    const auto ep = run_episode(env, agent, {0, 3});
    auto s = env.reset({0, 3});
    EqualWeightAgent again;
    again.begin_episode({2, 1, 0.003, 1000.0, {0, 3}});
    const auto a = again.act(s);
    EXPECT_NEAR(a[0], 500.0 / (10.0 * 1.003), 1e-6);
    EXPECT_NEAR(a[1], 500.0 / (20.0 * 1.003), 1e-6);
    EXPECT_NEAR(a[0], 49.85, 5e-3);
    EXPECT_NEAR(a[1], 24.925, 5e-3);

    const auto r = env.step(s, a);
    const double fee_quantum = 0.003 * 500.0;
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_LE(std::abs(r.next_state.holdings[i] * r.next_state.prices[i] - 500.0), fee_quantum);
    }
    // Holds afterwards.
    EXPECT_EQ(ep.trades.size(), 2u);
}

TEST(Agents, BuyHoldIsIdleAfterFirstStep) {
    auto env = make_env({geometric(10, 1.01, 20)});
    BuyHoldAgent agent(0);
    agent.begin_episode({1, 1, 0.003, 1000.0, {0, 20}});
    auto s = env.reset({0, 20});
    auto a = agent.act(s);
    EXPECT_GT(a[0], 0.0);
    for (int t = 0; t < 18; ++t) {
        s = env.step(s, a).next_state;
        a = agent.act(s);
        EXPECT_EQ(a, ActionVector{0.0});
    }
}

TEST(Agents, RandomAgentReplaysWithSameSeed) {
    auto env = make_env({wiggle(1, 60), wiggle(2, 60)});
    RandomAgent a(77), b(77), c(78);
    const auto x = run_episode(env, a, {0, 60});
    const auto y = run_episode(env, b, {0, 60});
    const auto again = run_episode(env, a, {0, 60});
    const auto z = run_episode(env, c, {0, 60});
    EXPECT_EQ(x.equity, y.equity);
    EXPECT_EQ(x.equity, again.equity);
    EXPECT_NE(x.equity, z.equity);
}

TEST(Agents, MomentumActionsFinite) {
    auto env = make_env({wiggle(3, 80), wiggle(4, 80), wiggle(5, 80)});
    MomentumAgent agent;
    const auto ep = run_episode(env, agent, {0, 80});
    for (double v : ep.equity) EXPECT_TRUE(std::isfinite(v));
    EXPECT_FALSE(ep.trades.empty());
}

TEST(Cem, LayoutFromHyperparameters) {
    const auto layout = cem_layout(CemHyperparameters{}, CemScaling{});
    EXPECT_EQ(layout.population, 4u);
    EXPECT_EQ(layout.width, 16u);
    EXPECT_EQ(layout.horizon, 50u);
    EXPECT_DOUBLE_EQ(layout.update_rate, 0.15);
    EXPECT_EQ(layout.generations, 150u);
    CemHyperparameters hp;
    hp.batch_size = 64;
    hp.break_step = 0;
    const auto tiny = cem_layout(hp, CemScaling{});
    EXPECT_EQ(tiny.population, 2u);
    EXPECT_EQ(tiny.generations, 0u);
}

TEST(Cem, HyperparameterSetRoundTrip) {
    const auto hp = small_hp();
    const auto back = CemHyperparameters::from_set(hp.to_set());
    EXPECT_EQ(back.to_set(), hp.to_set());
}

TEST(Cem, TrainedOnRisingAssetBeatsIdle) {
    auto env = make_env({geometric(100, 1.002, 400)}, plain_config(1000.0, 0.0));
    const auto agent = train_cem(small_hp(), CemScaling{}, env, {{0, 400}}, 5);
    CemAgent trained = agent;
    IdleAgent idle;
    const auto t = evaluate(trained, env, {{0, 400}});
    const auto i = evaluate(idle, env, {{0, 400}});
    EXPECT_GE(t.metrics.cumulative_return, i.metrics.cumulative_return);
    EXPECT_GT(t.metrics.cumulative_return, 0.0);
}

TEST(Cem, ZeroBreakStepReturnsInitialization) {
    auto env = make_env({wiggle(6, 200)});
    CemTrainingLog log;
    const auto agent = train_cem(small_hp(0), CemScaling{}, env, {{0, 200}}, 9, &log);
    EXPECT_EQ(log.env_steps, 0u);
    for (double v : agent.parameters().theta) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(agent.trained());
}

TEST(Cem, SameSeedSameParameters) {
    auto env = make_env({wiggle(7, 300), wiggle(8, 300)});
    const auto a = train_cem(small_hp(), CemScaling{}, env, {{0, 150}, {200, 300}}, 11);
    const auto b = train_cem(small_hp(), CemScaling{}, env, {{0, 150}, {200, 300}}, 11);
    const auto c = train_cem(small_hp(), CemScaling{}, env, {{0, 150}, {200, 300}}, 12);
    EXPECT_EQ(a.parameters().theta, b.parameters().theta);
    EXPECT_EQ(a.parameters().projection, b.parameters().projection);
    EXPECT_NE(a.parameters().theta, c.parameters().theta);
}

TEST(Cem, DegenerateWindowRejected) {
    auto env = make_env({wiggle(9, 100)});
    EXPECT_THROW(train_cem(small_hp(), CemScaling{}, env, {{0, 10}}, 1), std::invalid_argument);
    EXPECT_THROW(train_cem(small_hp(), CemScaling{}, env, {}, 1), std::invalid_argument);
}

TEST(Cem, UntrainedAgentRefusesToAct) {
    auto env = make_env({wiggle(9, 20)});
    CemAgent agent;
    EXPECT_THROW(agent.act(env.reset({0, 20})), std::logic_error);
}

TEST(Cem, JsonRoundTripPreservesPolicy) {
    auto env = make_env({wiggle(10, 200), wiggle(11, 200)});
    const auto agent = train_cem(small_hp(), CemScaling{}, env, {{0, 200}}, 3);
    const auto back = CemAgent::from_json(agent.to_json());
    const auto s = env.reset({50, 200});
    EXPECT_EQ(back.target_weights(s), agent.target_weights(s));
    const auto w = agent.target_weights(s);
    double sum = 0.0;
    for (double x : w) {
        EXPECT_GE(x, 0.0);
        sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_ANY_THROW(CemAgent::from_json("{\"theta\": [1, 2]}"));
}

TEST(Cem, RejectsMismatchedEnvironment) {
    auto env = make_env({wiggle(10, 200), wiggle(11, 200)});
    auto agent = train_cem(small_hp(), CemScaling{}, env, {{0, 200}}, 3);
    auto other = make_env({wiggle(12, 200)});
    EXPECT_ANY_THROW(run_episode(other, agent, {0, 200}));
}

TEST(Metrics, HandExamples) {
    const std::vector<double> v = {1000, 1100, 990};
    EXPECT_NEAR(compute_metrics(v).cumulative_return, -0.01, 1e-12);
    const auto growth = geometric(1000, 1.01, 30);
    const auto m = compute_metrics(growth);
    EXPECT_NEAR(m.volatility, 0.0, 1e-12);
    const std::vector<double> flat(5, 1000.0);
    EXPECT_EQ(compute_metrics(flat).cumulative_return, 0.0);
    EXPECT_EQ(compute_metrics(flat).volatility, 0.0);
    EXPECT_EQ(compute_metrics(flat).sharpe, 0.0);
}

TEST(Metrics, CompoundingIdentity) {
    Rng rng(4);
    std::vector<double> v = {1000.0};
    for (int t = 0; t < 500; ++t) v.push_back(v.back() * (1.0 + 0.02 * rng.normal()));
    const auto m = compute_metrics(v);
    double growth = 1.0;
    for (std::size_t t = 1; t < v.size(); ++t) growth *= v[t] / v[t - 1];
    EXPECT_NEAR(m.cumulative_return, growth - 1.0, 1e-9 * std::abs(growth - 1.0));
    EXPECT_GE(m.volatility, 0.0);
}

TEST(Evaluate, IdleAgentHasZeroReturns) {
    auto env = make_env({wiggle(13, 100)});
    IdleAgent idle;
    const auto e = evaluate(idle, env, {{0, 40}, {60, 100}});
    EXPECT_EQ(e.returns.size(), 80u);
    EXPECT_EQ(e.timestamps.size(), 80u);
    for (double r : e.returns) EXPECT_EQ(r, 0.0);
    EXPECT_EQ(e.metrics.cumulative_return, 0.0);
    EXPECT_EQ(e.metrics.volatility, 0.0);
    EXPECT_THROW(evaluate(idle, env, {}), std::invalid_argument);
}

TEST(Evaluate, WindowsAreSeparateEpisodes) {
    auto env = make_env({geometric(100, 1.01, 100)}, plain_config(1000.0, 0.0));
    BuyHoldAgent agent;
    const auto e = evaluate(agent, env, {{0, 10}, {50, 60}});
    ASSERT_EQ(e.episodes.size(), 2u);
    EXPECT_EQ(e.returns[10], 0.0);
    EXPECT_EQ(e.episodes[1].equity.front(), 1000.0);
    EXPECT_EQ(e.timestamps[10], kStart + 50 * 300);
    // Chained simple returns compound across both episodes.
    const double per = std::pow(1.01, 9) - 1.0;
    EXPECT_NEAR(e.metrics.cumulative_return, (1 + per) * (1 + per) - 1.0, 1e-9);
}

TEST(ExternalTrials, CompleteImportAccepted) {
    const std::string text =
        "trial_id,split_id,timestamp,return\n"
        "ppo_a,0,100,1.5\nppo_a,0,200,-0.5\nppo_a,0,300,0.25\n"
        "ppo_b,0,100,0.5\nppo_b,0,200,0.0\nppo_b,0,300,-1\n";
    const auto trials = parse_external_trials(text);
    ASSERT_EQ(trials.size(), 2u);
    EXPECT_EQ(trials[0].trial_id, "ppo_a");
    ASSERT_EQ(trials[1].splits.size(), 1u);
    EXPECT_EQ(trials[1].splits[0].timestamps, (std::vector<std::int64_t>{100, 200, 300}));
    EXPECT_EQ(trials[1].splits[0].returns, (std::vector<double>{0.5, 0.0, -1.0}));
}

TEST(ExternalTrials, RaggedCoverageNamesCell) {
    const std::string text =
        "trial_id,split_id,timestamp,return\n"
        "a,0,100,1\na,0,200,1\na,0,300,1\n"
        "b,0,100,1\nb,0,300,1\n";
    try {
        parse_external_trials(text);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("b"), std::string::npos) << msg;
        EXPECT_NE(msg.find("200"), std::string::npos) << msg;
    }
}

TEST(ExternalTrials, DuplicateCellRejected) {
    const std::string text =
        "trial_id,split_id,timestamp,return\n"
        "a,0,100,1\na,0,100,2\n";
    try {
        parse_external_trials(text);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_external_trials("trial_id,split_id,timestamp\na,0,1\n"), DataError);
}
