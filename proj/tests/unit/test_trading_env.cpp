#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pboguard/error.hpp"
#include "pboguard/rng.hpp"
#include "pboguard/trading_env.hpp"
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

}  // namespace

TEST(Env, ResetGivesInitialCash) {
    auto env = make_env({{100, 101, 102}, {50, 51, 52}});
    const auto s = env.reset({0, 3});
    EXPECT_EQ(s.value(), 1000.0);
    EXPECT_EQ(s.holdings, (std::vector<double>{0.0, 0.0}));
    EXPECT_EQ(s.prices, (std::vector<double>{100.0, 50.0}));
}

TEST(Env, ResetRejectsWarmupOutOfBoundsAndShortWindows) {
    auto panel = make_panel({{1, 2, 3, 4, 5}});
    auto fm = std::make_shared<FeatureMatrix>(*zero_features(*panel, 1));
    fm->warmup = 2;
    TradingEnv env(panel, fm, plain_config());
    EXPECT_THROW(env.reset({1, 4}), std::invalid_argument);
    EXPECT_THROW(env.reset({2, 6}), std::invalid_argument);
    EXPECT_THROW(env.reset({3, 4}), std::invalid_argument);
    EXPECT_NO_THROW(env.reset({2, 5}));
}

TEST(Env, FlattenedStateLength81ForTenAssetsSixFeatures) {
    std::vector<std::vector<double>> closes(10, std::vector<double>{1.0, 2.0});
    auto env = make_env(closes, plain_config(), 6);
    EXPECT_EQ(env.reset({0, 2}).flatten().size(), 81u);
}

TEST(Env, ZeroActionNoHoldings) {
    auto env = make_env({{100, 120}});
    const auto s = env.reset({0, 2});
    const auto r = env.step(s, {0.0});
    EXPECT_EQ(r.reward, 0.0);
    EXPECT_EQ(r.fee_paid, 0.0);
    EXPECT_TRUE(r.done);
}

TEST(Env, BuyTwoUnitsFeeArithmetic) {
    auto env = make_env({{100, 100}});
    const auto s = env.reset({0, 2});
    const auto r = env.step(s, {2.0});
    EXPECT_NEAR(r.fee_paid, 0.6, 1e-12);
    EXPECT_NEAR(s.cash - r.next_state.cash, 200.6, 1e-9);
    EXPECT_EQ(r.next_state.holdings[0], 2.0);
    EXPECT_NEAR(r.reward, -0.6, 1e-9);
}

TEST(Env, UnaffordableBuySkippedWhole) {
    auto env = make_env({{100, 100}}, plain_config(100.0));
    const auto s = env.reset({0, 2});
    const auto r = env.step(s, {2.0});  // worth 200 > cash 100
    EXPECT_EQ(r.next_state.holdings[0], 0.0);
    EXPECT_EQ(r.next_state.cash, 100.0);
    EXPECT_EQ(r.executed_action[0], 0.0);
}

TEST(Env, ProRataFillBuysAffordableFraction) {
    auto config = plain_config(100.0);
    config.buy_fill = BuyFill::ProRata;
    auto env = make_env({{100, 100}}, config);
    const auto r = env.step(env.reset({0, 2}), {2.0});
    EXPECT_NEAR(r.next_state.holdings[0], 100.0 / (100.0 * 1.003), 1e-12);
    EXPECT_GE(r.next_state.cash, 0.0);
}

TEST(Env, BuysProcessedInAscendingAssetOrder) {
    // Cash covers either buy alone but not both: asset 0 wins.
    auto env = make_env({{10, 10}, {10, 10}}, plain_config(150.0, 0.0));
    const auto r = env.step(env.reset({0, 2}), {10.0, 10.0});
    EXPECT_EQ(r.executed_action, (std::vector<double>{10.0, 0.0}));
}

TEST(Env, SellsExecuteBeforeBuys) {
    auto env = make_env({{10, 10, 10}, {10, 10, 10}}, plain_config(100.0, 0.0));
    auto s = env.reset({0, 3});
    s = env.step(s, {10.0, 0.0}).next_state;  // all cash into asset 0
    EXPECT_EQ(s.cash, 0.0);
    const auto r = env.step(s, {-10.0, 10.0});  // buy funded by the sale in the same step
    EXPECT_EQ(r.executed_action, (std::vector<double>{-10.0, 10.0}));
}

TEST(Env, SellClippedToHoldings) {
    auto env = make_env({{10, 10, 10}}, plain_config(100.0, 0.0));
    auto s = env.step(env.reset({0, 3}), {3.0}).next_state;
    const auto r = env.step(s, {-5.0});
    EXPECT_EQ(r.executed_action[0], -3.0);
    EXPECT_EQ(r.next_state.holdings[0], 0.0);
}

TEST(Env, PriceMoveRewardWithoutTrade) {
    auto env = make_env({{100, 100, 110}}, plain_config(100.0, 0.0));
    auto s = env.step(env.reset({0, 3}), {1.0}).next_state;
    EXPECT_EQ(s.cash, 0.0);
    const auto r = env.step(s, {0.0});
    EXPECT_DOUBLE_EQ(r.reward, 10.0);
}

TEST(Env, NonFiniteActionRejected) {
    auto env = make_env({{100, 100}});
    const auto s = env.reset({0, 2});
    EXPECT_THROW(env.step(s, {std::numeric_limits<double>::quiet_NaN()}), std::invalid_argument);
    EXPECT_THROW(env.step(s, {std::numeric_limits<double>::infinity()}), std::invalid_argument);
}

TEST(Env, MaxPositionClamp) {
    auto config = plain_config(1000.0, 0.0);
    config.max_position_per_step = 1.5;
    auto env = make_env({{10, 10}}, config);
    EXPECT_EQ(env.step(env.reset({0, 2}), {4.0}).executed_action[0], 1.5);
}

TEST(Env, BuyAndHoldCompoundingNoFee) {
    auto env = make_env({{100, 110, 121}}, plain_config(1000.0, 0.0));
    ScriptedAgent agent(std::vector<ActionVector>{{10.0}});
    const auto ep = run_episode(env, agent, {0, 3});
    ASSERT_EQ(ep.equity.size(), 3u);
    EXPECT_DOUBLE_EQ(ep.equity[0], 1000.0);
    EXPECT_DOUBLE_EQ(ep.equity[1], 1100.0);
    EXPECT_DOUBLE_EQ(ep.equity[2], 1210.0);
}

TEST(Env, BuyAndHoldCompoundingWithFee) {
    // Largest affordable q: q * 100 * 1.003 <= 1000.
    const double q = 1000.0 / 100.3;
    auto env = make_env({{100, 110, 121}}, plain_config(1000.0, 0.003));
    ScriptedAgent agent(std::vector<ActionVector>{{q * (1.0 - 1e-12)}});
    const auto ep = run_episode(env, agent, {0, 3});
    const double cash_left = 1000.0 - q * (1.0 - 1e-12) * 100.3;
    EXPECT_NEAR(ep.equity[1], cash_left + q * 110.0, 1e-6);
    EXPECT_NEAR(ep.equity[2], cash_left + q * 121.0, 1e-6);
    EXPECT_LT(ep.equity[2], 1210.0);
}

TEST(Env, IdleAgentFlatEquity) {
    auto env = make_env({{100, 90, 130, 70}});
    IdleAgent agent;
    const auto ep = run_episode(env, agent, {0, 4});
    for (double v : ep.equity) EXPECT_EQ(v, 1000.0);
    for (double r : ep.rewards) EXPECT_EQ(r, 0.0);
}

TEST(Env, RandomEpisodesPreserveAccountingInvariants) {
    Rng rng(99);
    for (int episode = 0; episode < 50; ++episode) {
        std::vector<std::vector<double>> closes(3);
        for (auto& c : closes) {
            c.push_back(50.0 + 50.0 * rng.uniform());
            for (int t = 1; t < 40; ++t) c.push_back(c.back() * std::exp(0.05 * rng.normal()));
        }
        auto env = make_env(closes, plain_config(1000.0, 0.003));
        auto s = env.reset({0, 40});
        const double v0 = s.value();
        double rewards = 0.0, fees = 0.0, notional = 0.0;
        for (bool done = false; !done;) {
            ActionVector a(3);
            for (std::size_t i = 0; i < 3; ++i) a[i] = (rng.uniform() - 0.5) * 20.0;
            const auto prices = s.prices;
            auto r = env.step(s, a);
            double fee_check = 0.0;
            for (std::size_t i = 0; i < 3; ++i) fee_check += 0.003 * prices[i] * std::abs(r.executed_action[i]);
            EXPECT_NEAR(r.fee_paid, fee_check, 1e-9 * std::max(1.0, fee_check));
            EXPECT_GE(r.next_state.cash, 0.0);
            for (double h : r.next_state.holdings) EXPECT_GE(h, 0.0);
            // Without trades and fees the reward is exactly h . (p' - p).
            rewards += r.reward;
            fees += r.fee_paid;
            for (std::size_t i = 0; i < 3; ++i) notional += prices[i] * std::abs(r.executed_action[i]);
            s = std::move(r.next_state);
            done = r.done;
        }
        EXPECT_NEAR(rewards, s.value() - v0, 1e-6 * v0);
        EXPECT_NEAR(fees, 0.003 * notional, 1e-9 * std::max(1.0, fees));
    }
}

TEST(Env, ZeroFeeNoTradeRewardIsHoldingsDotPriceChange) {
    auto env = make_env({{10, 10, 12, 9}, {5, 5, 4, 6}}, plain_config(100.0, 0.0));
    auto s = env.step(env.reset({0, 4}), {3.0, 4.0}).next_state;
    while (true) {
        const auto h = s.holdings;
        const auto p = s.prices;
        auto r = env.step(s, {0.0, 0.0});
        EXPECT_EQ(r.reward, (r.next_state.cash + r.next_state.prices[0] * h[0] + r.next_state.prices[1] * h[1]) -
                                (s.cash + p[0] * h[0] + p[1] * h[1]));
        EXPECT_NEAR(r.reward, h[0] * (r.next_state.prices[0] - p[0]) + h[1] * (r.next_state.prices[1] - p[1]), 1e-12);
        s = std::move(r.next_state);
        if (r.done) break;
    }
}

TEST(RiskControl, ThresholdRule) {
    MarketState s;
    EXPECT_TRUE(risk_control(s, 95.0, 90.1));
    EXPECT_FALSE(risk_control(s, 80.0, 90.1));
    EXPECT_FALSE(risk_control(s, 90.1, 90.1));
    EXPECT_THROW(risk_control(s, std::numeric_limits<double>::quiet_NaN(), 90.1), DataError);
}

TEST(RiskControl, HaltLiquidatesAndBlocksBuysUntilBelowThreshold) {
    auto config = plain_config(1000.0, 0.0);
    config.cvix = std::vector<double>{50, 95, 95, 80, 80};
    auto env = make_env({{10, 10, 10, 10, 10}}, config);
    auto s = env.reset({0, 5});
    EXPECT_FALSE(s.risk_halt);
    s = env.step(s, {50.0}).next_state;
    EXPECT_TRUE(s.risk_halt);
    EXPECT_EQ(s.holdings[0], 50.0);
    auto r = env.step(s, {10.0});  // halted: buy suppressed, holdings liquidated
    EXPECT_EQ(r.next_state.holdings[0], 0.0);
    EXPECT_EQ(r.executed_action[0], -50.0);
    r = env.step(r.next_state, {10.0});  // still halted
    EXPECT_EQ(r.next_state.holdings[0], 0.0);
    EXPECT_FALSE(r.next_state.risk_halt);
    r = env.step(r.next_state, {10.0});  // resumed
    EXPECT_EQ(r.next_state.holdings[0], 10.0);
}

TEST(RiskControl, DisabledWithoutSeries) {
    auto env = make_env({{10, 10}}, plain_config());
    EXPECT_FALSE(env.reset({0, 2}).risk_halt);
}

TEST(RiskControl, MissingValueIsDataError) {
    auto config = plain_config();
    config.cvix = std::vector<double>{50, std::numeric_limits<double>::quiet_NaN()};
    auto env = make_env({{10, 10}}, config);
    const auto s = env.reset({0, 2});
    EXPECT_THROW(env.step(s, {0.0}), DataError);
}

TEST(RiskControl, AlignCvixFromCsv) {
    auto panel = make_panel({{1, 2, 3}});
    const auto t0 = panel->timestamps()[0];
    const std::string csv = "timestamp,value\n" + std::to_string(t0) + ",50\n" + std::to_string(t0 + 600) + ",95\n";
    const auto v = align_cvix(csv, *panel);
    EXPECT_EQ(v[0], 50.0);
    EXPECT_TRUE(std::isnan(v[1]));
    EXPECT_EQ(v[2], 95.0);
}

TEST(Env, DeterministicTradeLog) {
    auto run = [] {
        auto env = make_env({{10, 11, 9, 12}, {20, 19, 21, 22}});
        ScriptedAgent agent({{5.0, 5.0}, {-2.0, 3.0}, {1.0, -8.0}});
        return trades_to_csv(run_episode(env, agent, {0, 4}).trades, {"A0", "A1"});
    };
    EXPECT_EQ(run(), run());
}
