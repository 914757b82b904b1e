#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pboguard/market_data.hpp"

namespace pboguard {

// What happens to a buy order that cash cannot cover.
enum class BuyFill {
    SkipWhole,  // the order is not executed at all
    ProRata,    // the affordable fraction is executed
};

struct EnvConfig {
    double initial_cash = 1'000'000.0;
    double fee_rate = 0.003;
    double cvix_threshold = 90.1;
    // Exogenous volatility index aligned to the panel timestamps. NaN marks a
    // missing observation. Absent means risk control is disabled.
    std::optional<std::vector<double>> cvix;
    std::optional<double> max_position_per_step;  // clamp on |a_i|, in units
    BuyFill buy_fill = BuyFill::SkipWhole;

    void validate() const;
};

using ActionVector = std::vector<double>;

// s_t = [b_t, h_t, p_t, f_t].
struct MarketState {
    std::size_t t = 0;
    double cash = 0.0;
    std::vector<double> holdings;  // units per asset
    std::vector<double> prices;    // close of each asset at t
    std::vector<double> features;  // I*D, asset-major
    bool risk_halt = false;

    // v_t = b_t + p_t . h_t
    double value() const;
    // [b, h..., p..., f...], length 1 + (I+2)*D.
    std::vector<double> flatten() const;
};

struct TradeRecord {
    std::int64_t timestamp = 0;
    std::size_t asset = 0;
    double qty = 0.0;  // signed units; positive = buy
    double price = 0.0;
    double fee = 0.0;
};

struct StepResult {
    MarketState next_state;
    double reward = 0.0;
    ActionVector executed_action;
    double fee_paid = 0.0;
    double traded_notional = 0.0;  // p_t . |a_exec|
    bool done = false;
    std::vector<TradeRecord> trades;
};

// Half-open step range [begin, end) of the panel.
struct Window {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool operator==(const Window&) const = default;
};

// Risk flag for one observation: halt while the index is above threshold.
// Throws DataError when the observation is missing (NaN).
bool risk_control(const MarketState& state, double cvix_value, double threshold);

// Market replay over an immutable panel. One instance drives one episode at a
// time; distinct instances may share the same panel and features.
class TradingEnv {
public:
    TradingEnv(std::shared_ptr<const Panel> panel, std::shared_ptr<const FeatureMatrix> features, EnvConfig config);

    MarketState reset(Window window);
    StepResult step(const MarketState& state, const ActionVector& action) const;

    const Panel& panel() const { return *panel_; }
    const FeatureMatrix& features() const { return *features_; }
    const EnvConfig& config() const { return config_; }
    const Window& window() const { return window_; }
    std::size_t num_assets() const { return panel_->num_assets(); }
    std::size_t num_features() const { return features_->num_features(); }

private:
    MarketState observe(std::size_t t, double cash, std::vector<double> holdings) const;

    std::shared_ptr<const Panel> panel_;
    std::shared_ptr<const FeatureMatrix> features_;
    EnvConfig config_;
    Window window_;
};

// Static information handed to an agent at the start of every episode.
struct EpisodeContext {
    std::size_t num_assets = 0;
    std::size_t num_features = 0;
    double fee_rate = 0.0;
    double initial_cash = 0.0;
    Window window;
};

// Trading policy pi(a_t | s_t).
class Agent {
public:
    virtual ~Agent() = default;
    virtual std::string name() const = 0;
    virtual void begin_episode(const EpisodeContext& /*context*/) {}
    virtual ActionVector act(const MarketState& state) = 0;
};

struct EpisodeResult {
    std::vector<std::int64_t> timestamps;  // one per step of the window
    std::vector<double> equity;            // v_t, same length as timestamps
    std::vector<double> rewards;           // v_{t+1} - v_t, length - 1 entries
    std::vector<TradeRecord> trades;
    std::vector<std::size_t> halted_steps;  // steps whose state had risk_halt set
    double total_fees = 0.0;
    double traded_notional = 0.0;
};

EpisodeResult run_episode(TradingEnv& env, Agent& agent, Window window);

// timestamp,asset,qty,price,fee
std::string trades_to_csv(const std::vector<TradeRecord>& trades, const std::vector<std::string>& assets);
// timestamp,value
std::string equity_to_csv(const std::vector<std::int64_t>& timestamps, const std::vector<double>& equity);

// timestamp,value CSV aligned onto the panel's timestamps (NaN where absent).
std::vector<double> load_cvix_csv(const std::filesystem::path& path, const Panel& panel);
std::vector<double> align_cvix(std::string_view csv_text, const Panel& panel, std::string_view source = "<memory>");

}  // namespace pboguard
