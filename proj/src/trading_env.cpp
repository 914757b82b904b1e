#include "pboguard/trading_env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pboguard/error.hpp"
#include "pboguard/io.hpp"

namespace pboguard {

void EnvConfig::validate() const {
    if (!(initial_cash > 0.0) || !std::isfinite(initial_cash)) {
        throw std::invalid_argument("env: initial cash must be positive");
    }
    if (!(fee_rate >= 0.0 && fee_rate < 1.0)) throw std::invalid_argument("env: fee rate must lie in [0, 1)");
    if (!std::isfinite(cvix_threshold)) throw std::invalid_argument("env: CVIX threshold must be finite");
    if (max_position_per_step && !(*max_position_per_step > 0.0)) {
        throw std::invalid_argument("env: max_position_per_step must be positive");
    }
}

double MarketState::value() const {
    double v = cash;
    for (std::size_t i = 0; i < holdings.size(); ++i) v += prices[i] * holdings[i];
    return v;
}

std::vector<double> MarketState::flatten() const {
    std::vector<double> out;
    out.reserve(1 + holdings.size() + prices.size() + features.size());
    out.push_back(cash);
    out.insert(out.end(), holdings.begin(), holdings.end());
    out.insert(out.end(), prices.begin(), prices.end());
    out.insert(out.end(), features.begin(), features.end());
    return out;
}

bool risk_control(const MarketState& state, double cvix_value, double threshold) {
    if (std::isnan(cvix_value)) {
        throw DataError("missing CVIX value at step " + std::to_string(state.t));
    }
    return cvix_value > threshold;
}

TradingEnv::TradingEnv(std::shared_ptr<const Panel> panel, std::shared_ptr<const FeatureMatrix> features,
                       EnvConfig config)
    : panel_(std::move(panel)), features_(std::move(features)), config_(std::move(config)) {
    if (!panel_ || !features_) throw std::invalid_argument("env: panel and features are required");
    config_.validate();
    if (features_->num_rows() != panel_->num_steps() || features_->num_assets() != panel_->num_assets()) {
        throw std::invalid_argument("env: feature matrix does not match the panel");
    }
    if (config_.cvix && config_.cvix->size() != panel_->num_steps()) {
        throw std::invalid_argument("env: CVIX series is not aligned to the panel");
    }
}

MarketState TradingEnv::observe(std::size_t t, double cash, std::vector<double> holdings) const {
    MarketState s;
    s.t = t;
    s.cash = cash;
    s.holdings = std::move(holdings);
    s.prices = panel_->closes_at(t);
    const auto row = features_->row(t);
    s.features.assign(row.begin(), row.end());
    if (config_.cvix) s.risk_halt = risk_control(s, (*config_.cvix)[t], config_.cvix_threshold);
    return s;
}

MarketState TradingEnv::reset(Window window) {
    if (window.end > panel_->num_steps() || window.begin >= window.end) {
        throw std::invalid_argument("env: window [" + std::to_string(window.begin) + ", " +
                                    std::to_string(window.end) + ") out of bounds");
    }
    if (window.size() < 2) throw std::invalid_argument("env: window shorter than 2 steps");
    if (window.begin < features_->warmup) {
        throw std::invalid_argument("env: window starts inside the indicator warm-up (first usable step " +
                                    std::to_string(features_->warmup) + ")");
    }
    window_ = window;
    return observe(window.begin, config_.initial_cash, std::vector<double>(panel_->num_assets(), 0.0));
}

StepResult TradingEnv::step(const MarketState& state, const ActionVector& action) const {
    const std::size_t D = panel_->num_assets();
    if (action.size() != D) throw std::invalid_argument("env: action has wrong dimension");
    for (double a : action) {
        if (!std::isfinite(a)) throw std::invalid_argument("env: non-finite action entry");
    }
    if (state.t + 1 >= window_.end || state.t < window_.begin) {
        throw std::invalid_argument("env: step called on a terminal or foreign state");
    }

    const auto& p = state.prices;
    const double fee_rate = config_.fee_rate;
    const std::int64_t ts = panel_->timestamps()[state.t];
    std::vector<double> holdings = state.holdings;
    double cash = state.cash;

    StepResult result;
    result.executed_action.assign(D, 0.0);

    ActionVector requested = action;
    if (config_.max_position_per_step) {
        const double cap = *config_.max_position_per_step;
        for (double& a : requested) a = std::clamp(a, -cap, cap);
    }
    if (state.risk_halt) {
        for (std::size_t i = 0; i < D; ++i) requested[i] = -holdings[i];
    }

    auto record = [&](std::size_t i, double qty, double notional, double fee) {
        result.executed_action[i] = qty;
        result.fee_paid += fee;
        result.traded_notional += notional;
        result.trades.push_back({ts, i, qty, p[i], fee});
    };

    // Sells first; clipped so holdings stay non-negative.
    for (std::size_t i = 0; i < D; ++i) {
        if (requested[i] >= 0.0 || holdings[i] <= 0.0) continue;
        const double qty = std::max(requested[i], -holdings[i]);
        const double notional = p[i] * -qty;
        const double fee = fee_rate * notional;
        cash += notional - fee;
        holdings[i] = qty == -holdings[i] ? 0.0 : holdings[i] + qty;
        record(i, qty, notional, fee);
    }

    // Buys in ascending asset order; the order's own fee must be covered.
    if (!state.risk_halt) {
        for (std::size_t i = 0; i < D; ++i) {
            double qty = requested[i];
            if (qty <= 0.0) continue;
            double notional = p[i] * qty;
            double fee = fee_rate * notional;
            if (notional + fee > cash) {
                if (config_.buy_fill == BuyFill::SkipWhole) continue;
                qty = cash / (p[i] * (1.0 + fee_rate));
                // Step down past rounding so the fill never overdraws cash.
                for (int k = 0; k < 8 && qty > 0.0 && p[i] * qty + fee_rate * (p[i] * qty) > cash; ++k) {
                    qty = std::nextafter(qty, 0.0);
                }
                notional = p[i] * qty;
                fee = fee_rate * notional;
                if (!(qty > 0.0) || notional + fee > cash) continue;
            }
            cash -= notional + fee;
            holdings[i] += qty;
            record(i, qty, notional, fee);
        }
    }

    const double v_before = state.value();
    result.next_state = observe(state.t + 1, cash, std::move(holdings));
    result.reward = result.next_state.value() - v_before;
    result.done = result.next_state.t + 1 == window_.end;
    return result;
}

EpisodeResult run_episode(TradingEnv& env, Agent& agent, Window window) {
    auto state = env.reset(window);
    agent.begin_episode({env.num_assets(), env.num_features(), env.config().fee_rate, env.config().initial_cash,
                         window});

    const auto& ts = env.panel().timestamps();
    EpisodeResult out;
    out.timestamps.reserve(window.size());
    out.equity.reserve(window.size());
    out.rewards.reserve(window.size() - 1);
    out.timestamps.push_back(ts[state.t]);
    out.equity.push_back(state.value());

    for (bool done = false; !done;) {
        if (state.risk_halt) out.halted_steps.push_back(state.t);
        auto step = env.step(state, agent.act(state));
        out.rewards.push_back(step.reward);
        out.total_fees += step.fee_paid;
        out.traded_notional += step.traded_notional;
        out.trades.insert(out.trades.end(), step.trades.begin(), step.trades.end());
        state = std::move(step.next_state);
        out.timestamps.push_back(ts[state.t]);
        out.equity.push_back(state.value());
        done = step.done;
    }
    return out;
}

std::string trades_to_csv(const std::vector<TradeRecord>& trades, const std::vector<std::string>& assets) {
    std::string out = "timestamp,asset,qty,price,fee\n";
    for (const auto& tr : trades) {
        out += std::to_string(tr.timestamp) + "," + assets.at(tr.asset) + "," + io::format_double(tr.qty) + "," +
               io::format_double(tr.price) + "," + io::format_double(tr.fee) + "\n";
    }
    return out;
}

std::string equity_to_csv(const std::vector<std::int64_t>& timestamps, const std::vector<double>& equity) {
    std::string out = "timestamp,value\n";
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
        out += std::to_string(timestamps[i]) + "," + io::format_double(equity[i]) + "\n";
    }
    return out;
}

std::vector<double> align_cvix(std::string_view csv_text, const Panel& panel, std::string_view source) {
    const auto table = io::parse_csv(csv_text, source);
    const auto c_ts = table.require_column("timestamp", source);
    const auto c_val = table.require_column("value", source);
    std::vector<double> out(panel.num_steps(), std::numeric_limits<double>::quiet_NaN());
    const auto& ts = panel.timestamps();
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto t = io::parse_timestamp(table.rows[r][c_ts]);
        const auto v = io::parse_double(table.rows[r][c_val]);
        if (!t || !v || !std::isfinite(*v)) {
            throw DataError(std::string(source) + ": line " + std::to_string(table.line_numbers[r]) +
                            ": malformed CVIX row");
        }
        const auto it = std::lower_bound(ts.begin(), ts.end(), *t);
        if (it != ts.end() && *it == *t) out[static_cast<std::size_t>(it - ts.begin())] = *v;
    }
    return out;
}

std::vector<double> load_cvix_csv(const std::filesystem::path& path, const Panel& panel) {
    return align_cvix(io::read_file(path), panel, path.string());
}

}  // namespace pboguard
