#include "pboguard/agents.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

#include "pboguard/error.hpp"
#include "pboguard/io.hpp"

namespace pboguard {

using nlohmann::json;

namespace {

// Orders are shaved by this relative margin so that rounding in the
// environment's cash accounting never turns an affordable buy into a skip.
constexpr double kAffordabilityShave = 1e-9;

PerfMetrics metrics_from_simple_returns(std::span<const double> r, double cumulative) {
    PerfMetrics m;
    m.cumulative_return = cumulative;
    if (r.empty()) return m;
    const double n = static_cast<double>(r.size());
    const double mean = std::accumulate(r.begin(), r.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : r) ss += (x - mean) * (x - mean);
    m.volatility = std::sqrt(ss / n);
    m.sharpe = m.volatility > 0.0 ? mean / m.volatility : 0.0;
    return m;
}

ActionVector all_in(const MarketState& state, const std::vector<std::size_t>& assets, double fee_rate) {
    ActionVector a(state.prices.size(), 0.0);
    if (assets.empty()) return a;
    const double budget = state.cash / static_cast<double>(assets.size());
    for (std::size_t i : assets) a[i] = budget / (state.prices[i] * (1.0 + fee_rate)) * (1.0 - kAffordabilityShave);
    return a;
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t HyperparameterGrid::cardinality() const {
    if (axes.empty()) return 0;
    std::size_t n = 1;
    for (const auto& [name, values] : axes) n *= values.size();
    return n;
}

HyperparameterSet HyperparameterGrid::at(std::size_t index) const {
    if (index >= cardinality()) throw std::out_of_range("hyperparameter grid index out of range");
    HyperparameterSet set;
    for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
        const auto& [name, values] = *it;
        set[name] = values[index % values.size()];
        index /= values.size();
    }
    return set;
}

bool HyperparameterGrid::contains(const HyperparameterSet& set) const {
    if (set.size() != axes.size()) return false;
    for (const auto& [name, values] : axes) {
        const auto it = set.find(name);
        if (it == set.end() || std::find(values.begin(), values.end(), it->second) == values.end()) return false;
    }
    return true;
}

HyperparameterGrid default_hyperparameter_grid() {
    return {{
        {"step_size", {3e-2, 2.3e-2, 1.5e-2, 7.5e-3, 5e-6}},
        {"batch_size", {512, 1280, 2048, 3080}},
        {"gamma", {0.95, 0.96, 0.97, 0.98, 0.99}},
        {"net_dimension", {512, 1024, 2048}},
        {"target_step", {2500, 3750, 5000}},
        {"break_step", {30000, 45000, 60000}},
    }};
}

std::string to_string(AgentKind kind) {
    switch (kind) {
        case AgentKind::EqualWeight: return "equal_weight";
        case AgentKind::BuyHold: return "buy_hold";
        case AgentKind::Momentum: return "momentum";
        case AgentKind::Random: return "random";
        case AgentKind::CemPolicy: return "cem";
        case AgentKind::External: return "external";
    }
    return "?";
}

AgentKind parse_agent_kind(const std::string& name) {
    for (auto kind : {AgentKind::EqualWeight, AgentKind::BuyHold, AgentKind::Momentum, AgentKind::Random,
                      AgentKind::CemPolicy, AgentKind::External}) {
        if (to_string(kind) == name) return kind;
    }
    if (name == "cem_policy") return AgentKind::CemPolicy;
    throw std::invalid_argument("unknown agent kind '" + name + "'");
}

PerfMetrics compute_metrics(std::span<const double> equity) {
    if (equity.empty()) throw std::invalid_argument("compute_metrics: empty equity curve");
    std::vector<double> r;
    r.reserve(equity.size());
    for (std::size_t t = 1; t < equity.size(); ++t) r.push_back((equity[t] - equity[t - 1]) / equity[t - 1]);
    return metrics_from_simple_returns(r, (equity.back() - equity.front()) / equity.front());
}

// ---------------------------------------------------------------------------

void EqualWeightAgent::begin_episode(const EpisodeContext& context) {
    context_ = context;
    invested_ = false;
}

ActionVector EqualWeightAgent::act(const MarketState& state) {
    if (invested_) return ActionVector(state.prices.size(), 0.0);
    invested_ = true;
    std::vector<std::size_t> all(state.prices.size());
    std::iota(all.begin(), all.end(), 0);
    return all_in(state, all, context_.fee_rate);
}

void BuyHoldAgent::begin_episode(const EpisodeContext& context) {
    if (asset_ >= context.num_assets) throw std::invalid_argument("buy_hold: asset index out of range");
    context_ = context;
    invested_ = false;
}

ActionVector BuyHoldAgent::act(const MarketState& state) {
    if (invested_) return ActionVector(state.prices.size(), 0.0);
    invested_ = true;
    return all_in(state, {asset_}, context_.fee_rate);
}

void MomentumAgent::begin_episode(const EpisodeContext& context) {
    context_ = context;
    last_prices_.clear();
}

ActionVector MomentumAgent::act(const MarketState& state) {
    const std::size_t D = state.prices.size();
    std::vector<double> weights(D + 1, 0.0);
    if (last_prices_.empty()) {
        weights[D] = 1.0;
    } else {
        double invested = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
            if (state.prices[i] > last_prices_[i]) {
                weights[i] = 1.0 / static_cast<double>(D);
                invested += weights[i];
            }
        }
        weights[D] = 1.0 - invested;
    }
    last_prices_ = state.prices;
    return rebalance_to_weights(state, weights, context_.fee_rate, band_);
}

void RandomAgent::begin_episode(const EpisodeContext& context) {
    context_ = context;
    rng_ = Rng(seed_);
}

ActionVector RandomAgent::act(const MarketState& state) {
    const std::size_t D = state.prices.size();
    const double v = state.value();
    ActionVector a(D);
    for (std::size_t i = 0; i < D; ++i) {
        a[i] = rng_.uniform(-1.0, 1.0) * intensity_ * v / (static_cast<double>(D) * state.prices[i]);
    }
    return a;
}

ActionVector rebalance_to_weights(const MarketState& state, std::span<const double> weights, double fee_rate,
                                  double band) {
    const std::size_t D = state.prices.size();
    if (weights.size() != D + 1) throw std::invalid_argument("rebalance: expected D + 1 weights");
    const double v = state.value();
    ActionVector a(D, 0.0);
    if (!(v > 0.0)) return a;

    double proceeds = 0.0;
    double buy_cost = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
        const double current = state.prices[i] * state.holdings[i];
        const double delta = weights[i] * v - current;
        if (std::abs(delta) < band * v) continue;
        if (delta < 0.0) {
            a[i] = std::max(delta / state.prices[i], -state.holdings[i]);
            proceeds += -a[i] * state.prices[i] * (1.0 - fee_rate);
        } else {
            a[i] = delta / (state.prices[i] * (1.0 + fee_rate));
            buy_cost += a[i] * state.prices[i] * (1.0 + fee_rate);
        }
    }
    if (buy_cost > 0.0) {
        const double available = (state.cash + proceeds) * (1.0 - kAffordabilityShave);
        const double scale = buy_cost > available ? std::max(available, 0.0) / buy_cost : 1.0 - kAffordabilityShave;
        for (double& x : a) {
            if (x > 0.0) x *= scale;
        }
    }
    return a;
}

// ---------------------------------------------------------------------------

CemHyperparameters CemHyperparameters::from_set(const HyperparameterSet& set) {
    CemHyperparameters hp;
    for (const auto& [name, value] : set) {
        if (name == "step_size") hp.step_size = value;
        else if (name == "batch_size") hp.batch_size = value;
        else if (name == "gamma") hp.gamma = value;
        else if (name == "net_dimension") hp.net_dimension = value;
        else if (name == "target_step") hp.target_step = value;
        else if (name == "break_step") hp.break_step = value;
        else throw std::invalid_argument("unknown hyperparameter '" + name + "'");
    }
    return hp;
}

HyperparameterSet CemHyperparameters::to_set() const {
    return {{"step_size", step_size},         {"batch_size", batch_size},   {"gamma", gamma},
            {"net_dimension", net_dimension}, {"target_step", target_step}, {"break_step", break_step}};
}

CemLayout cem_layout(const CemHyperparameters& hp, const CemScaling& scaling) {
    if (!(hp.step_size >= 0.0)) throw std::invalid_argument("cem: step_size must be non-negative");
    if (!(hp.gamma > 0.0 && hp.gamma <= 1.0)) throw std::invalid_argument("cem: gamma must lie in (0, 1]");
    if (!(hp.batch_size > 0.0 && hp.net_dimension > 0.0 && hp.target_step > 0.0)) {
        throw std::invalid_argument("cem: batch_size, net_dimension and target_step must be positive");
    }
    if (!(hp.break_step >= 0.0)) throw std::invalid_argument("cem: break_step must be non-negative");
    if (!(scaling.elite_fraction > 0.0 && scaling.elite_fraction <= 1.0)) {
        throw std::invalid_argument("cem: elite fraction must lie in (0, 1]");
    }

    CemLayout layout;
    layout.population = static_cast<std::size_t>(std::max(2.0, std::round(hp.batch_size / scaling.population_divisor)));
    layout.width = static_cast<std::size_t>(std::max(1.0, std::round(hp.net_dimension / scaling.width_divisor)));
    layout.horizon = static_cast<std::size_t>(std::max(1.0, std::round(hp.target_step / scaling.horizon_divisor)));
    layout.update_rate = std::min(1.0, hp.step_size * scaling.rate_scale);
    if (hp.break_step > 0.0) {
        const double per_generation = static_cast<double>(layout.population * layout.horizon);
        layout.generations = static_cast<std::size_t>(std::max(1.0, std::floor(hp.break_step / per_generation)));
    }
    return layout;
}

void CemAgent::begin_episode(const EpisodeContext& context) {
    if (!trained_) throw std::logic_error("cem agent used before training");
    if (context.num_features != params_.num_features || context.num_assets != params_.num_assets) {
        throw std::invalid_argument("cem agent: trained on " + std::to_string(params_.num_assets) + " assets x " +
                                    std::to_string(params_.num_features) + " features, environment has " +
                                    std::to_string(context.num_assets) + " x " + std::to_string(context.num_features));
    }
    context_ = context;
}

std::vector<double> CemAgent::target_weights(const MarketState& state) const {
    const std::size_t D = state.prices.size();
    const std::size_t I = params_.num_features;
    const std::size_t W = params_.width;
    const std::size_t in = I + 2;
    const double v = state.value();

    std::vector<double> scores(D + 1);
    std::vector<double> x(in);
    for (std::size_t a = 0; a < D; ++a) {
        for (std::size_t k = 0; k < I; ++k) {
            const double raw = state.features[a * I + k];
            const double z = (raw - params_.feature_mean[k]) / params_.feature_scale[k];
            x[k] = std::isfinite(z) ? std::clamp(z, -5.0, 5.0) : 0.0;
        }
        x[I] = v > 0.0 ? state.prices[a] * state.holdings[a] / v : 0.0;
        x[I + 1] = 1.0;
        double s = 0.0;
        for (std::size_t w = 0; w < W; ++w) {
            double h = 0.0;
            for (std::size_t k = 0; k < in; ++k) h += params_.projection[w * in + k] * x[k];
            s += params_.theta[w] * std::tanh(h);
        }
        scores[a] = s + params_.theta[W + a];
    }
    scores[D] = params_.theta[W + D];

    const double top = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double& s : scores) {
        s = std::exp(s - top);
        total += s;
    }
    for (double& s : scores) s /= total;
    return scores;
}

ActionVector CemAgent::act(const MarketState& state) {
    if (!trained_) throw std::logic_error("cem agent used before training");
    const auto weights = target_weights(state);
    return rebalance_to_weights(state, weights, context_.fee_rate, params_.rebalance_band);
}

std::string CemAgent::to_json() const {
    json j;
    j["kind"] = "cem";
    j["num_features"] = params_.num_features;
    j["num_assets"] = params_.num_assets;
    j["width"] = params_.width;
    j["projection"] = params_.projection;
    j["theta"] = params_.theta;
    j["feature_mean"] = params_.feature_mean;
    j["feature_scale"] = params_.feature_scale;
    j["rebalance_band"] = params_.rebalance_band;
    return j.dump(2) + "\n";
}

CemAgent CemAgent::from_json(const std::string& text) {
    try {
        const auto j = json::parse(text);
        if (j.at("kind").get<std::string>() != "cem") throw DataError("agent JSON: kind must be 'cem'");
        CemParameters p;
        p.num_features = j.at("num_features").get<std::size_t>();
        p.num_assets = j.at("num_assets").get<std::size_t>();
        p.width = j.at("width").get<std::size_t>();
        p.projection = j.at("projection").get<std::vector<double>>();
        p.theta = j.at("theta").get<std::vector<double>>();
        p.feature_mean = j.at("feature_mean").get<std::vector<double>>();
        p.feature_scale = j.at("feature_scale").get<std::vector<double>>();
        p.rebalance_band = j.at("rebalance_band").get<double>();
        if (p.projection.size() != p.width * (p.num_features + 2) || p.theta.size() != p.width + p.num_assets + 1 ||
            p.feature_mean.size() != p.num_features || p.feature_scale.size() != p.num_features) {
            throw DataError("agent JSON: parameter shapes are inconsistent");
        }
        return CemAgent(std::move(p));
    } catch (const json::exception& e) {
        throw DataError(std::string("agent JSON: ") + e.what());
    }
}

namespace {

double discounted_rollout(TradingEnv& env, CemAgent& agent, Window window, double gamma, double scale) {
    auto state = env.reset(window);
    agent.begin_episode({env.num_assets(), env.num_features(), env.config().fee_rate, env.config().initial_cash, window});
    double score = 0.0;
    double discount = 1.0;
    for (bool done = false; !done;) {
        auto step = env.step(state, agent.act(state));
        score += discount * step.reward / scale;
        discount *= gamma;
        state = std::move(step.next_state);
        done = step.done;
    }
    return score;
}

}  // namespace

CemAgent train_cem(const CemHyperparameters& hp, const CemScaling& scaling, TradingEnv& env,
                   const std::vector<Window>& train_windows, std::uint64_t seed, CemTrainingLog* log) {
    if (train_windows.empty()) throw std::invalid_argument("train: no training windows");
    const auto layout = cem_layout(hp, scaling);
    const std::size_t I = env.num_features();
    const std::size_t D = env.num_assets();
    const std::size_t in = I + 2;
    const FeatureMatrix& fm = env.features();

    // Rollouts need horizon + 1 consecutive steps.
    std::vector<Window> eligible;
    std::size_t total_starts = 0;
    for (const auto& w : train_windows) {
        if (w.begin < fm.warmup || w.end > fm.num_rows()) {
            throw std::invalid_argument("train: window outside the usable feature rows");
        }
        if (w.size() >= layout.horizon + 1) {
            eligible.push_back(w);
            total_starts += w.size() - layout.horizon;
        }
    }
    if (eligible.empty()) {
        throw std::invalid_argument("train: no training window covers one rollout of " + std::to_string(layout.horizon) +
                                    " steps");
    }

    CemParameters params;
    params.num_features = I;
    params.num_assets = D;
    params.width = layout.width;
    params.rebalance_band = scaling.rebalance_band;

    // Feature standardization from training rows only, pooled over assets.
    params.feature_mean.assign(I, 0.0);
    params.feature_scale.assign(I, 1.0);
    {
        std::vector<double> sum(I, 0.0), sq(I, 0.0);
        std::size_t n = 0;
        for (const auto& w : train_windows) {
            for (std::size_t t = w.begin; t < w.end; ++t) {
                for (std::size_t a = 0; a < D; ++a) {
                    for (std::size_t k = 0; k < I; ++k) sum[k] += fm.at(t, a, k);
                }
                n += D;
            }
        }
        for (std::size_t k = 0; k < I; ++k) params.feature_mean[k] = sum[k] / static_cast<double>(n);
        for (const auto& w : train_windows) {
            for (std::size_t t = w.begin; t < w.end; ++t) {
                for (std::size_t a = 0; a < D; ++a) {
                    for (std::size_t k = 0; k < I; ++k) {
                        const double d = fm.at(t, a, k) - params.feature_mean[k];
                        sq[k] += d * d;
                    }
                }
            }
        }
        for (std::size_t k = 0; k < I; ++k) {
            const double sd = std::sqrt(sq[k] / static_cast<double>(n));
            params.feature_scale[k] = (std::isfinite(sd) && sd > 0.0) ? sd : 1.0;
            if (!std::isfinite(params.feature_mean[k])) params.feature_mean[k] = 0.0;
        }
    }

    Rng rng(seed);
    params.projection.resize(layout.width * in);
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : params.projection) w = rng.normal() * proj_scale;

    const std::size_t dim = layout.width + D + 1;
    std::vector<double> mean(dim, 0.0);
    std::vector<double> stddev(dim, scaling.init_std);
    params.theta = mean;

    const std::size_t elites =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(scaling.elite_fraction * layout.population)));
    const double cash_scale = env.config().initial_cash;

    std::vector<std::vector<double>> candidates(layout.population, std::vector<double>(dim));
    std::vector<double> scores(layout.population);
    CemAgent candidate_agent(params);

    for (std::size_t g = 0; g < layout.generations; ++g) {
        // One shared rollout window per generation.
        std::size_t pick = rng.below(total_starts);
        Window rollout{};
        for (const auto& w : eligible) {
            const std::size_t starts = w.size() - layout.horizon;
            if (pick < starts) {
                rollout = {w.begin + pick, w.begin + pick + layout.horizon + 1};
                break;
            }
            pick -= starts;
        }

        for (std::size_t c = 0; c < layout.population; ++c) {
            for (std::size_t d = 0; d < dim; ++d) candidates[c][d] = mean[d] + stddev[d] * rng.normal();
        }
        for (std::size_t c = 0; c < layout.population; ++c) {
            params.theta = candidates[c];
            candidate_agent = CemAgent(params);
            scores[c] = discounted_rollout(env, candidate_agent, rollout, hp.gamma, cash_scale);
        }
        if (log) log->env_steps += layout.population * layout.horizon;

        std::vector<std::size_t> order(layout.population);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

        for (std::size_t d = 0; d < dim; ++d) {
            double m = 0.0;
            for (std::size_t e = 0; e < elites; ++e) m += candidates[order[e]][d];
            m /= static_cast<double>(elites);
            double v = 0.0;
            for (std::size_t e = 0; e < elites; ++e) v += (candidates[order[e]][d] - m) * (candidates[order[e]][d] - m);
            const double sd = std::sqrt(v / static_cast<double>(elites));
            const double rate = layout.update_rate;
            mean[d] = (1.0 - rate) * mean[d] + rate * m;
            stddev[d] = std::max(scaling.min_std, (1.0 - rate) * stddev[d] + rate * sd);
        }
        if (log) {
            log->best_score.push_back(scores[order[0]]);
            log->mean_score.push_back(std::accumulate(scores.begin(), scores.end(), 0.0) /
                                      static_cast<double>(scores.size()));
        }
    }

    params.theta = mean;
    return CemAgent(std::move(params));
}

std::unique_ptr<Agent> make_agent(const AgentSpec& spec, TradingEnv& env, const std::vector<Window>& train_windows,
                                  const CemScaling& scaling) {
    switch (spec.kind) {
        case AgentKind::EqualWeight: return std::make_unique<EqualWeightAgent>();
        case AgentKind::BuyHold: return std::make_unique<BuyHoldAgent>();
        case AgentKind::Momentum: return std::make_unique<MomentumAgent>();
        case AgentKind::Random: return std::make_unique<RandomAgent>(spec.seed);
        case AgentKind::CemPolicy:
            return std::make_unique<CemAgent>(train_cem(CemHyperparameters::from_set(spec.hyperparameters), scaling, env,
                                                        train_windows, spec.seed));
        case AgentKind::External:
            throw std::invalid_argument("external agents provide returns, not actions; use import_external_trials");
    }
    throw std::invalid_argument("unknown agent kind");
}

Evaluation evaluate(Agent& agent, TradingEnv& env, const std::vector<Window>& validation_windows) {
    if (validation_windows.empty()) throw std::invalid_argument("evaluate: empty validation window");
    Evaluation out;
    std::vector<double> simple;
    double growth = 1.0;
    for (const auto& w : validation_windows) {
        auto episode = run_episode(env, agent, w);
        out.timestamps.insert(out.timestamps.end(), episode.timestamps.begin(), episode.timestamps.end());
        out.returns.push_back(0.0);
        out.returns.insert(out.returns.end(), episode.rewards.begin(), episode.rewards.end());
        for (std::size_t t = 1; t < episode.equity.size(); ++t) {
            const double r = (episode.equity[t] - episode.equity[t - 1]) / episode.equity[t - 1];
            simple.push_back(r);
            growth *= 1.0 + r;
        }
        out.episode_metrics.push_back(compute_metrics(episode.equity));
        out.episodes.push_back(std::move(episode));
    }
    out.metrics = metrics_from_simple_returns(simple, growth - 1.0);
    return out;
}

std::vector<TrialReturns> parse_external_trials(std::string_view text, std::string_view source) {
    const auto table = io::parse_csv(text, source);
    const auto c_trial = table.require_column("trial_id", source);
    const auto c_split = table.require_column("split_id", source);
    const auto c_ts = table.require_column("timestamp", source);
    const auto c_ret = table.require_column("return", source);

    std::vector<std::string> trial_ids;
    std::map<std::string, std::map<std::pair<std::size_t, std::int64_t>, double>> cells;
    std::set<std::pair<std::size_t, std::int64_t>> all_cells;

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto where = std::string(source) + ": line " + std::to_string(table.line_numbers[r]);
        const auto& trial = row[c_trial];
        if (trial.empty()) throw DataError(where + ": empty trial_id");
        const auto split = io::parse_int(row[c_split]);
        if (!split || *split < 0) throw DataError(where + ": split_id must be a non-negative integer");
        const auto ts = io::parse_timestamp(row[c_ts]);
        if (!ts) throw DataError(where + ": bad timestamp '" + row[c_ts] + "'");
        const auto ret = io::parse_double(row[c_ret]);
        if (!ret || !std::isfinite(*ret)) throw DataError(where + ": return must be a finite number");

        if (!cells.contains(trial)) trial_ids.push_back(trial);
        const std::pair key{static_cast<std::size_t>(*split), *ts};
        if (!cells[trial].emplace(key, *ret).second) {
            throw DataError(where + ": duplicate cell (trial " + trial + ", split " + std::to_string(key.first) +
                            ", timestamp " + std::to_string(key.second) + ")");
        }
        all_cells.insert(key);
    }
    if (trial_ids.empty()) throw DataError(std::string(source) + ": no trials");

    std::vector<TrialReturns> out;
    const std::size_t num_splits = all_cells.rbegin()->first + 1;
    for (const auto& id : trial_ids) {
        const auto& mine = cells.at(id);
        for (const auto& cell : all_cells) {
            if (!mine.contains(cell)) {
                throw DataError(std::string(source) + ": ragged coverage, trial " + id + " has no return for split " +
                                std::to_string(cell.first) + ", timestamp " + std::to_string(cell.second));
            }
        }
        TrialReturns tr;
        tr.trial_id = id;
        tr.splits.resize(num_splits);
        for (const auto& [key, value] : mine) {
            tr.splits[key.first].timestamps.push_back(key.second);
            tr.splits[key.first].returns.push_back(value);
        }
        out.push_back(std::move(tr));
    }
    return out;
}

std::vector<TrialReturns> import_external_trials(const std::filesystem::path& path) {
    return parse_external_trials(io::read_file(path), path.string());
}

}  // namespace pboguard
