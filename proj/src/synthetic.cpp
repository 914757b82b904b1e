#include "pboguard/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pboguard/io.hpp"
#include "pboguard/rng.hpp"

namespace pboguard {

SyntheticMarket make_synthetic_market(const SyntheticSpec& spec) {
    if (spec.num_assets == 0 || spec.num_steps < 2) throw std::invalid_argument("synthetic: need D >= 1 and T >= 2");
    if (!(spec.volatility > 0.0) || spec.bar_interval <= 0) {
        throw std::invalid_argument("synthetic: volatility and bar interval must be positive");
    }
    const std::size_t T = spec.num_steps;
    Rng rng(spec.seed);
    SyntheticMarket m;

    // Volatility index: mean-reverting around 60 with bursts above 90.1.
    std::vector<double> burst(T, 0.0);
    for (double center : spec.bursts) {
        const auto c = static_cast<double>(center * static_cast<double>(T));
        const double half = static_cast<double>(spec.burst_width) / 2.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double d = (static_cast<double>(t) - c) / std::max(half, 1.0);
            if (std::abs(d) <= 1.0) burst[t] = std::max(burst[t], 1.0 - d * d);
        }
    }
    double level = 60.0;
    m.cvix.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        level = 60.0 + 0.97 * (level - 60.0) + rng.normal();
        m.cvix.push_back({spec.start + static_cast<std::int64_t>(t) * spec.bar_interval,
                          std::clamp(level, 20.0, 89.0) + 45.0 * burst[t]});
    }

    std::vector<std::vector<double>> closes(spec.num_assets, std::vector<double>(T));
    for (std::size_t a = 0; a < spec.num_assets; ++a) {
        AssetSeries s;
        s.asset = "SYN" + std::to_string(a);
        const double drift = spec.drift_scale * rng.normal();
        m.drifts.push_back(drift);
        double price = 100.0 * std::exp(0.5 * rng.normal());
        for (std::size_t t = 0; t < T; ++t) {
            const double vol = spec.volatility * (1.0 + 3.0 * burst[t]);
            const double r = drift + vol * rng.normal();
            Bar b;
            b.timestamp = spec.start + static_cast<std::int64_t>(t) * spec.bar_interval;
            b.open = price;
            b.close = price * std::exp(r);
            b.high = std::max(b.open, b.close) * std::exp(0.5 * vol * std::abs(rng.normal()));
            b.low = std::min(b.open, b.close) * std::exp(-0.5 * vol * std::abs(rng.normal()));
            b.volume = 1000.0 * std::exp(0.3 * rng.normal()) * (1.0 + 50.0 * std::abs(r));
            price = b.close;
            closes[a][t] = b.close;
            s.bars.push_back(b);
        }
        m.assets.push_back(std::move(s));
    }

    m.index.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        double v = 0.0;
        for (std::size_t a = 0; a < spec.num_assets; ++a) v += closes[a][t] / closes[a][0];
        m.index.push_back({m.cvix[t].timestamp, 1000.0 * v / static_cast<double>(spec.num_assets)});
    }
    return m;
}

std::string bars_to_csv(const AssetSeries& series) {
    std::string out = "timestamp,open,high,low,close,volume\n";
    for (const auto& b : series.bars) {
        out += std::to_string(b.timestamp) + "," + io::format_double(b.open) + "," + io::format_double(b.high) + "," +
               io::format_double(b.low) + "," + io::format_double(b.close) + "," + io::format_double(b.volume) + "\n";
    }
    return out;
}

std::string time_values_to_csv(const std::vector<TimeValue>& values) {
    std::string out = "timestamp,value\n";
    for (const auto& v : values) out += std::to_string(v.timestamp) + "," + io::format_double(v.value) + "\n";
    return out;
}

void write_synthetic_dataset(const SyntheticMarket& market, const std::filesystem::path& dir) {
    std::string assets;
    for (const auto& s : market.assets) {
        io::write_file(dir / (s.asset + ".csv"), bars_to_csv(s));
        assets += std::string(assets.empty() ? "" : ", ") + "\"" + s.asset + ".csv\"";
    }
    io::write_file(dir / "cvix.csv", time_values_to_csv(market.cvix));
    io::write_file(dir / "index.csv", time_values_to_csv(market.index));

    const std::size_t T = market.cvix.size();
    const std::int64_t split_ts = market.cvix[T * 4 / 5].timestamp;
    std::string config;
    config += "# Synthetic market, reduced grid so the full pipeline runs in seconds.\n\n";
    config += "[data]\nassets = [" + assets + "]\ncvix = \"cvix.csv\"\nindex = \"index.csv\"\n\n";
    config += "[windows]\ntrain_end = \"" + io::format_iso8601(split_ts) + "\"\ntest_start = \"" +
              io::format_iso8601(split_ts) + "\"\n\n";
    config += "[env]\ninitial_cash = 1000000.0\nfee_rate = 0.003\ncvix_threshold = 90.1\n\n";
    config += "[features]\nthreshold = 0.6\n\n";
    config += "[splits]\nschemes = [\"combinatorial\"]\nN = 5\nk = 2\n\n";
    config += "[trials]\nH = 10\nsampler = \"random\"\nmaster_seed = 2022\n\n";
    config += "[trials.grid]\n";
    config += "step_size = [3e-2, 1.5e-2, 5e-6]\n";
    config += "batch_size = [512, 1280]\n";
    config += "gamma = [0.95, 0.99]\n";
    config += "net_dimension = [512, 1024]\n";
    config += "target_step = [1250, 2500]\n";
    config += "break_step = [4000, 8000]\n\n";
    config += "[pbo]\nS = 14\nmetric = \"sharpe\"\nalpha = 0.10\n\n";
    config += "[output]\ndir = \"out\"\ntest_all_trials = true\n";
    io::write_file(dir / "config.toml", config);
}

}  // namespace pboguard
