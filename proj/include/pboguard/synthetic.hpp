#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pboguard/market_data.hpp"

namespace pboguard {

// Seeded geometric random walks with persistent per-asset drift, plus a
// volatility index that spikes above the default halt threshold in a few
// bursts (asset volatility rises with it).
struct SyntheticSpec {
    std::size_t num_assets = 3;
    std::size_t num_steps = 2000;
    std::int64_t start = 1640995200;  // 2022-01-01T00:00:00Z
    std::int64_t bar_interval = 300;
    double drift_scale = 3e-4;    // per-asset drift ~ N(0, drift_scale) per bar
    double volatility = 4e-3;     // per-bar log-return std outside bursts
    std::vector<double> bursts = {0.3, 0.9};  // burst centers as fractions of T
    std::size_t burst_width = 40;
    std::uint64_t seed = 7;
};

struct TimeValue {
    std::int64_t timestamp = 0;
    double value = 0.0;
};

struct SyntheticMarket {
    std::vector<AssetSeries> assets;
    std::vector<double> drifts;
    std::vector<TimeValue> cvix;
    std::vector<TimeValue> index;  // equal-weight price index, starts at 1000
};

SyntheticMarket make_synthetic_market(const SyntheticSpec& spec);

std::string bars_to_csv(const AssetSeries& series);
// timestamp,value
std::string time_values_to_csv(const std::vector<TimeValue>& values);

// Writes <asset>.csv per asset, cvix.csv, index.csv and a config.toml that
// runs the full pipeline on them with a reduced hyperparameter grid.
void write_synthetic_dataset(const SyntheticMarket& market, const std::filesystem::path& dir);

}  // namespace pboguard
