#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pboguard/market_data.hpp"

namespace pboguard {

// Indicator identifiers. Order matches the canonical feature order used by
// the correlation filter (raw volume comes first and is not an indicator).
enum class Indicator { Rsi, Macd, Cci, Dx, Roc, UltOsc, WillR, Obv, HtDcPeriod };

// Name plus period parameters. Unused periods are ignored; defaults follow the
// common definitions: RSI 14, MACD 12/26/9, CCI 20, DX 14, ROC 10,
// ULTOSC 7/14/28, WILLR 14.
struct IndicatorSpec {
    Indicator kind = Indicator::Rsi;
    int period = 0;   // 0 selects the default single period
    int period2 = 0;  // MACD slow, ULTOSC medium
    int period3 = 0;  // MACD signal, ULTOSC long

    static IndicatorSpec parse(const std::string& name);  // "rsi", "rsi:14", "macd:12:26:9"
    std::string name() const;
};

struct IndicatorSeries {
    std::vector<double> values;  // length T; entries [0, warmup) are warm-up
    std::size_t warmup = 0;
};

// Output for one asset of the panel.
IndicatorSeries compute_indicator(const Panel& panel, std::size_t asset, const IndicatorSpec& spec);
// Output for every asset of the panel.
std::vector<IndicatorSeries> compute_indicator(const Panel& panel, const IndicatorSpec& spec);

// Same computation directly on bar fields (all spans of equal length).
IndicatorSeries compute_indicator(std::span<const double> high, std::span<const double> low,
                                  std::span<const double> close, std::span<const double> volume,
                                  const IndicatorSpec& spec);

// Base feature names in canonical order.
const std::vector<std::string>& canonical_feature_names();

// Builds the feature matrix for the named base features ("volume" or an
// indicator spec string). Warm-up is the maximum over all features.
FeatureMatrix compute_features(const Panel& panel, const std::vector<std::string>& names);

}  // namespace pboguard
