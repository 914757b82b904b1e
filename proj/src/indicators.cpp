#include "pboguard/indicators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace pboguard {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Bars of look-back the dominant-cycle estimator needs before its smoothed
// period settles (twice the 32-bar Hilbert lookback, minus one).
constexpr std::size_t kHtWarmup = 63;

struct NamedIndicator {
    const char* name;
    Indicator kind;
};

constexpr NamedIndicator kNames[] = {
    {"rsi", Indicator::Rsi},       {"macd", Indicator::Macd},   {"cci", Indicator::Cci},
    {"dx", Indicator::Dx},         {"roc", Indicator::Roc},     {"ultosc", Indicator::UltOsc},
    {"willr", Indicator::WillR},   {"obv", Indicator::Obv},     {"ht", Indicator::HtDcPeriod},
};

std::vector<std::string> split_colon(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ':')) parts.push_back(part);
    return parts;
}

void require_length(std::size_t n, std::size_t warmup, const char* what) {
    if (n <= warmup) {
        throw std::invalid_argument(std::string(what) + ": series of length " + std::to_string(n) +
                                    " does not exceed warm-up " + std::to_string(warmup));
    }
}

IndicatorSeries rsi(std::span<const double> close, int period) {
    const auto n = static_cast<std::size_t>(period);
    require_length(close.size(), n, "rsi");
    IndicatorSeries out{std::vector<double>(close.size(), kNaN), n};

    auto value = [](double gain, double loss) {
        if (loss == 0.0 && gain == 0.0) return 50.0;
        if (loss == 0.0) return 100.0;
        if (gain == 0.0) return 0.0;
        return 100.0 - 100.0 / (1.0 + gain / loss);
    };

    double gain = 0.0, loss = 0.0;
    for (std::size_t t = 1; t <= n; ++t) {
        const double d = close[t] - close[t - 1];
        if (d > 0) gain += d; else loss -= d;
    }
    gain /= period;
    loss /= period;
    out.values[n] = value(gain, loss);
    for (std::size_t t = n + 1; t < close.size(); ++t) {
        const double d = close[t] - close[t - 1];
        gain = (gain * (period - 1) + std::max(d, 0.0)) / period;
        loss = (loss * (period - 1) + std::max(-d, 0.0)) / period;
        out.values[t] = value(gain, loss);
    }
    return out;
}

// EMA seeded with the simple mean of its first `period` inputs, starting at
// input index `start`. Entries before start + period - 1 are NaN.
std::vector<double> ema(std::span<const double> x, std::size_t start, int period) {
    std::vector<double> out(x.size(), kNaN);
    const auto n = static_cast<std::size_t>(period);
    if (start + n > x.size()) return out;
    double seed = 0.0;
    for (std::size_t t = start; t < start + n; ++t) seed += x[t];
    double e = seed / period;
    out[start + n - 1] = e;
    const double k = 2.0 / (period + 1.0);
    for (std::size_t t = start + n; t < x.size(); ++t) {
        e = k * x[t] + (1.0 - k) * e;
        out[t] = e;
    }
    return out;
}

IndicatorSeries macd(std::span<const double> close, int fast, int slow, int signal) {
    if (fast >= slow) throw std::invalid_argument("macd: fast period must be shorter than slow period");
    const auto warmup = static_cast<std::size_t>(slow + signal - 2);
    require_length(close.size(), warmup, "macd");
    const auto fast_ema = ema(close, 0, fast);
    const auto slow_ema = ema(close, 0, slow);
    IndicatorSeries out{std::vector<double>(close.size(), kNaN), warmup};
    for (std::size_t t = warmup; t < close.size(); ++t) out.values[t] = fast_ema[t] - slow_ema[t];
    return out;
}

IndicatorSeries cci(std::span<const double> high, std::span<const double> low, std::span<const double> close,
                    int period) {
    const auto n = static_cast<std::size_t>(period);
    require_length(close.size(), n - 1, "cci");
    std::vector<double> tp(close.size());
    for (std::size_t t = 0; t < tp.size(); ++t) tp[t] = (high[t] + low[t] + close[t]) / 3.0;
    IndicatorSeries out{std::vector<double>(close.size(), kNaN), n - 1};
    for (std::size_t t = n - 1; t < tp.size(); ++t) {
        double mean = 0.0;
        for (std::size_t j = t + 1 - n; j <= t; ++j) mean += tp[j];
        mean /= period;
        double dev = 0.0;
        for (std::size_t j = t + 1 - n; j <= t; ++j) dev += std::abs(tp[j] - mean);
        dev /= period;
        out.values[t] = dev == 0.0 ? 0.0 : (tp[t] - mean) / (0.015 * dev);
    }
    return out;
}

IndicatorSeries dx(std::span<const double> high, std::span<const double> low, std::span<const double> close,
                   int period) {
    const auto n = static_cast<std::size_t>(period);
    require_length(close.size(), n, "dx");
    IndicatorSeries out{std::vector<double>(close.size(), kNaN), n};

    auto moves = [&](std::size_t t, double& plus, double& minus, double& tr) {
        const double up = high[t] - high[t - 1];
        const double down = low[t - 1] - low[t];
        plus = (up > down && up > 0.0) ? up : 0.0;
        minus = (down > up && down > 0.0) ? down : 0.0;
        tr = std::max({high[t] - low[t], std::abs(high[t] - close[t - 1]), std::abs(low[t] - close[t - 1])});
    };
    auto value = [](double sp, double sm, double st) {
        if (st == 0.0) return 0.0;
        const double pdi = 100.0 * sp / st;
        const double mdi = 100.0 * sm / st;
        return pdi + mdi == 0.0 ? 0.0 : 100.0 * std::abs(pdi - mdi) / (pdi + mdi);
    };

    double sp = 0.0, sm = 0.0, st = 0.0;
    for (std::size_t t = 1; t <= n; ++t) {
        double p, m, r;
        moves(t, p, m, r);
        sp += p;
        sm += m;
        st += r;
    }
    out.values[n] = value(sp, sm, st);
    for (std::size_t t = n + 1; t < close.size(); ++t) {
        double p, m, r;
        moves(t, p, m, r);
        sp = sp - sp / period + p;
        sm = sm - sm / period + m;
        st = st - st / period + r;
        out.values[t] = value(sp, sm, st);
    }
    return out;
}

IndicatorSeries roc(std::span<const double> close, int period) {
    const auto n = static_cast<std::size_t>(period);
    require_length(close.size(), n, "roc");
    IndicatorSeries out{std::vector<double>(close.size(), kNaN), n};
    for (std::size_t t = n; t < close.size(); ++t) out.values[t] = 100.0 * (close[t] / close[t - n] - 1.0);
    return out;
}

IndicatorSeries ultosc(std::span<const double> high, std::span<const double> low, std::span<const double> close,
                       int p1, int p2, int p3) {
    const auto longest = static_cast<std::size_t>(std::max({p1, p2, p3}));
    require_length(close.size(), longest, "ultosc");
    std::vector<double> bp(close.size(), 0.0), tr(close.size(), 0.0);
    for (std::size_t t = 1; t < close.size(); ++t) {
        const double true_low = std::min(low[t], close[t - 1]);
        bp[t] = close[t] - true_low;
        tr[t] = std::max(high[t], close[t - 1]) - true_low;
    }
    auto average = [&](std::size_t t, int period) {
        double b = 0.0, r = 0.0;
        for (std::size_t j = t + 1 - static_cast<std::size_t>(period); j <= t; ++j) {
            b += bp[j];
            r += tr[j];
        }
        return r == 0.0 ? 0.0 : b / r;
    };
    IndicatorSeries out{std::vector<double>(close.size(), kNaN), longest};
    for (std::size_t t = longest; t < close.size(); ++t) {
        out.values[t] = 100.0 * (4.0 * average(t, p1) + 2.0 * average(t, p2) + average(t, p3)) / 7.0;
    }
    return out;
}

IndicatorSeries willr(std::span<const double> high, std::span<const double> low, std::span<const double> close,
                      int period) {
    const auto n = static_cast<std::size_t>(period);
    require_length(close.size(), n - 1, "willr");
    IndicatorSeries out{std::vector<double>(close.size(), kNaN), n - 1};
    for (std::size_t t = n - 1; t < close.size(); ++t) {
        double hh = high[t], ll = low[t];
        for (std::size_t j = t + 1 - n; j < t; ++j) {
            hh = std::max(hh, high[j]);
            ll = std::min(ll, low[j]);
        }
        out.values[t] = hh == ll ? 0.0 : -100.0 * (hh - close[t]) / (hh - ll);
    }
    return out;
}

IndicatorSeries obv(std::span<const double> close, std::span<const double> volume) {
    IndicatorSeries out{std::vector<double>(close.size(), 0.0), 0};
    for (std::size_t t = 1; t < close.size(); ++t) {
        double v = out.values[t - 1];
        if (close[t] > close[t - 1]) v += volume[t];
        else if (close[t] < close[t - 1]) v -= volume[t];
        out.values[t] = v;
    }
    return out;
}

// Ehlers' homodyne dominant-cycle period: WMA(4) smoothing, Hilbert
// transform into in-phase and quadrature components, phase advance between
// successive bars, then rate limiting and exponential smoothing.
IndicatorSeries ht_dcperiod(std::span<const double> price) {
    const std::size_t n = price.size();
    require_length(n, kHtWarmup, "ht");

    std::vector<double> smooth(n, 0.0), detrender(n, 0.0), i1(n, 0.0), q1(n, 0.0);
    double i2_prev = 0.0, q2_prev = 0.0, re_prev = 0.0, im_prev = 0.0;
    double period = 0.0, smooth_period = 0.0;
    IndicatorSeries out{std::vector<double>(n, kNaN), kHtWarmup};

    auto lag = [](const std::vector<double>& v, std::size_t t, std::size_t k) { return t >= k ? v[t - k] : 0.0; };
    auto hilbert = [&](const std::vector<double>& v, std::size_t t, double adjust) {
        return (0.0962 * v[t] + 0.5769 * lag(v, t, 2) - 0.5769 * lag(v, t, 4) - 0.0962 * lag(v, t, 6)) * adjust;
    };

    for (std::size_t t = 0; t < n; ++t) {
        smooth[t] = t >= 3 ? (4.0 * price[t] + 3.0 * price[t - 1] + 2.0 * price[t - 2] + price[t - 3]) / 10.0
                           : price[t];
        const double adjust = 0.075 * period + 0.54;
        detrender[t] = hilbert(smooth, t, adjust);
        q1[t] = hilbert(detrender, t, adjust);
        i1[t] = lag(detrender, t, 3);

        const double ji = hilbert(i1, t, adjust);
        const double jq = hilbert(q1, t, adjust);
        double i2 = i1[t] - jq;
        double q2 = q1[t] + ji;
        i2 = 0.2 * i2 + 0.8 * i2_prev;
        q2 = 0.2 * q2 + 0.8 * q2_prev;

        double re = i2 * i2_prev + q2 * q2_prev;
        double im = i2 * q2_prev - q2 * i2_prev;
        re = 0.2 * re + 0.8 * re_prev;
        im = 0.2 * im + 0.8 * im_prev;
        i2_prev = i2;
        q2_prev = q2;
        re_prev = re;
        im_prev = im;

        double next = period;
        if (im != 0.0 && re != 0.0) next = 360.0 / (std::atan(im / re) * 180.0 / std::numbers::pi);
        next = std::min(next, 1.5 * period);
        next = std::max(next, 0.67 * period);
        next = std::clamp(next, 6.0, 50.0);
        period = 0.2 * next + 0.8 * period;
        smooth_period = 0.33 * period + 0.67 * smooth_period;
        if (t >= kHtWarmup) out.values[t] = smooth_period;
    }
    return out;
}

}  // namespace

IndicatorSpec IndicatorSpec::parse(const std::string& text) {
    const auto parts = split_colon(text);
    if (parts.empty()) throw std::invalid_argument("empty indicator name");
    std::string name = parts[0];
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    if (name == "ht_dcperiod") name = "ht";
    if (name == "ultsoc") name = "ultosc";

    IndicatorSpec spec;
    bool found = false;
    for (const auto& entry : kNames) {
        if (name == entry.name) {
            spec.kind = entry.kind;
            found = true;
        }
    }
    if (!found) throw std::invalid_argument("unknown indicator '" + parts[0] + "'");

    int* slots[] = {&spec.period, &spec.period2, &spec.period3};
    if (parts.size() > 4) throw std::invalid_argument("too many periods in '" + text + "'");
    for (std::size_t i = 1; i < parts.size(); ++i) {
        try {
            std::size_t used = 0;
            *slots[i - 1] = std::stoi(parts[i], &used);
            if (used != parts[i].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw std::invalid_argument("bad period '" + parts[i] + "' in '" + text + "'");
        }
        if (*slots[i - 1] < 1) throw std::invalid_argument("periods must be >= 1 in '" + text + "'");
    }
    return spec;
}

std::string IndicatorSpec::name() const {
    for (const auto& entry : kNames) {
        if (entry.kind == kind) return entry.name;
    }
    return "?";
}

IndicatorSeries compute_indicator(std::span<const double> high, std::span<const double> low,
                                  std::span<const double> close, std::span<const double> volume,
                                  const IndicatorSpec& spec) {
    if (high.size() != close.size() || low.size() != close.size() || volume.size() != close.size()) {
        throw std::invalid_argument("compute_indicator: input length mismatch");
    }
    auto or_default = [](int v, int d) { return v > 0 ? v : d; };
    if (spec.period < 0 || spec.period2 < 0 || spec.period3 < 0) {
        throw std::invalid_argument("compute_indicator: periods must be >= 1");
    }
    switch (spec.kind) {
        case Indicator::Rsi: return rsi(close, or_default(spec.period, 14));
        case Indicator::Macd:
            return macd(close, or_default(spec.period, 12), or_default(spec.period2, 26), or_default(spec.period3, 9));
        case Indicator::Cci: return cci(high, low, close, or_default(spec.period, 20));
        case Indicator::Dx: return dx(high, low, close, or_default(spec.period, 14));
        case Indicator::Roc: return roc(close, or_default(spec.period, 10));
        case Indicator::UltOsc:
            return ultosc(high, low, close, or_default(spec.period, 7), or_default(spec.period2, 14),
                          or_default(spec.period3, 28));
        case Indicator::WillR: return willr(high, low, close, or_default(spec.period, 14));
        case Indicator::Obv: return obv(close, volume);
        case Indicator::HtDcPeriod: return ht_dcperiod(close);
    }
    throw std::invalid_argument("unknown indicator");
}

IndicatorSeries compute_indicator(const Panel& panel, std::size_t asset, const IndicatorSpec& spec) {
    const auto bars = panel.bars(asset);
    std::vector<double> high(bars.size()), low(bars.size()), close(bars.size()), volume(bars.size());
    for (std::size_t t = 0; t < bars.size(); ++t) {
        high[t] = bars[t].high;
        low[t] = bars[t].low;
        close[t] = bars[t].close;
        volume[t] = bars[t].volume;
    }
    return compute_indicator(high, low, close, volume, spec);
}

std::vector<IndicatorSeries> compute_indicator(const Panel& panel, const IndicatorSpec& spec) {
    std::vector<IndicatorSeries> out;
    out.reserve(panel.num_assets());
    for (std::size_t a = 0; a < panel.num_assets(); ++a) out.push_back(compute_indicator(panel, a, spec));
    return out;
}

const std::vector<std::string>& canonical_feature_names() {
    static const std::vector<std::string> names = {"volume", "rsi",   "macd",  "cci", "dx",
                                                   "roc",    "ultosc", "willr", "obv", "ht"};
    return names;
}

FeatureMatrix compute_features(const Panel& panel, const std::vector<std::string>& names) {
    if (names.empty()) throw std::invalid_argument("compute_features: no features requested");
    const std::size_t T = panel.num_steps();
    const std::size_t D = panel.num_assets();
    const std::size_t I = names.size();

    // columns[i][a] holds feature i of asset a.
    std::vector<std::vector<std::vector<double>>> columns(I, std::vector<std::vector<double>>(D));
    std::size_t warmup = 0;
    for (std::size_t i = 0; i < I; ++i) {
        if (names[i] == "volume") {
            for (std::size_t a = 0; a < D; ++a) {
                auto& col = columns[i][a];
                col.resize(T);
                for (std::size_t t = 0; t < T; ++t) col[t] = panel.bar(a, t).volume;
            }
            continue;
        }
        const auto spec = IndicatorSpec::parse(names[i]);
        for (std::size_t a = 0; a < D; ++a) {
            auto series = compute_indicator(panel, a, spec);
            warmup = std::max(warmup, series.warmup);
            columns[i][a] = std::move(series.values);
        }
    }

    FeatureMatrix fm;
    fm.feature_names = names;
    fm.assets = panel.assets();
    fm.timestamps = panel.timestamps();
    fm.warmup = warmup;
    fm.values.resize(T * I * D);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t a = 0; a < D; ++a) {
            for (std::size_t i = 0; i < I; ++i) fm.values[t * I * D + a * I + i] = columns[i][a][t];
        }
    }
    return fm;
}

}  // namespace pboguard
