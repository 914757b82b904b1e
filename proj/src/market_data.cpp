#include "pboguard/market_data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "pboguard/error.hpp"
#include "pboguard/io.hpp"

namespace pboguard {

Panel::Panel(std::vector<std::string> assets, std::vector<std::int64_t> timestamps,
             std::vector<std::vector<Bar>> bars, std::int64_t bar_interval)
    : assets_(std::move(assets)),
      timestamps_(std::move(timestamps)),
      bars_(std::move(bars)),
      bar_interval_(bar_interval) {
    if (assets_.empty()) throw std::invalid_argument("panel needs at least one asset");
    if (timestamps_.size() < 2) throw std::invalid_argument("panel needs at least two time steps");
    if (bars_.size() != assets_.size()) throw std::invalid_argument("panel: one bar series per asset required");
    for (std::size_t a = 0; a < bars_.size(); ++a) {
        if (bars_[a].size() != timestamps_.size()) {
            throw std::invalid_argument("panel: asset '" + assets_[a] + "' has a missing cell");
        }
        for (std::size_t t = 0; t < timestamps_.size(); ++t) {
            if (bars_[a][t].timestamp != timestamps_[t]) {
                throw std::invalid_argument("panel: asset '" + assets_[a] + "' is not time-aligned");
            }
        }
    }
    for (std::size_t t = 1; t < timestamps_.size(); ++t) {
        if (timestamps_[t] <= timestamps_[t - 1]) {
            throw std::invalid_argument("panel: timestamps must be strictly increasing");
        }
    }
}

std::vector<double> Panel::closes_at(std::size_t t) const {
    std::vector<double> out(assets_.size());
    for (std::size_t a = 0; a < assets_.size(); ++a) out[a] = bars_[a][t].close;
    return out;
}

std::size_t Panel::lower_bound(std::int64_t ts) const {
    return static_cast<std::size_t>(std::lower_bound(timestamps_.begin(), timestamps_.end(), ts) -
                                    timestamps_.begin());
}

std::vector<double> FeatureMatrix::column(std::size_t asset, std::size_t feature) const {
    std::vector<double> out(num_rows());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = at(t, asset, feature);
    return out;
}

namespace {

[[noreturn]] void bad_cell(std::string_view source, std::size_t line, std::string_view column,
                           const std::string& what) {
    std::ostringstream ss;
    ss << source << ": line " << line << ", column '" << column << "': " << what;
    throw DataError(ss.str());
}

}  // namespace

AssetSeries parse_bars_csv(std::string_view text, const CsvSchema& schema, std::string asset_name,
                           std::string_view source) {
    const auto table = io::parse_csv(text, source);
    const auto c_ts = table.require_column(schema.timestamp, source);
    const auto c_open = table.require_column(schema.open, source);
    const auto c_high = table.require_column(schema.high, source);
    const auto c_low = table.require_column(schema.low, source);
    const auto c_close = table.require_column(schema.close, source);
    const auto c_volume = table.require_column(schema.volume, source);

    AssetSeries series;
    series.asset = std::move(asset_name);
    series.bars.reserve(table.rows.size());

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        Bar bar;
        const auto ts = io::parse_timestamp(row[c_ts]);
        if (!ts) bad_cell(source, line, schema.timestamp, "cannot parse timestamp '" + row[c_ts] + "'");
        bar.timestamp = *ts;

        auto number = [&](std::size_t col, const std::string& name) {
            const auto v = io::parse_double(row[col]);
            if (!v || !std::isfinite(*v)) bad_cell(source, line, name, "not a finite number '" + row[col] + "'");
            return *v;
        };
        bar.open = number(c_open, schema.open);
        bar.high = number(c_high, schema.high);
        bar.low = number(c_low, schema.low);
        bar.close = number(c_close, schema.close);
        bar.volume = number(c_volume, schema.volume);

        if (bar.open <= 0.0) bad_cell(source, line, schema.open, "price must be positive");
        if (bar.high <= 0.0) bad_cell(source, line, schema.high, "price must be positive");
        if (bar.low <= 0.0) bad_cell(source, line, schema.low, "price must be positive");
        if (bar.close <= 0.0) bad_cell(source, line, schema.close, "price must be positive");
        if (bar.volume < 0.0) bad_cell(source, line, schema.volume, "volume must be non-negative");
        if (bar.low > std::min(bar.open, bar.close)) {
            bad_cell(source, line, schema.low, "low exceeds min(open, close)");
        }
        if (bar.high < std::max(bar.open, bar.close)) {
            bad_cell(source, line, schema.high, "high below max(open, close)");
        }

        if (!series.bars.empty()) {
            const auto prev = series.bars.back().timestamp;
            if (bar.timestamp == prev) {
                bad_cell(source, line, schema.timestamp, "duplicate timestamp " + std::to_string(bar.timestamp));
            }
            if (bar.timestamp < prev) {
                bad_cell(source, line, schema.timestamp, "timestamps are not increasing");
            }
        }
        series.bars.push_back(bar);
    }
    return series;
}

AssetSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema, std::string asset_name) {
    if (asset_name.empty()) asset_name = path.stem().string();
    return parse_bars_csv(io::read_file(path), schema, std::move(asset_name), path.string());
}

AlignResult align(const std::vector<AssetSeries>& series_list, std::size_t min_rows) {
    if (series_list.empty()) throw std::invalid_argument("align: no series given");

    std::vector<std::int64_t> common;
    common.reserve(series_list.front().bars.size());
    for (const auto& bar : series_list.front().bars) common.push_back(bar.timestamp);

    for (std::size_t s = 1; s < series_list.size(); ++s) {
        std::vector<std::int64_t> next;
        const auto& bars = series_list[s].bars;
        std::size_t i = 0, j = 0;
        while (i < common.size() && j < bars.size()) {
            if (common[i] < bars[j].timestamp) {
                ++i;
            } else if (bars[j].timestamp < common[i]) {
                ++j;
            } else {
                next.push_back(common[i]);
                ++i;
                ++j;
            }
        }
        common = std::move(next);
    }

    if (common.empty()) throw DataError("align: empty timestamp intersection");
    if (common.size() < std::max<std::size_t>(min_rows, 2)) {
        throw DataError("align: intersection has " + std::to_string(common.size()) +
                        " rows, minimum is " + std::to_string(std::max<std::size_t>(min_rows, 2)));
    }

    std::vector<std::string> names;
    std::vector<std::vector<Bar>> grid;
    std::vector<std::size_t> dropped;
    for (const auto& series : series_list) {
        std::vector<Bar> kept;
        kept.reserve(common.size());
        std::size_t j = 0;
        for (const auto& bar : series.bars) {
            if (j < common.size() && bar.timestamp == common[j]) {
                kept.push_back(bar);
                ++j;
            }
        }
        dropped.push_back(series.bars.size() - kept.size());
        names.push_back(series.asset);
        grid.push_back(std::move(kept));
    }

    std::int64_t interval = common[1] - common[0];
    for (std::size_t t = 2; t < common.size(); ++t) interval = std::min(interval, common[t] - common[t - 1]);

    return AlignResult{Panel(std::move(names), std::move(common), std::move(grid), interval), std::move(dropped)};
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("pearson: fewer than 2 observations");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("pearson: constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationReport pearson_matrix(const FeatureMatrix& features) {
    const std::size_t n = features.num_features();
    const std::size_t rows = features.num_rows();
    if (rows < features.warmup + 2) {
        throw DataError("pearson_matrix: fewer than 2 rows outside the warm-up region");
    }

    CorrelationReport report;
    report.feature_names = features.feature_names;
    report.matrix.assign(n * n, 0.0);

    std::vector<std::vector<double>> cols(n);
    for (std::size_t a = 0; a < features.num_assets(); ++a) {
        for (std::size_t i = 0; i < n; ++i) {
            auto full = features.column(a, i);
            cols[i].assign(full.begin() + static_cast<std::ptrdiff_t>(features.warmup), full.end());
            const auto [lo, hi] = std::minmax_element(cols[i].begin(), cols[i].end());
            if (*lo == *hi) throw DataError("pearson_matrix: constant column '" + features.column_name(a, i) + "'");
            for (double v : cols[i]) {
                if (!std::isfinite(v)) {
                    throw DataError("pearson_matrix: non-finite value in column '" + features.column_name(a, i) + "'");
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) report.matrix[i * n + j] += pearson(cols[i], cols[j]);
        }
    }

    const double d = static_cast<double>(features.num_assets());
    for (std::size_t i = 0; i < n; ++i) {
        report.matrix[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double rho = std::clamp(report.matrix[i * n + j] / d, -1.0, 1.0);
            report.matrix[i * n + j] = rho;
            report.matrix[j * n + i] = rho;
        }
    }
    return report;
}

FilterResult correlation_filter(const CorrelationReport& report, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
        throw std::invalid_argument("correlation_filter: threshold must lie in [0, 1]");
    }
    const std::size_t n = report.feature_names.size();
    if (report.matrix.size() != n * n) throw std::invalid_argument("correlation_filter: malformed report");

    FilterResult result;
    std::vector<std::size_t> kept_idx;
    for (std::size_t i = 0; i < n; ++i) {
        bool drop = false;
        for (std::size_t k : kept_idx) {
            const double rho = report.at(i, k);
            if (std::abs(rho) > threshold) {
                result.dropped.push_back({report.feature_names[i], report.feature_names[k], rho});
                drop = true;
                break;
            }
        }
        if (!drop) {
            kept_idx.push_back(i);
            result.kept.push_back(report.feature_names[i]);
        }
    }
    return result;
}

CorrelationReport filtered_report(const FeatureMatrix& features, double threshold) {
    auto report = pearson_matrix(features);
    auto filtered = correlation_filter(report, threshold);
    report.threshold = threshold;
    report.kept = std::move(filtered.kept);
    report.dropped = std::move(filtered.dropped);
    return report;
}

CorrelationReport restrict_report(const CorrelationReport& report, const std::vector<std::string>& names) {
    const std::size_t n = report.feature_names.size();
    std::vector<std::size_t> idx;
    for (const auto& name : names) {
        const auto it = std::find(report.feature_names.begin(), report.feature_names.end(), name);
        if (it == report.feature_names.end()) throw std::invalid_argument("restrict_report: unknown feature '" + name + "'");
        idx.push_back(static_cast<std::size_t>(it - report.feature_names.begin()));
    }
    CorrelationReport out;
    out.feature_names = names;
    out.threshold = report.threshold;
    out.matrix.resize(idx.size() * idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < idx.size(); ++j) out.matrix[i * idx.size() + j] = report.matrix[idx[i] * n + idx[j]];
    }
    return out;
}

FeatureMatrix select_features(const FeatureMatrix& features, const std::vector<std::string>& kept) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < features.num_features(); ++i) {
        if (std::find(kept.begin(), kept.end(), features.feature_names[i]) != kept.end()) idx.push_back(i);
    }
    for (const auto& name : kept) {
        if (std::find(features.feature_names.begin(), features.feature_names.end(), name) ==
            features.feature_names.end()) {
            throw std::invalid_argument("select_features: unknown feature '" + name + "'");
        }
    }
    FeatureMatrix out;
    out.assets = features.assets;
    out.timestamps = features.timestamps;
    out.warmup = features.warmup;
    for (std::size_t i : idx) out.feature_names.push_back(features.feature_names[i]);
    out.values.reserve(out.num_rows() * out.num_columns());
    for (std::size_t t = 0; t < features.num_rows(); ++t) {
        for (std::size_t a = 0; a < features.num_assets(); ++a) {
            for (std::size_t i : idx) out.values.push_back(features.at(t, a, i));
        }
    }
    return out;
}

FeatureMatrix slice_rows(const FeatureMatrix& features, std::size_t begin, std::size_t end) {
    if (begin > end || end > features.num_rows()) throw std::invalid_argument("slice_rows: range out of bounds");
    FeatureMatrix out;
    out.feature_names = features.feature_names;
    out.assets = features.assets;
    out.timestamps.assign(features.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          features.timestamps.begin() + static_cast<std::ptrdiff_t>(end));
    const std::size_t w = features.num_columns();
    out.values.assign(features.values.begin() + static_cast<std::ptrdiff_t>(begin * w),
                      features.values.begin() + static_cast<std::ptrdiff_t>(end * w));
    out.warmup = features.warmup > begin ? std::min(features.warmup - begin, end - begin) : 0;
    return out;
}

std::string feature_matrix_to_csv(const FeatureMatrix& features) {
    std::string out = "timestamp";
    for (std::size_t a = 0; a < features.num_assets(); ++a) {
        for (std::size_t i = 0; i < features.num_features(); ++i) out += "," + features.column_name(a, i);
    }
    out += "\n";
    for (std::size_t t = 0; t < features.num_rows(); ++t) {
        out += std::to_string(features.timestamps[t]);
        for (double v : features.row(t)) {
            out += ",";
            out += io::format_double(v);
        }
        out += "\n";
    }
    return out;
}

}  // namespace pboguard
