#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pboguard {

struct Bar {
    std::int64_t timestamp = 0;  // epoch seconds, UTC
    double open = 0.0;
    double high = 0.0;
    double low = 0.0;
    double close = 0.0;
    double volume = 0.0;
};

struct AssetSeries {
    std::string asset;
    std::vector<Bar> bars;
};

// Column names used to locate OHLCV fields in an input CSV.
struct CsvSchema {
    std::string timestamp = "timestamp";
    std::string open = "open";
    std::string high = "high";
    std::string low = "low";
    std::string close = "close";
    std::string volume = "volume";
};

// D assets sharing one timestamp vector of length T. Immutable once built.
class Panel {
public:
    Panel(std::vector<std::string> assets, std::vector<std::int64_t> timestamps,
          std::vector<std::vector<Bar>> bars, std::int64_t bar_interval);

    std::size_t num_assets() const { return assets_.size(); }
    std::size_t num_steps() const { return timestamps_.size(); }
    std::int64_t bar_interval() const { return bar_interval_; }

    const std::vector<std::string>& assets() const { return assets_; }
    const std::vector<std::int64_t>& timestamps() const { return timestamps_; }
    std::span<const Bar> bars(std::size_t asset) const { return bars_.at(asset); }
    const Bar& bar(std::size_t asset, std::size_t t) const { return bars_[asset][t]; }
    double close(std::size_t asset, std::size_t t) const { return bars_[asset][t].close; }

    // Closing prices of every asset at step t.
    std::vector<double> closes_at(std::size_t t) const;
    // Index of the first step with timestamp >= ts (num_steps() when none).
    std::size_t lower_bound(std::int64_t ts) const;

private:
    std::vector<std::string> assets_;
    std::vector<std::int64_t> timestamps_;
    std::vector<std::vector<Bar>> bars_;
    std::int64_t bar_interval_;
};

// Per-asset feature columns laid out asset-major: column a*I + i holds
// feature i of asset a. Rows [0, warmup) carry indicator warm-up and are not
// to be used for training or validation.
struct FeatureMatrix {
    std::vector<std::string> feature_names;  // I base names in canonical order
    std::vector<std::string> assets;         // D asset identifiers
    std::vector<std::int64_t> timestamps;    // T rows
    std::vector<double> values;              // T x (I*D), row-major
    std::size_t warmup = 0;

    std::size_t num_rows() const { return timestamps.size(); }
    std::size_t num_features() const { return feature_names.size(); }
    std::size_t num_assets() const { return assets.size(); }
    std::size_t num_columns() const { return feature_names.size() * assets.size(); }

    double at(std::size_t row, std::size_t asset, std::size_t feature) const {
        return values[row * num_columns() + asset * num_features() + feature];
    }
    std::span<const double> row(std::size_t t) const {
        return {values.data() + t * num_columns(), num_columns()};
    }
    std::vector<double> column(std::size_t asset, std::size_t feature) const;
    std::string column_name(std::size_t asset, std::size_t feature) const {
        return assets[asset] + "." + feature_names[feature];
    }
};

struct FeatureDrop {
    std::string feature;
    std::string partner;  // already-kept feature that triggered the drop
    double rho = 0.0;
};

struct CorrelationReport {
    std::vector<std::string> feature_names;
    std::vector<double> matrix;  // n x n, row-major, symmetric, unit diagonal
    double threshold = 0.6;
    std::vector<std::string> kept;
    std::vector<FeatureDrop> dropped;

    double at(std::size_t i, std::size_t j) const { return matrix[i * feature_names.size() + j]; }
};

struct AlignResult {
    Panel panel;
    std::vector<std::size_t> dropped_rows;  // per input series
};

// Reads one asset's bars. Rows must be strictly increasing in time.
AssetSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema = {},
                     std::string asset_name = {});
AssetSeries parse_bars_csv(std::string_view text, const CsvSchema& schema, std::string asset_name,
                           std::string_view source = "<memory>");

// Restricts every series to the common timestamps.
AlignResult align(const std::vector<AssetSeries>& series_list, std::size_t min_rows = 100);

// Sample Pearson coefficient of two equally long vectors. Throws
// std::invalid_argument when either side is constant or shorter than 2.
double pearson(std::span<const double> x, std::span<const double> y);

// Correlation of base features over the non-warm-up rows. With several
// assets the per-asset coefficients are averaged.
CorrelationReport pearson_matrix(const FeatureMatrix& features);

struct FilterResult {
    std::vector<std::string> kept;
    std::vector<FeatureDrop> dropped;
};

// Greedy scan in report order: a feature is dropped iff |rho| > threshold with
// any already-kept feature.
FilterResult correlation_filter(const CorrelationReport& report, double threshold = 0.6);

// Pearson report with kept/dropped filled in by correlation_filter.
CorrelationReport filtered_report(const FeatureMatrix& features, double threshold = 0.6);

// Sub-report over the named features (matrix entries carried over).
CorrelationReport restrict_report(const CorrelationReport& report, const std::vector<std::string>& names);

// Keeps the named base features (in their existing order).
FeatureMatrix select_features(const FeatureMatrix& features, const std::vector<std::string>& kept);

// Restricts a feature matrix to rows [begin, end); warmup is clamped accordingly.
FeatureMatrix slice_rows(const FeatureMatrix& features, std::size_t begin, std::size_t end);

// CSV with a `timestamp` column followed by `<asset>.<feature>` columns.
std::string feature_matrix_to_csv(const FeatureMatrix& features);

}  // namespace pboguard
