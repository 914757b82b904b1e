#include <gtest/gtest.h>

#include <cmath>

#include "pboguard/error.hpp"
#include "pboguard/indicators.hpp"
#include "pboguard/market_data.hpp"
#include "pboguard/rng.hpp"
#include "test_util.hpp"

using namespace pboguard;
using pboguard::testing::flat_bars;

namespace {

const char* kThreeRows =
    "timestamp,open,high,low,close,volume\n"
    "1640995200,10,11,9,10.5,100\n"
    "1640995500,10.5,12,10,11,120\n"
    "1640995800,11,11.5,10.2,10.8,90\n";

FeatureMatrix columns_matrix(const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols) {
    FeatureMatrix fm;
    fm.feature_names = names;
    fm.assets = {"X"};
    const std::size_t T = cols.front().size();
    for (std::size_t t = 0; t < T; ++t) {
        fm.timestamps.push_back(static_cast<std::int64_t>(t));
        for (const auto& c : cols) fm.values.push_back(c[t]);
    }
    return fm;
}

}  // namespace

TEST(LoadCsv, WellFormedThreeRows) {
    const auto s = parse_bars_csv(kThreeRows, {}, "X");
    ASSERT_EQ(s.bars.size(), 3u);
    EXPECT_EQ(s.bars[0].timestamp, 1640995200);
    EXPECT_DOUBLE_EQ(s.bars[1].close, 11.0);
    EXPECT_DOUBLE_EQ(s.bars[2].volume, 90.0);
}

TEST(LoadCsv, NegativeVolumeNamesRowAndColumn) {
    const std::string text =
        "timestamp,open,high,low,close,volume\n"
        "1640995200,10,11,9,10.5,100\n"
        "1640995500,10.5,12,10,11,-1\n";
    try {
        parse_bars_csv(text, {}, "X", "x.csv");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("volume"), std::string::npos) << msg;
    }
}

TEST(LoadCsv, DuplicateTimestampRejected) {
    const std::string text =
        "timestamp,open,high,low,close,volume\n"
        "1640995200,10,11,9,10.5,100\n"
        "1640995200,10.5,12,10,11,5\n";
    try {
        parse_bars_csv(text, {}, "X");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos) << e.what();
    }
}

TEST(LoadCsv, DecreasingTimestampAndBadFieldsRejected) {
    EXPECT_THROW(parse_bars_csv("timestamp,open,high,low,close,volume\n2,1,1,1,1,1\n1,1,1,1,1,1\n", {}, "X"), DataError);
    EXPECT_THROW(parse_bars_csv("timestamp,open,high,low,close,volume\n1,1,1,1,abc,1\n", {}, "X"), DataError);
    EXPECT_THROW(parse_bars_csv("timestamp,open,high,low,close,volume\n1,-1,1,-2,1,1\n", {}, "X"), DataError);
    EXPECT_THROW(parse_bars_csv("timestamp,open,high,low,close\n1,1,1,1,1\n", {}, "X"), DataError);
}

TEST(LoadCsv, SchemaMappingAndIsoTimestamps) {
    CsvSchema schema;
    schema.timestamp = "date";
    schema.close = "px";
    const std::string text =
        "date,open,high,low,px,volume\n"
        "2022-01-01T00:00:00Z,1,2,1,1.5,3\n"
        "2022-01-01 00:05,1.5,2,1,1.8,3\n";
    const auto s = parse_bars_csv(text, schema, "X");
    ASSERT_EQ(s.bars.size(), 2u);
    EXPECT_EQ(s.bars[0].timestamp, 1640995200);
    EXPECT_EQ(s.bars[1].timestamp, 1640995500);
    EXPECT_DOUBLE_EQ(s.bars[1].close, 1.8);
}

TEST(Align, IdenticalTimestampsKeepAllRows) {
    const auto a = flat_bars("A", {1, 2, 3});
    const auto b = flat_bars("B", {4, 5, 6});
    const auto r = align({a, b}, 2);
    EXPECT_EQ(r.panel.num_steps(), 3u);
    EXPECT_EQ(r.dropped_rows, (std::vector<std::size_t>{0, 0}));
}

TEST(Align, IntersectionOfShiftedSeries) {
    const auto a = flat_bars("A", {1, 2, 3}, {}, 0, 1);  // t1..t3 = 0,1,2
    const auto b = flat_bars("B", {4, 5, 6}, {}, 1, 1);  // t2..t4 = 1,2,3
    const auto r = align({a, b}, 2);
    EXPECT_EQ(r.panel.timestamps(), (std::vector<std::int64_t>{1, 2}));
    EXPECT_DOUBLE_EQ(r.panel.close(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(r.panel.close(1, 0), 4.0);
    EXPECT_EQ(r.dropped_rows, (std::vector<std::size_t>{1, 1}));
}

TEST(Align, DisjointAndShortIntersectionsRejected) {
    const auto a = flat_bars("A", {1, 2, 3}, {}, 0, 1);
    const auto b = flat_bars("B", {4, 5, 6}, {}, 10, 1);
    EXPECT_THROW(align({a, b}, 1), DataError);
    EXPECT_THROW(align({a}, 100), DataError);  // default minimum is 100 bars
    EXPECT_THROW(align({}, 1), std::invalid_argument);
}

TEST(Pearson, IdentityAndNegation) {
    const std::vector<double> x = {1.0, 4.0, 2.0, 8.0, 5.0};
    std::vector<double> neg;
    for (double v : x) neg.push_back(-v);
    EXPECT_EQ(pearson(x, x), 1.0);
    EXPECT_EQ(pearson(x, neg), -1.0);
}

TEST(Pearson, HandComputedExample) {
    // Deviations x: -1,0,1; y: -4/3,-1/3,5/3 -> rho = 3 / (sqrt(2) sqrt(42/9)) = 9 / sqrt(84).
    EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 4}), 9.0 / std::sqrt(84.0), 1e-12);
    EXPECT_NEAR(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 4}), 0.9820, 5e-5);
}

TEST(Pearson, ConstantColumnReportedByName) {
    const auto fm = columns_matrix({"volume", "rsi"}, {{1, 2, 3, 4}, {5, 5, 5, 5}});
    try {
        pearson_matrix(fm);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("rsi"), std::string::npos) << e.what();
    }
    EXPECT_THROW(pearson_matrix(columns_matrix({"a", "b"}, {{1}, {2}})), DataError);
}

TEST(CorrelationFilter, AllLowCorrelationKeepsEverything) {
    // Orthogonal +-1 patterns: every pairwise rho is exactly 0.
    const auto fm = columns_matrix({"a", "b", "c"}, {{1, -1, 1, -1}, {1, 1, -1, -1}, {1, -1, -1, 1}});
    const auto r = filtered_report(fm, 0.6);
    EXPECT_EQ(r.kept, (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_TRUE(r.dropped.empty());
}

TEST(CorrelationFilter, LaterFeatureDroppedCitingEarlier) {
    CorrelationReport r;
    r.feature_names = {"volume", "rsi"};
    r.matrix = {1.0, 0.9, 0.9, 1.0};
    const auto f = correlation_filter(r, 0.6);
    EXPECT_EQ(f.kept, (std::vector<std::string>{"volume"}));
    ASSERT_EQ(f.dropped.size(), 1u);
    EXPECT_EQ(f.dropped[0].feature, "rsi");
    EXPECT_EQ(f.dropped[0].partner, "volume");
    EXPECT_DOUBLE_EQ(f.dropped[0].rho, 0.9);
}

TEST(CorrelationFilter, EngineeredPanelYieldsKnownKeptSet) {
    // b = a + small noise (drop), c independent (keep), d = -c (drop), e = a - c mixes both (|rho| ~ 0.7: drop).
    Rng rng(11);
    std::vector<double> a, b, c, d, e;
    for (int t = 0; t < 500; ++t) {
        a.push_back(rng.normal());
        c.push_back(rng.normal());
        b.push_back(a.back() + 0.1 * rng.normal());
        d.push_back(-c.back());
        e.push_back(a.back() - c.back());
    }
    const auto r = filtered_report(columns_matrix({"a", "b", "c", "d", "e"}, {a, b, c, d, e}), 0.6);
    EXPECT_EQ(r.kept, (std::vector<std::string>{"a", "c"}));
    ASSERT_EQ(r.dropped.size(), 3u);
    EXPECT_EQ(r.dropped[0].partner, "a");
    EXPECT_EQ(r.dropped[1].partner, "c");
}

TEST(CorrelationFilter, MatrixPropertiesAndIdempotence) {
    Rng rng(3);
    std::vector<std::vector<double>> cols(5);
    for (int t = 0; t < 200; ++t) {
        const double base = rng.normal();
        for (std::size_t i = 0; i < cols.size(); ++i) cols[i].push_back(base * static_cast<double>(i) * 0.3 + rng.normal());
    }
    const auto fm = columns_matrix({"f0", "f1", "f2", "f3", "f4"}, cols);
    const auto r = filtered_report(fm, 0.6);
    const std::size_t n = r.feature_names.size();
    for (std::size_t i = 0; i < n; ++i) {
        EXPECT_EQ(r.at(i, i), 1.0);
        for (std::size_t j = 0; j < n; ++j) {
            EXPECT_EQ(r.at(i, j), r.at(j, i));
            EXPECT_LE(std::abs(r.at(i, j)), 1.0);
        }
    }
    EXPECT_EQ(r.kept.size() + r.dropped.size(), n);
    const auto sub = restrict_report(r, r.kept);
    for (std::size_t i = 0; i < sub.feature_names.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) EXPECT_LE(std::abs(sub.at(i, j)), 0.6);
    }
    EXPECT_EQ(correlation_filter(sub, 0.6).kept, r.kept);
}

TEST(CorrelationFilter, PooledAcrossAssetsByAveraging) {
    FeatureMatrix fm;
    fm.feature_names = {"a", "b"};
    fm.assets = {"X", "Y"};
    const std::vector<double> xa = {1, 2, 3, 4}, xb = {1, 2, 3, 5}, ya = {1, 2, 3, 4}, yb = {4, 3, 2, 0};
    for (std::size_t t = 0; t < 4; ++t) {
        fm.timestamps.push_back(static_cast<std::int64_t>(t));
        for (double v : {xa[t], xb[t], ya[t], yb[t]}) fm.values.push_back(v);
    }
    const auto r = pearson_matrix(fm);
    EXPECT_NEAR(r.at(0, 1), 0.5 * (pearson(xa, xb) + pearson(ya, yb)), 1e-12);
}

TEST(FeatureMatrix, StateLengthForTenAssetsSixFeatures) {
    std::vector<std::vector<double>> closes(10, std::vector<double>(3, 1.0));
    const auto panel = pboguard::testing::make_panel(closes);
    const auto fm = pboguard::testing::zero_features(*panel, 6);
    EXPECT_EQ(1 + (fm->num_features() + 2) * fm->num_assets(), 81u);
}

TEST(FeatureMatrix, CsvExportColumns) {
    std::vector<double> closes;
    for (int t = 0; t < 40; ++t) closes.push_back(100.0 + t);
    const Panel panel = align({flat_bars("BTC", closes)}, 2).panel;
    const auto fm = compute_features(panel, {"volume", "roc"});
    const auto csv = feature_matrix_to_csv(fm);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "timestamp,BTC.volume,BTC.roc");
}
