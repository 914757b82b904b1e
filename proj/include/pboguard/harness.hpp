#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pboguard/agents.hpp"
#include "pboguard/market_data.hpp"
#include "pboguard/pbo.hpp"
#include "pboguard/splits.hpp"
#include "pboguard/trading_env.hpp"

namespace pboguard {

enum class TrialSampler { Grid, Random };

std::string to_string(TrialSampler sampler);
TrialSampler parse_trial_sampler(const std::string& name);

// Trial sources: the built-in trainable agent, or returns imported from CSV.
enum class TrialSource { Cem, External };

struct ExperimentConfig {
    std::filesystem::path base_dir;  // relative data paths resolve against this

    // [data]
    std::vector<std::filesystem::path> asset_paths;
    std::vector<std::string> asset_names;  // defaults to file stems
    std::optional<std::filesystem::path> cvix_path;
    std::optional<std::filesystem::path> index_path;
    std::optional<std::filesystem::path> external_trials_path;
    CsvSchema schema;
    std::size_t min_rows = 100;

    // [windows]: half-open timestamp ranges; unset bounds fall back to the
    // panel ends and a test_fraction tail split.
    std::optional<std::int64_t> train_start, train_end, test_start, test_end;
    double test_fraction = 0.2;

    EnvConfig env;

    // [features]
    std::vector<std::string> feature_candidates;
    double correlation_threshold = 0.6;
    bool correlation_filter = true;

    // [splits]
    std::vector<SplitScheme> schemes = {SplitScheme::Combinatorial};  // first one drives selection
    std::size_t num_groups = 5;
    std::size_t validation_groups = 2;
    double train_fraction = 0.6;  // walk-forward
    std::size_t embargo = 0;

    // [trials]
    TrialSource source = TrialSource::Cem;
    std::size_t num_trials = 50;
    TrialSampler sampler = TrialSampler::Random;
    std::uint64_t master_seed = 0;
    HyperparameterGrid grid = default_hyperparameter_grid();
    CemScaling scaling;
    PboMetric selection_metric = PboMetric::Sharpe;

    // [pbo]
    PboOptions pbo;

    // [report]
    std::vector<AgentKind> benchmarks = {AgentKind::EqualWeight};
    bool test_all_trials = false;

    // [output]
    std::filesystem::path output_dir = "out";

    // Canonical echo used in reports and the content hash. Excludes the
    // output directory and anything describing how the run was executed.
    nlohmann::json to_json() const;
    void validate() const;
};

ExperimentConfig parse_config_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig parse_config_toml(std::string_view text, const std::filesystem::path& base_dir = {});
// Format by extension: .json is JSON, anything else TOML.
ExperimentConfig load_config(const std::filesystem::path& path);

// H hyperparameter sets from the grid. GRID takes evenly spaced grid indices;
// RANDOM draws uniformly without replacement, in grid order. Appends a warning
// when H < 50 (the default coverage floor: 1 - 0.95^50 ~= 0.923 >= 0.9).
std::vector<HyperparameterSet> sample_trials(const HyperparameterGrid& grid, std::size_t num_trials,
                                             TrialSampler sampler, std::uint64_t master_seed,
                                             std::vector<std::string>* warnings = nullptr);

// Raw file contents behind an experiment; separable from the loading step so
// that tests can feed in-memory markets.
struct ExperimentInputs {
    std::vector<AssetSeries> assets;
    std::optional<std::string> cvix_csv;
    std::optional<std::string> index_csv;
    std::optional<std::string> external_csv;
    std::map<std::string, std::string> hashes;  // input name -> sha256
};

ExperimentInputs read_inputs(const ExperimentConfig& config);

struct ExperimentData {
    std::shared_ptr<const Panel> panel;
    std::shared_ptr<const FeatureMatrix> features;  // filtered
    CorrelationReport correlation;                   // over training rows
    std::vector<std::size_t> dropped_rows;
    std::optional<std::vector<double>> cvix;
    std::optional<std::vector<double>> index;
    std::vector<TrialReturns> external;
    Window train;
    Window test;
    std::map<std::string, std::string> hashes;
};

ExperimentData prepare_data(const ExperimentConfig& config, const ExperimentInputs& inputs);
ExperimentData load_experiment_data(const ExperimentConfig& config);

struct TrialRecord {
    std::string id;
    HyperparameterSet hyperparameters;
    std::uint64_t seed = 0;
    std::vector<PerfMetrics> split_metrics;  // primary scheme, per split
    double mean_metric = 0.0;
    std::optional<PerfMetrics> test_metrics;
};

struct FamilyResult {
    std::string name;
    TrialMatrix matrix;
    PboResult pbo;
};

struct StrategyResult {
    std::string name;
    std::vector<std::int64_t> timestamps;
    std::vector<double> equity;
    std::vector<TradeRecord> trades;
    bool has_trades = true;
    PerfMetrics metrics;
};

struct ExperimentReport {
    nlohmann::json config;
    std::map<std::string, std::string> input_hashes;
    std::vector<std::string> assets;
    std::vector<std::string> features;
    CorrelationReport correlation;
    Window train;
    Window test;
    std::vector<std::int64_t> panel_timestamps;
    std::vector<TrialRecord> trials;
    std::vector<FamilyResult> families;  // first one is the primary verdict
    std::optional<std::size_t> selected;
    std::vector<StrategyResult> strategies;
    std::vector<std::string> warnings;
    std::string content_hash;

    Verdict verdict() const;
    // Everything but the content hash; the hash is sha256 of this dump.
    nlohmann::json body() const;
    nlohmann::json to_json() const;
};

// Runs every (trial, split) job on `jobs` threads. Results are reduced in
// index order, so the report does not depend on `jobs`.
ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentData& data, std::size_t jobs = 1);

// Writes report.json, logits.csv, logit_hist.svg, per-family matrix and PBO
// files, equity_/trades_ CSVs per strategy and manifest.json (sha256 of each
// file). Returns the manifest entries.
std::map<std::string, std::string> emit_report(const ExperimentReport& report, const std::filesystem::path& dir);

// Plain-text table: strategy metrics and each family's p and verdict.
std::string summarize_report(const nlohmann::json& report);

}  // namespace pboguard
