#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pboguard/splits.hpp"

namespace pboguard {

// Rows are training timestamps, columns are hyperparameter trials; each entry
// is a per-step return in currency units.
struct TrialMatrix {
    std::size_t num_rows = 0;
    std::size_t num_trials = 0;
    std::vector<double> values;  // row-major
    std::vector<std::string> trial_ids;
    std::vector<std::int64_t> row_timestamps;

    double at(std::size_t row, std::size_t trial) const { return values[row * num_trials + trial]; }
    double& at(std::size_t row, std::size_t trial) { return values[row * num_trials + trial]; }

    // Throws std::invalid_argument on shape mismatch, H < 2 or non-finite entries.
    void validate() const;
};

// Validation returns of one trial in one split.
struct SplitReturns {
    std::vector<std::int64_t> timestamps;
    std::vector<double> returns;
};

struct TrialReturns {
    std::string trial_id;
    std::vector<SplitReturns> splits;  // indexed by split id
};

// Averages every trial's validation return at each timestamp over the splits
// that validated it. `window_timestamps[i]` is the timestamp of offset i of
// the partitioned training window. Rows are the validated timestamps in
// chronological order (all N * floor(T/N) of them for the combinatorial plan).
TrialMatrix build_trial_matrix(const std::vector<TrialReturns>& trials, const SplitPlan& plan,
                               const GroupPartition& partition, std::span<const std::int64_t> window_timestamps);

enum class PboMetric { Sharpe, CumulativeReturn };

std::string to_string(PboMetric metric);
PboMetric parse_pbo_metric(const std::string& name);

// S contiguous chronological row blocks of floor(T/S) rows; remainder dropped.
std::vector<Window> partition_rows(const TrialMatrix& m, std::size_t num_blocks);

// Metric of one trial over the rows of the chosen blocks (in block order).
// Zero-variance Sharpe: 0 for zero mean, +/-infinity otherwise, which ranks
// such a trial above (below) every finite score.
double block_metric(const TrialMatrix& m, const std::vector<Window>& blocks,
                    std::span<const std::size_t> chosen, std::size_t trial, PboMetric metric);

// 1-based ascending ranks; equal values give the lower index the lower rank.
std::vector<std::size_t> ascending_ranks(std::span<const double> values);

struct CombinationSample {
    std::vector<std::size_t> is_blocks;
    std::vector<std::size_t> oos_blocks;
    std::vector<double> is_perf;
    std::vector<double> oos_perf;
    std::size_t best_is = 0;   // epsilon: trial with IS rank H
    std::size_t oos_rank = 0;  // OOS rank of best_is
    double omega = 0.0;        // oos_rank / (H + 1)
    double lambda = 0.0;       // ln(omega / (1 - omega))
};

CombinationSample evaluate_combination(const TrialMatrix& m, const std::vector<Window>& blocks,
                                       const std::vector<std::size_t>& is_blocks, PboMetric metric);

enum class PboMode {
    Exhaustive,  // every C(S, S/2) split; refused above the cap
    Sampled,     // `samples` distinct splits drawn without replacement
    Auto,        // exhaustive when within the cap, sampled with `cap` draws otherwise
};

struct PboOptions {
    std::size_t num_blocks = 14;  // S, even
    PboMetric metric = PboMetric::Sharpe;
    PboMode mode = PboMode::Auto;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    std::size_t cap = 1'000'000;
    std::size_t histogram_bins = 20;
    double alpha = 0.10;
};

struct Histogram {
    std::vector<double> edges;  // bins + 1 ascending edges over [-ln H, ln H]
    std::vector<std::size_t> counts;
};

enum class Verdict { Accept, Reject };

std::string to_string(Verdict verdict);

struct PboResult {
    double p = 0.0;
    std::vector<double> lambdas;  // in combination enumeration order
    std::size_t num_blocks = 0;
    std::size_t num_trials = 0;
    std::size_t combination_count = 0;  // evaluated combinations
    std::size_t total_combinations = 0;  // C(S, S/2)
    bool exhaustive = true;
    PboMetric metric = PboMetric::Sharpe;
    Histogram histogram;
    Verdict verdict = Verdict::Accept;
    double alpha = 0.10;
};

// Lexicographic unranking of the `index`-th k-subset of {0..n-1}.
std::vector<std::size_t> unrank_combination(std::size_t n, std::size_t k, std::size_t index);

PboResult estimate_pbo(const TrialMatrix& m, const PboOptions& options);

// p >= alpha rejects (overfitted); p < alpha accepts.
Verdict gate(double p, double alpha = 0.10);

Histogram logit_histogram(std::span<const double> lambdas, std::size_t num_trials, std::size_t bins);

// `timestamp` column then one column per trial id.
std::string trial_matrix_to_csv(const TrialMatrix& m);
TrialMatrix trial_matrix_from_csv(std::string_view text, std::string_view source = "<memory>");
TrialMatrix load_trial_matrix(const std::filesystem::path& path);

std::string pbo_result_to_json(const PboResult& result, int indent = 2);
// index,lambda
std::string lambdas_to_csv(const PboResult& result);

struct LogitSeries {
    std::string label;
    const PboResult* result = nullptr;
};
// Density plot of f(lambda) per family, one polyline + bar outline each.
std::string logit_histogram_svg(const std::vector<LogitSeries>& series);

}  // namespace pboguard
