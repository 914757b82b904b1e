#include "pboguard/pbo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "pboguard/error.hpp"
#include "pboguard/io.hpp"
#include "pboguard/rng.hpp"

namespace pboguard {

using nlohmann::json;

void TrialMatrix::validate() const {
    if (num_trials < 2) throw std::invalid_argument("trial matrix: at least 2 trials required");
    if (values.size() != num_rows * num_trials) throw std::invalid_argument("trial matrix: shape mismatch");
    if (!trial_ids.empty() && trial_ids.size() != num_trials) {
        throw std::invalid_argument("trial matrix: one id per trial required");
    }
    if (!row_timestamps.empty() && row_timestamps.size() != num_rows) {
        throw std::invalid_argument("trial matrix: one timestamp per row required");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw std::invalid_argument("trial matrix: non-finite entry at row " + std::to_string(i / num_trials) +
                                        ", trial " + std::to_string(i % num_trials));
        }
    }
}

TrialMatrix build_trial_matrix(const std::vector<TrialReturns>& trials, const SplitPlan& plan,
                               const GroupPartition& partition, std::span<const std::int64_t> window_timestamps) {
    if (trials.empty()) throw std::invalid_argument("build_trial_matrix: no trials");
    if (partition.num_groups != plan.num_groups) throw std::invalid_argument("build_trial_matrix: partition/plan mismatch");
    if (window_timestamps.size() < partition.used_points()) {
        throw std::invalid_argument("build_trial_matrix: fewer timestamps than partitioned points");
    }

    // Expected validation offsets of every split, ascending.
    std::vector<std::vector<std::size_t>> expected(plan.num_splits());
    std::vector<std::size_t> coverage(partition.used_points(), 0);
    for (std::size_t j = 0; j < plan.num_splits(); ++j) {
        auto groups = plan.splits[j].validation_groups;
        std::sort(groups.begin(), groups.end());
        for (std::size_t g : groups) {
            const auto w = partition.group(g);
            for (std::size_t o = w.begin; o < w.end; ++o) {
                expected[j].push_back(o);
                ++coverage[o];
            }
        }
    }
    std::vector<std::size_t> row_of(partition.used_points(), SIZE_MAX);
    TrialMatrix m;
    for (std::size_t o = 0; o < coverage.size(); ++o) {
        if (coverage[o] == 0) continue;
        row_of[o] = m.row_timestamps.size();
        m.row_timestamps.push_back(window_timestamps[o]);
    }
    m.num_rows = m.row_timestamps.size();
    m.num_trials = trials.size();
    m.values.assign(m.num_rows * m.num_trials, 0.0);

    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto& trial = trials[i];
        m.trial_ids.push_back(trial.trial_id.empty() ? std::to_string(i) : trial.trial_id);
        for (std::size_t j = 0; j < plan.num_splits(); ++j) {
            const auto where = "trial '" + m.trial_ids.back() + "', split " + std::to_string(j);
            if (j >= trial.splits.size()) throw DataError(where + ": missing validation series");
            const auto& sr = trial.splits[j];
            if (sr.timestamps.size() != sr.returns.size()) throw DataError(where + ": timestamps/returns length mismatch");
            const auto& exp = expected[j];
            for (std::size_t n = 0; n < exp.size(); ++n) {
                const auto ts = window_timestamps[exp[n]];
                if (n >= sr.timestamps.size() || sr.timestamps[n] != ts) {
                    throw DataError(where + ": ragged coverage, missing timestamp " + std::to_string(ts));
                }
                if (!std::isfinite(sr.returns[n])) {
                    throw DataError(where + ": non-finite return at timestamp " + std::to_string(ts));
                }
                m.at(row_of[exp[n]], i) += sr.returns[n];
            }
            if (sr.timestamps.size() != exp.size()) {
                throw DataError(where + ": ragged coverage, unexpected extra timestamps");
            }
        }
    }
    for (std::size_t o = 0; o < coverage.size(); ++o) {
        if (coverage[o] == 0) continue;
        for (std::size_t i = 0; i < m.num_trials; ++i) m.at(row_of[o], i) /= static_cast<double>(coverage[o]);
    }
    return m;
}

std::string to_string(PboMetric metric) {
    return metric == PboMetric::Sharpe ? "sharpe" : "cumulative_return";
}

PboMetric parse_pbo_metric(const std::string& name) {
    if (name == "sharpe") return PboMetric::Sharpe;
    if (name == "cumulative_return" || name == "return") return PboMetric::CumulativeReturn;
    throw std::invalid_argument("unknown PBO metric '" + name + "'");
}

std::string to_string(Verdict verdict) { return verdict == Verdict::Accept ? "ACCEPT" : "REJECT"; }

std::vector<Window> partition_rows(const TrialMatrix& m, std::size_t num_blocks) {
    if (num_blocks < 2 || num_blocks % 2 != 0) throw std::invalid_argument("partition_rows: S must be even and >= 2");
    if (num_blocks > m.num_rows) {
        throw std::invalid_argument("partition_rows: S = " + std::to_string(num_blocks) + " exceeds " +
                                    std::to_string(m.num_rows) + " rows");
    }
    const std::size_t size = m.num_rows / num_blocks;
    std::vector<Window> blocks;
    for (std::size_t b = 0; b < num_blocks; ++b) blocks.push_back({b * size, (b + 1) * size});
    return blocks;
}

double block_metric(const TrialMatrix& m, const std::vector<Window>& blocks, std::span<const std::size_t> chosen,
                    std::size_t trial, PboMetric metric) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t b : chosen) {
        for (std::size_t r = blocks[b].begin; r < blocks[b].end; ++r) sum += m.at(r, trial);
        n += blocks[b].size();
    }
    if (metric == PboMetric::CumulativeReturn) return sum;

    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t b : chosen) {
        for (std::size_t r = blocks[b].begin; r < blocks[b].end; ++r) {
            const double d = m.at(r, trial) - mean;
            ss += d * d;
        }
    }
    if (ss == 0.0) {
        if (mean == 0.0) return 0.0;
        return mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    }
    return mean / std::sqrt(ss / static_cast<double>(n));
}

std::vector<std::size_t> ascending_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<std::size_t> ranks(values.size());
    for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = r + 1;
    return ranks;
}

CombinationSample evaluate_combination(const TrialMatrix& m, const std::vector<Window>& blocks,
                                       const std::vector<std::size_t>& is_blocks, PboMetric metric) {
    const std::size_t S = blocks.size();
    if (is_blocks.size() * 2 != S) throw std::invalid_argument("evaluate_combination: IS set must hold S/2 blocks");
    std::vector<bool> in_is(S, false);
    for (std::size_t b : is_blocks) {
        if (b >= S || in_is[b]) throw std::invalid_argument("evaluate_combination: invalid block choice");
        in_is[b] = true;
    }

    CombinationSample c;
    c.is_blocks = is_blocks;
    std::sort(c.is_blocks.begin(), c.is_blocks.end());
    for (std::size_t b = 0; b < S; ++b) {
        if (!in_is[b]) c.oos_blocks.push_back(b);
    }

    const std::size_t H = m.num_trials;
    c.is_perf.resize(H);
    c.oos_perf.resize(H);
    for (std::size_t i = 0; i < H; ++i) {
        c.is_perf[i] = block_metric(m, blocks, c.is_blocks, i, metric);
        c.oos_perf[i] = block_metric(m, blocks, c.oos_blocks, i, metric);
    }
    const auto is_ranks = ascending_ranks(c.is_perf);
    const auto oos_ranks = ascending_ranks(c.oos_perf);
    c.best_is = static_cast<std::size_t>(std::find(is_ranks.begin(), is_ranks.end(), H) - is_ranks.begin());
    c.oos_rank = oos_ranks[c.best_is];
    c.omega = static_cast<double>(c.oos_rank) / static_cast<double>(H + 1);
    c.lambda = std::log(c.omega / (1.0 - c.omega));
    return c;
}

std::vector<std::size_t> unrank_combination(std::size_t n, std::size_t k, std::size_t index) {
    if (index >= binomial(n, k)) throw std::out_of_range("unrank_combination: index out of range");
    std::vector<std::size_t> out;
    out.reserve(k);
    std::size_t c = 0;
    for (std::size_t i = 0; i < k; ++i) {
        while (true) {
            const std::size_t count = binomial(n - c - 1, k - i - 1);
            if (index < count) break;
            index -= count;
            ++c;
        }
        out.push_back(c);
        ++c;
    }
    return out;
}

Histogram logit_histogram(std::span<const double> lambdas, std::size_t num_trials, std::size_t bins) {
    if (bins == 0) throw std::invalid_argument("histogram: at least one bin required");
    const double bound = std::log(static_cast<double>(std::max<std::size_t>(num_trials, 2)));
    Histogram h;
    h.counts.assign(bins, 0);
    for (std::size_t b = 0; b <= bins; ++b) {
        h.edges.push_back(-bound + 2.0 * bound * static_cast<double>(b) / static_cast<double>(bins));
    }
    for (double l : lambdas) {
        auto b = static_cast<std::ptrdiff_t>(std::floor((l + bound) / (2.0 * bound) * static_cast<double>(bins)));
        b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

Verdict gate(double p, double alpha) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("gate: p must lie in [0, 1]");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("gate: alpha must lie in (0, 1)");
    return p >= alpha ? Verdict::Reject : Verdict::Accept;
}

PboResult estimate_pbo(const TrialMatrix& m, const PboOptions& options) {
    m.validate();
    const auto blocks = partition_rows(m, options.num_blocks);
    const std::size_t S = options.num_blocks;
    const std::size_t half = S / 2;

    PboResult result;
    result.num_blocks = S;
    result.num_trials = m.num_trials;
    result.metric = options.metric;
    result.alpha = options.alpha;
    result.total_combinations = binomial(S, half);

    bool exhaustive = true;
    std::size_t samples = 0;
    switch (options.mode) {
        case PboMode::Exhaustive:
            if (result.total_combinations > options.cap) {
                throw std::invalid_argument("estimate_pbo: C(S, S/2) = " + std::to_string(result.total_combinations) +
                                            " exceeds the exhaustive cap; use sampled mode");
            }
            break;
        case PboMode::Sampled:
            if (options.samples == 0 || options.samples > result.total_combinations) {
                throw std::invalid_argument("estimate_pbo: sample count must lie in [1, C(S, S/2)]");
            }
            exhaustive = false;
            samples = options.samples;
            break;
        case PboMode::Auto:
            if (result.total_combinations > options.cap) {
                exhaustive = false;
                samples = options.cap;
            }
            break;
    }

    std::vector<std::vector<std::size_t>> combos;
    if (exhaustive) {
        combos.reserve(result.total_combinations);
        std::vector<std::size_t> c(half);
        std::iota(c.begin(), c.end(), 0);
        while (true) {
            combos.push_back(c);
            std::size_t i = half;
            while (i > 0 && c[i - 1] == S - half + i - 1) --i;
            if (i == 0) break;
            ++c[i - 1];
            for (std::size_t j = i; j < half; ++j) c[j] = c[j - 1] + 1;
        }
    } else {
        // Sampled without replacement, evaluated in enumeration order.
        Rng rng(options.seed);
        const auto picked = sample_without_replacement(rng, result.total_combinations, samples);
        combos.reserve(samples);
        for (std::size_t idx : picked) combos.push_back(unrank_combination(S, half, idx));
    }

    std::size_t below = 0, at_zero = 0;
    result.lambdas.reserve(combos.size());
    for (const auto& c : combos) {
        const auto sample = evaluate_combination(m, blocks, c, options.metric);
        result.lambdas.push_back(sample.lambda);
        if (sample.lambda < 0.0) ++below;
        else if (sample.lambda == 0.0) ++at_zero;
    }
    result.exhaustive = exhaustive;
    result.combination_count = combos.size();
    result.p = (static_cast<double>(below) + 0.5 * static_cast<double>(at_zero)) /
               static_cast<double>(result.combination_count);
    result.histogram = logit_histogram(result.lambdas, m.num_trials, options.histogram_bins);
    result.verdict = gate(result.p, options.alpha);
    return result;
}

std::string trial_matrix_to_csv(const TrialMatrix& m) {
    std::string out = "timestamp";
    for (std::size_t i = 0; i < m.num_trials; ++i) out += "," + (i < m.trial_ids.size() ? m.trial_ids[i] : std::to_string(i));
    out += "\n";
    for (std::size_t r = 0; r < m.num_rows; ++r) {
        out += r < m.row_timestamps.size() ? std::to_string(m.row_timestamps[r]) : std::to_string(r);
        for (std::size_t i = 0; i < m.num_trials; ++i) out += "," + io::format_double(m.at(r, i));
        out += "\n";
    }
    return out;
}

TrialMatrix trial_matrix_from_csv(std::string_view text, std::string_view source) {
    const auto table = io::parse_csv(text, source);
    if (table.header.empty() || table.header[0] != "timestamp") {
        throw DataError(std::string(source) + ": first column must be 'timestamp'");
    }
    TrialMatrix m;
    m.trial_ids.assign(table.header.begin() + 1, table.header.end());
    m.num_trials = m.trial_ids.size();
    m.num_rows = table.rows.size();
    m.values.reserve(m.num_rows * m.num_trials);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto ts = io::parse_timestamp(table.rows[r][0]);
        if (!ts) throw DataError(std::string(source) + ": line " + std::to_string(table.line_numbers[r]) + ": bad timestamp");
        m.row_timestamps.push_back(*ts);
        for (std::size_t c = 1; c < table.header.size(); ++c) {
            const auto v = io::parse_double(table.rows[r][c]);
            if (!v || !std::isfinite(*v)) {
                throw DataError(std::string(source) + ": line " + std::to_string(table.line_numbers[r]) + ", column '" +
                                table.header[c] + "': not a finite number");
            }
            m.values.push_back(*v);
        }
    }
    return m;
}

TrialMatrix load_trial_matrix(const std::filesystem::path& path) {
    return trial_matrix_from_csv(io::read_file(path), path.string());
}

std::string pbo_result_to_json(const PboResult& r, int indent) {
    json j;
    j["p"] = r.p;
    j["alpha"] = r.alpha;
    j["verdict"] = to_string(r.verdict);
    j["S"] = r.num_blocks;
    j["H"] = r.num_trials;
    j["metric"] = to_string(r.metric);
    j["combination_count"] = r.combination_count;
    j["total_combinations"] = r.total_combinations;
    j["exhaustive"] = r.exhaustive;
    j["histogram"] = {{"edges", r.histogram.edges}, {"counts", r.histogram.counts}};
    return j.dump(indent) + "\n";
}

std::string lambdas_to_csv(const PboResult& r) {
    std::string out = "index,lambda\n";
    for (std::size_t i = 0; i < r.lambdas.size(); ++i) out += std::to_string(i) + "," + io::format_double(r.lambdas[i]) + "\n";
    return out;
}

std::string logit_histogram_svg(const std::vector<LogitSeries>& series) {
    static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    constexpr double W = 640, Hpx = 360, left = 56, right = 16, top = 24, bottom = 44;

    double bound = std::log(2.0);
    double peak = 0.0;
    for (const auto& s : series) {
        if (!s.result) continue;
        const auto& h = s.result->histogram;
        bound = std::max(bound, std::abs(h.edges.front()));
        const double width = h.edges[1] - h.edges[0];
        for (auto c : h.counts) {
            peak = std::max(peak, static_cast<double>(c) / (static_cast<double>(s.result->combination_count) * width));
        }
    }
    if (peak <= 0.0) peak = 1.0;
    auto x_of = [&](double l) { return left + (l + bound) / (2.0 * bound) * (W - left - right); };
    auto y_of = [&](double d) { return Hpx - bottom - d / peak * (Hpx - top - bottom); };
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" viewBox=\"0 0 640 360\">\n";
    svg += "<rect width=\"640\" height=\"360\" fill=\"white\"/>\n";
    svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(Hpx - bottom) + "\" x2=\"" + fmt(W - right) + "\" y2=\"" +
           fmt(Hpx - bottom) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(left) + "\" y2=\"" + fmt(Hpx - bottom) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt(x_of(0.0)) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(x_of(0.0)) + "\" y2=\"" +
           fmt(Hpx - bottom) + "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
    for (int i = -2; i <= 2; ++i) {
        const double l = bound * i / 2.0;
        svg += "<text x=\"" + fmt(x_of(l)) + "\" y=\"" + fmt(Hpx - bottom + 16) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + fmt(l) + "</text>\n";
    }
    svg += "<text x=\"" + fmt((left + W - right) / 2) + "\" y=\"" + fmt(Hpx - 8) +
           "\" font-size=\"12\" text-anchor=\"middle\">logit &#955;</text>\n";
    svg += "<text x=\"14\" y=\"" + fmt((top + Hpx - bottom) / 2) + "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
           fmt((top + Hpx - bottom) / 2) + ")\">f(&#955;)</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        if (!series[s].result) continue;
        const auto& r = *series[s].result;
        const auto& h = r.histogram;
        const double width = h.edges[1] - h.edges[0];
        const char* color = kColors[s % std::size(kColors)];
        std::string points;
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            const double density = static_cast<double>(h.counts[b]) / (static_cast<double>(r.combination_count) * width);
            points += fmt(x_of(h.edges[b])) + "," + fmt(y_of(density)) + " ";
            points += fmt(x_of(h.edges[b + 1])) + "," + fmt(y_of(density)) + " ";
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
        svg += "<text x=\"" + fmt(W - right - 4) + "\" y=\"" + fmt(top + 14.0 * static_cast<double>(s + 1)) +
               "\" font-size=\"11\" text-anchor=\"end\" fill=\"" + color + "\">" + series[s].label + " (p = " + fmt(100.0 * r.p) +
               "%)</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace pboguard
