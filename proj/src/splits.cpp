#include "pboguard/splits.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "pboguard/error.hpp"

namespace pboguard {

using nlohmann::json;

std::string to_string(SplitScheme scheme) {
    switch (scheme) {
        case SplitScheme::WalkForward: return "walk_forward";
        case SplitScheme::KFold: return "kfold";
        case SplitScheme::Combinatorial: return "combinatorial";
    }
    return "?";
}

SplitScheme parse_split_scheme(const std::string& name) {
    if (name == "walk_forward" || name == "wf" || name == "WF") return SplitScheme::WalkForward;
    if (name == "kfold" || name == "kcv" || name == "KFOLD") return SplitScheme::KFold;
    if (name == "combinatorial" || name == "cpcv" || name == "COMBINATORIAL") return SplitScheme::Combinatorial;
    throw std::invalid_argument("unknown split scheme '" + name + "'");
}

std::size_t binomial(std::size_t n, std::size_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    std::size_t r = 1;
    for (std::size_t i = 1; i <= k; ++i) {
        // r * (n - k + i) / i is exact at every step; guard the multiply.
        const std::size_t num = n - k + i;
        if (r > std::numeric_limits<std::size_t>::max() / num) throw std::overflow_error("binomial overflow");
        r = r * num / i;
    }
    return r;
}

GroupPartition make_partition(std::size_t num_points, std::size_t num_groups) {
    if (num_groups < 2) throw std::invalid_argument("partition: need at least 2 groups");
    const std::size_t size = num_points / num_groups;
    if (size == 0) throw std::invalid_argument("partition: fewer points than groups");
    GroupPartition p;
    p.num_groups = num_groups;
    for (std::size_t g = 0; g <= num_groups; ++g) p.boundaries.push_back(g * size);
    return p;
}

namespace {

Split split_from_validation(std::size_t n, const std::vector<std::size_t>& validation) {
    Split s;
    s.validation_groups = validation;
    for (std::size_t g = 0; g < n; ++g) {
        if (!std::binary_search(validation.begin(), validation.end(), g)) s.train_groups.push_back(g);
    }
    return s;
}

}  // namespace

SplitPlan make_combinatorial(std::size_t num_groups, std::size_t validation_groups) {
    if (num_groups < 2) throw std::invalid_argument("combinatorial: N must be >= 2");
    if (validation_groups < 1 || validation_groups > num_groups - 1) {
        throw std::invalid_argument("combinatorial: k must lie in [1, N-1]");
    }
    SplitPlan plan;
    plan.scheme = SplitScheme::Combinatorial;
    plan.num_groups = num_groups;
    plan.validation_size = validation_groups;

    std::vector<std::size_t> combo(validation_groups);
    for (std::size_t i = 0; i < validation_groups; ++i) combo[i] = i;
    while (true) {
        plan.splits.push_back(split_from_validation(num_groups, combo));
        // Next combination in lexicographic order.
        std::size_t i = validation_groups;
        while (i > 0 && combo[i - 1] == num_groups - validation_groups + i - 1) --i;
        if (i == 0) break;
        ++combo[i - 1];
        for (std::size_t j = i; j < validation_groups; ++j) combo[j] = combo[j - 1] + 1;
    }
    return plan;
}

SplitPlan make_walk_forward(std::size_t num_groups, double train_fraction) {
    if (num_groups < 2) throw std::invalid_argument("walk_forward: N must be >= 2");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("walk_forward: train fraction must lie in (0, 1)");
    }
    const auto rounded = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(num_groups)));
    const std::size_t n_train = std::clamp<std::size_t>(rounded, 1, num_groups - 1);
    std::vector<std::size_t> validation;
    for (std::size_t g = n_train; g < num_groups; ++g) validation.push_back(g);

    SplitPlan plan;
    plan.scheme = SplitScheme::WalkForward;
    plan.num_groups = num_groups;
    plan.validation_size = validation.size();
    plan.splits.push_back(split_from_validation(num_groups, validation));
    return plan;
}

SplitPlan make_kfold(std::size_t num_groups) {
    if (num_groups < 2) throw std::invalid_argument("kfold: N must be >= 2");
    SplitPlan plan;
    plan.scheme = SplitScheme::KFold;
    plan.num_groups = num_groups;
    plan.validation_size = 1;
    for (std::size_t g = 0; g < num_groups; ++g) plan.splits.push_back(split_from_validation(num_groups, {g}));
    return plan;
}

std::vector<MaterializedSplit> materialize(const SplitPlan& plan, const GroupPartition& partition,
                                           std::size_t embargo, std::size_t origin) {
    if (partition.num_groups != plan.num_groups) {
        throw std::invalid_argument("materialize: partition has " + std::to_string(partition.num_groups) +
                                    " groups, plan expects " + std::to_string(plan.num_groups));
    }
    std::vector<MaterializedSplit> out;
    out.reserve(plan.splits.size());
    for (const auto& split : plan.splits) {
        MaterializedSplit m;
        std::vector<bool> is_validation(plan.num_groups, false);
        for (std::size_t g : split.validation_groups) {
            is_validation.at(g) = true;
            const auto w = partition.group(g);
            m.validation.push_back({w.begin + origin, w.end + origin});
        }
        // Merge contiguous training groups, then cut the embargo next to any
        // adjacent validation group.
        for (std::size_t g = 0; g < plan.num_groups;) {
            if (is_validation[g]) {
                ++g;
                continue;
            }
            std::size_t last = g;
            while (last + 1 < plan.num_groups && !is_validation[last + 1]) ++last;
            std::size_t begin = partition.group(g).begin;
            std::size_t end = partition.group(last).end;
            if (g > 0 && is_validation[g - 1]) begin += embargo;
            if (last + 1 < plan.num_groups && is_validation[last + 1]) end = end >= embargo ? end - embargo : 0;
            if (begin < end) m.train.push_back({begin + origin, end + origin});
            g = last + 1;
        }
        out.push_back(std::move(m));
    }
    return out;
}

std::string split_plan_to_json(const SplitPlan& plan) {
    json j;
    j["scheme"] = to_string(plan.scheme);
    j["N"] = plan.num_groups;
    j["k"] = plan.validation_size;
    j["J"] = plan.splits.size();
    j["splits"] = json::array();
    for (std::size_t s = 0; s < plan.splits.size(); ++s) {
        j["splits"].push_back({{"split_id", s},
                               {"train_groups", plan.splits[s].train_groups},
                               {"validation_groups", plan.splits[s].validation_groups}});
    }
    return j.dump(2) + "\n";
}

SplitPlan split_plan_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
        SplitPlan plan;
        plan.scheme = parse_split_scheme(j.at("scheme").get<std::string>());
        plan.num_groups = j.at("N").get<std::size_t>();
        plan.validation_size = j.at("k").get<std::size_t>();
        for (const auto& s : j.at("splits")) {
            Split split;
            split.train_groups = s.at("train_groups").get<std::vector<std::size_t>>();
            split.validation_groups = s.at("validation_groups").get<std::vector<std::size_t>>();
            std::vector<std::size_t> all = split.train_groups;
            all.insert(all.end(), split.validation_groups.begin(), split.validation_groups.end());
            std::sort(all.begin(), all.end());
            for (std::size_t g = 0; g < all.size(); ++g) {
                if (all.size() != plan.num_groups || all[g] != g) {
                    throw DataError("split plan: train and validation groups must partition 0..N-1");
                }
            }
            plan.splits.push_back(std::move(split));
        }
        return plan;
    } catch (const json::exception& e) {
        throw DataError(std::string("split plan JSON: ") + e.what());
    }
}

}  // namespace pboguard
