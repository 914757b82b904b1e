#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pboguard/trading_env.hpp"

namespace pboguard {

enum class SplitScheme { WalkForward, KFold, Combinatorial };

std::string to_string(SplitScheme scheme);
SplitScheme parse_split_scheme(const std::string& name);

// N contiguous groups of floor(T/N) points over a training window of T
// points; the remainder is dropped from the tail.
struct GroupPartition {
    std::size_t num_groups = 0;
    std::vector<std::size_t> boundaries;  // N + 1 ascending offsets, boundaries[0] == 0

    std::size_t group_size() const { return boundaries[1] - boundaries[0]; }
    std::size_t used_points() const { return boundaries.back(); }
    Window group(std::size_t g) const { return {boundaries[g], boundaries[g + 1]}; }
};

GroupPartition make_partition(std::size_t num_points, std::size_t num_groups);

struct Split {
    std::vector<std::size_t> train_groups;
    std::vector<std::size_t> validation_groups;
};

struct SplitPlan {
    SplitScheme scheme = SplitScheme::Combinatorial;
    std::size_t num_groups = 0;       // N
    std::size_t validation_size = 0;  // k
    std::vector<Split> splits;

    std::size_t num_splits() const { return splits.size(); }  // J
};

// All C(N, k) choices of k validation groups, in lexicographic order.
SplitPlan make_combinatorial(std::size_t num_groups, std::size_t validation_groups);
// One split: the leading round(fraction * N) groups (clamped to [1, N-1]) train.
SplitPlan make_walk_forward(std::size_t num_groups, double train_fraction);
// N splits, each validating on one group.
SplitPlan make_kfold(std::size_t num_groups);

// Concrete index ranges of one split, offset by `origin` (the first step of
// the training window). Training ranges are merged where contiguous; every
// validation group stays a separate range so each is replayed as its own
// episode.
struct MaterializedSplit {
    std::vector<Window> train;
    std::vector<Window> validation;
};

std::vector<MaterializedSplit> materialize(const SplitPlan& plan, const GroupPartition& partition,
                                           std::size_t embargo = 0, std::size_t origin = 0);

std::size_t binomial(std::size_t n, std::size_t k);

std::string split_plan_to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const std::string& text);

}  // namespace pboguard
