#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "grape/similarity.hpp"
#include "grape/synth_moe.hpp"

namespace grape {

enum class PlanMethod { grape, uniform, count_guided, router_guided, random };

enum class TraceKind { merge, freeze, restart };

// One step of the pruning loop. `pair` and `pair_similarity` are only
// meaningful for merge events; `layer` is unused for restarts.
struct TraceEvent {
    std::size_t step = 0;
    TraceKind kind = TraceKind::merge;
    std::size_t layer = 0;
    std::pair<std::size_t, std::size_t> pair{0, 0};
    double pair_similarity = 0.0;
    double entropy_after = 0.0;               // nats
    std::vector<std::size_t> frozen_after;    // sorted layer indices
};

// Per-layer partition of expert indices into clusters; each cluster becomes
// one retained expert. Clusters are sorted by their smallest member, members
// ascending, so serialized plans are canonical.
struct ClusterPlan {
    PlanMethod method = PlanMethod::grape;
    std::size_t budget_total = 0;  // total retained experts, all layers
    double gamma = 1.0;
    std::vector<std::vector<std::vector<std::size_t>>> layers;
    std::vector<TraceEvent> trace;
    double objective_retained_mass = 0.0;
};

// Entropy bookkeeping for the global safeguard: fractions of retained
// clusters per layer, their entropy, and the freeze threshold.
struct EntropyState {
    std::vector<double> fractions;
    double entropy = 0.0;    // nats
    double threshold = 0.0;  // initial entropy * (1 - gamma)
    double gamma = 1.0;
    std::vector<std::size_t> frozen;  // sorted layer indices
};

// Entropy (nats) of the distribution of per-layer counts. All counts must be
// at least 1.
double cluster_entropy(const std::vector<std::size_t> & counts);

EntropyState make_entropy_state(const std::vector<std::size_t> & counts, double gamma);

// Retained-mass objective of a clustering against the given blocks: the sum
// of block entries over ordered pairs of distinct cluster representatives
// (lowest member index represents its cluster).
double retained_mass(const std::vector<SimilarityBlock> & blocks,
                     const std::vector<std::vector<std::vector<std::size_t>>> & layers);

std::vector<std::size_t> plan_layer_counts(const ClusterPlan & plan);

// Entropy-aware global greedy pruning with restart. Repeatedly merges the
// most similar pair in the unfrozen layer with the largest residual
// similarity mass; freezes a layer when a merge drops the global entropy
// below threshold; resets the frozen set when every eligible layer is frozen
// and the budget is unmet. Ties break to the lowest layer index and the
// lexicographically smallest pair.
ClusterPlan grape_prune(const std::vector<SimilarityBlock> & blocks,
                        std::size_t keep_total,
                        double gamma,
                        const std::vector<std::size_t> & min_keep);

// Per-layer greedy baseline: the same pair rule as grape_prune applied
// independently in every layer, pruning exactly `e_per_layer` experts each.
ClusterPlan uniform_prune(const std::vector<SimilarityBlock> & blocks,
                          std::size_t e_per_layer,
                          const std::vector<std::size_t> & min_keep);

// Visitation-frequency baseline: drops the e least-visited experts per layer
// (ties drop the higher index) into the cluster of the most-visited retained
// expert.
ClusterPlan count_guided_prune(const CalibrationCapture & capture,
                               std::size_t e_per_layer,
                               const std::vector<std::size_t> & min_keep);

// Router-similarity baseline: cosine similarity of gate rows (clamped to
// [0, 1]) forms the block, then per-layer greedy merging as in uniform_prune.
ClusterPlan router_guided_prune(const SynthMoeModel & model,
                                std::size_t e_per_layer,
                                const std::vector<std::size_t> & min_keep);

// Seeded random allocation baseline: merges uniformly random cluster pairs
// in uniformly random eligible layers until the budget is met.
ClusterPlan random_prune(const std::vector<SimilarityBlock> & blocks,
                         std::size_t keep_total,
                         const std::vector<std::size_t> & min_keep,
                         std::uint64_t seed);

struct OracleResult {
    std::vector<std::size_t> allocation;  // retained count per layer
    double objective = 0.0;
};

// Exhaustive minimum of the retained-mass objective over all feasible
// per-layer retention counts and expert subsets. Guarded to instances with
// at most 24 experts in total.
OracleResult oracle_allocate(const std::vector<SimilarityBlock> & blocks,
                             std::size_t keep_total,
                             const std::vector<std::size_t> & min_keep);

}  // namespace grape
