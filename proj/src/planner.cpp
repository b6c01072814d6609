#include "grape/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "grape/errors.hpp"
#include "grape/rng.hpp"

namespace grape {

namespace {

// Union-find over expert indices of one layer. The root is always the
// smallest member, so roots double as cluster representatives.
struct Dsu {
    std::vector<std::size_t> parent;

    explicit Dsu(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }

    std::size_t find(std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }

    // Returns false when a and b were already in the same cluster.
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) {
            return false;
        }
        if (b < a) {
            std::swap(a, b);
        }
        parent[b] = a;
        return true;
    }
};

std::vector<std::vector<std::size_t>> dsu_clusters(Dsu & dsu, std::size_t n) {
    std::vector<std::vector<std::size_t>> by_root(n);
    for (std::size_t i = 0; i < n; ++i) {
        by_root[dsu.find(i)].push_back(i);
    }
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < n; ++i) {
        if (!by_root[i].empty()) {
            clusters.push_back(std::move(by_root[i]));  // members already ascending
        }
    }
    return clusters;
}

double off_diagonal_sum(const Matrix & m) {
    double sum = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (i != j) {
                sum += m.at(i, j);
            }
        }
    }
    return sum;
}

// argmax over i<j with ties to the lexicographically smallest pair.
std::pair<std::size_t, std::size_t> best_pair(const Matrix & values) {
    std::pair<std::size_t, std::size_t> best{0, 1};
    double best_value = -1.0;
    for (std::size_t i = 0; i < values.rows; ++i) {
        for (std::size_t j = i + 1; j < values.cols; ++j) {
            if (values.at(i, j) > best_value) {
                best_value = values.at(i, j);
                best = {i, j};
            }
        }
    }
    return best;
}

void validate_blocks(const std::vector<SimilarityBlock> & blocks,
                     const std::vector<std::size_t> & min_keep) {
    if (blocks.empty()) {
        throw ConfigError("config_invalid", "planner needs at least one similarity block");
    }
    if (min_keep.size() != blocks.size()) {
        throw ConfigError("config_invalid", "min_keep needs one entry per layer");
    }
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        validate_block(blocks[l]);
        if (min_keep[l] < 1 || min_keep[l] > blocks[l].n) {
            throw ConfigError("config_invalid",
                              "min_keep out of range at layer " + std::to_string(l));
        }
    }
}

void check_budget(std::size_t keep_total, std::size_t min_total, std::size_t total_n) {
    if (keep_total < min_total || keep_total > total_n) {
        throw ConfigError("budget_infeasible",
                          "keep=" + std::to_string(keep_total) + " is outside the feasible range [" +
                              std::to_string(min_total) + ", " + std::to_string(total_n) + "]");
    }
}

std::vector<std::size_t> frozen_sorted(const std::vector<bool> & frozen) {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < frozen.size(); ++l) {
        if (frozen[l]) {
            out.push_back(l);
        }
    }
    return out;
}

ClusterPlan finish_plan(PlanMethod method,
                        std::size_t budget_total,
                        double gamma,
                        const std::vector<SimilarityBlock> & blocks,
                        std::vector<Dsu> & dsus,
                        std::vector<TraceEvent> trace) {
    ClusterPlan plan;
    plan.method = method;
    plan.budget_total = budget_total;
    plan.gamma = gamma;
    plan.layers.reserve(blocks.size());
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        plan.layers.push_back(dsu_clusters(dsus[l], blocks[l].n));
    }
    plan.trace = std::move(trace);
    plan.objective_retained_mass = retained_mass(blocks, plan.layers);
    return plan;
}

// Greedy highest-similarity merges within one layer until its cluster count
// reaches `target`. Shared by the uniform and router-guided baselines; a
// selected pair that is co-clustered with similarity zero can never make
// progress again, which is reported as a stall.
void greedy_layer_merges(Matrix & work,
                         Dsu & dsu,
                         std::vector<std::size_t> & counts,
                         std::size_t layer,
                         std::size_t target,
                         std::size_t & step,
                         std::vector<TraceEvent> & trace) {
    while (counts[layer] > target) {
        const auto [i, j] = best_pair(work);
        const double v = work.at(i, j);
        const bool merged = dsu.unite(i, j);
        work.at(i, j) = 0.0;
        work.at(j, i) = 0.0;
        if (merged) {
            --counts[layer];
        } else if (v == 0.0) {
            throw StallError("planner_stall",
                             "layer " + std::to_string(layer) + " has no similarity mass left with " +
                                 std::to_string(counts[layer] - target) + " merges still required");
        }
        TraceEvent event;
        event.step = step++;
        event.kind = TraceKind::merge;
        event.layer = layer;
        event.pair = {i, j};
        event.pair_similarity = v;
        event.entropy_after = cluster_entropy(counts);
        trace.push_back(std::move(event));
    }
}

}  // namespace

double cluster_entropy(const std::vector<std::size_t> & counts) {
    if (counts.empty()) {
        throw ConfigError("config_invalid", "entropy of an empty count list");
    }
    double total = 0.0;
    for (std::size_t c : counts) {
        if (c == 0) {
            throw ConfigError("config_invalid", "entropy needs every layer count >= 1");
        }
        total += static_cast<double>(c);
    }
    double entropy = 0.0;
    for (std::size_t c : counts) {
        const double p = static_cast<double>(c) / total;
        entropy -= p * std::log(p);
    }
    return entropy;
}

EntropyState make_entropy_state(const std::vector<std::size_t> & counts, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw ConfigError("config_invalid", "gamma must lie in [0, 1]");
    }
    EntropyState state;
    state.gamma = gamma;
    state.entropy = cluster_entropy(counts);
    state.threshold = state.entropy * (1.0 - gamma);
    double total = 0.0;
    for (std::size_t c : counts) {
        total += static_cast<double>(c);
    }
    state.fractions.reserve(counts.size());
    for (std::size_t c : counts) {
        state.fractions.push_back(static_cast<double>(c) / total);
    }
    return state;
}

double retained_mass(const std::vector<SimilarityBlock> & blocks,
                     const std::vector<std::vector<std::vector<std::size_t>>> & layers) {
    if (blocks.size() != layers.size()) {
        throw DataError("plan_mismatch", "plan layer count does not match block count");
    }
    double mass = 0.0;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        std::vector<std::size_t> reps;
        reps.reserve(layers[l].size());
        for (const auto & cluster : layers[l]) {
            if (cluster.empty()) {
                throw DataError("plan_mismatch", "empty cluster in plan");
            }
            reps.push_back(*std::min_element(cluster.begin(), cluster.end()));
        }
        std::sort(reps.begin(), reps.end());
        for (std::size_t a : reps) {
            for (std::size_t b : reps) {
                if (a != b) {
                    mass += blocks[l].values.at(a, b);
                }
            }
        }
    }
    return mass;
}

std::vector<std::size_t> plan_layer_counts(const ClusterPlan & plan) {
    std::vector<std::size_t> counts;
    counts.reserve(plan.layers.size());
    for (const auto & clusters : plan.layers) {
        counts.push_back(clusters.size());
    }
    return counts;
}

ClusterPlan grape_prune(const std::vector<SimilarityBlock> & blocks,
                        std::size_t keep_total,
                        double gamma,
                        const std::vector<std::size_t> & min_keep) {
    validate_blocks(blocks, min_keep);
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw ConfigError("config_invalid", "gamma must lie in [0, 1]");
    }
    const std::size_t layer_count = blocks.size();
    std::size_t total = 0;
    std::size_t min_total = 0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        total += blocks[l].n;
        min_total += min_keep[l];
    }
    check_budget(keep_total, min_total, total);

    std::vector<Matrix> work;
    work.reserve(layer_count);
    std::vector<double> residual(layer_count, 0.0);
    std::vector<std::size_t> counts(layer_count);
    std::vector<Dsu> dsus;
    dsus.reserve(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
        work.push_back(blocks[l].values);
        residual[l] = off_diagonal_sum(work[l]);
        counts[l] = blocks[l].n;
        dsus.emplace_back(blocks[l].n);
    }

    const double initial_entropy = cluster_entropy(counts);
    const double threshold = initial_entropy * (1.0 - gamma);
    std::vector<bool> frozen(layer_count, false);

    std::vector<TraceEvent> trace;
    std::size_t step = 0;
    // Iterations that neither merge clusters nor consume positive similarity
    // mass can only cycle through freeze/restart states; more than 2L+2 of
    // them in a row proves the loop can no longer reach the budget.
    std::size_t unproductive = 0;

    while (total > keep_total) {
        bool any_unfrozen_eligible = false;
        bool any_eligible = false;
        for (std::size_t l = 0; l < layer_count; ++l) {
            if (counts[l] > min_keep[l]) {
                any_eligible = true;
                if (!frozen[l]) {
                    any_unfrozen_eligible = true;
                }
            }
        }
        (void)any_eligible;  // guaranteed by the budget check above

        if (!any_unfrozen_eligible) {
            std::fill(frozen.begin(), frozen.end(), false);
            TraceEvent event;
            event.step = step++;
            event.kind = TraceKind::restart;
            event.entropy_after = cluster_entropy(counts);
            trace.push_back(std::move(event));
        }

        // Layer choice: largest residual mass among unfrozen layers above
        // their floor, ties to the lowest index.
        std::size_t best_layer = layer_count;
        double best_residual = -std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < layer_count; ++l) {
            if (frozen[l] || counts[l] <= min_keep[l]) {
                continue;
            }
            if (residual[l] > best_residual) {
                best_residual = residual[l];
                best_layer = l;
            }
        }

        const auto [i, j] = best_pair(work[best_layer]);
        const double v = work[best_layer].at(i, j);
        const bool merged = dsus[best_layer].unite(i, j);
        work[best_layer].at(i, j) = 0.0;
        work[best_layer].at(j, i) = 0.0;
        residual[best_layer] -= 2.0 * v;
        if (merged) {
            --counts[best_layer];
            --total;
        }
        const double entropy = cluster_entropy(counts);

        TraceEvent event;
        event.step = step++;
        event.kind = TraceKind::merge;
        event.layer = best_layer;
        event.pair = {i, j};
        event.pair_similarity = v;
        event.entropy_after = entropy;
        event.frozen_after = frozen_sorted(frozen);
        trace.push_back(std::move(event));

        if (entropy < threshold) {
            frozen[best_layer] = true;
            TraceEvent freeze;
            freeze.step = step++;
            freeze.kind = TraceKind::freeze;
            freeze.layer = best_layer;
            freeze.entropy_after = entropy;
            freeze.frozen_after = frozen_sorted(frozen);
            trace.push_back(std::move(freeze));
        }

        if (merged || v > 0.0) {
            unproductive = 0;
        } else if (++unproductive > 2 * layer_count + 2) {
            throw StallError("planner_stall",
                             "similarity mass exhausted with " + std::to_string(total - keep_total) +
                                 " merges still required to reach keep=" + std::to_string(keep_total));
        }
    }

    return finish_plan(PlanMethod::grape, keep_total, gamma, blocks, dsus, std::move(trace));
}

ClusterPlan uniform_prune(const std::vector<SimilarityBlock> & blocks,
                          std::size_t e_per_layer,
                          const std::vector<std::size_t> & min_keep) {
    validate_blocks(blocks, min_keep);
    const std::size_t layer_count = blocks.size();
    std::size_t budget = 0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        if (blocks[l].n < e_per_layer + min_keep[l]) {
            throw ConfigError("budget_infeasible",
                              "layer " + std::to_string(l) + " cannot lose " +
                                  std::to_string(e_per_layer) + " experts and keep " +
                                  std::to_string(min_keep[l]));
        }
        budget += blocks[l].n - e_per_layer;
    }

    std::vector<std::size_t> counts(layer_count);
    std::vector<Dsu> dsus;
    dsus.reserve(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
        counts[l] = blocks[l].n;
        dsus.emplace_back(blocks[l].n);
    }

    std::vector<TraceEvent> trace;
    std::size_t step = 0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        Matrix work = blocks[l].values;
        greedy_layer_merges(work, dsus[l], counts, l, blocks[l].n - e_per_layer, step, trace);
    }
    return finish_plan(PlanMethod::uniform, budget, 1.0, blocks, dsus, std::move(trace));
}

ClusterPlan count_guided_prune(const CalibrationCapture & capture,
                               std::size_t e_per_layer,
                               const std::vector<std::size_t> & min_keep) {
    const std::size_t layer_count = capture.visit_counts.size();
    if (layer_count == 0) {
        throw ConfigError("config_invalid", "capture holds no layers");
    }
    if (min_keep.size() != layer_count) {
        throw ConfigError("config_invalid", "min_keep needs one entry per layer");
    }

    std::vector<std::size_t> counts(layer_count);
    std::vector<Dsu> dsus;
    std::size_t budget = 0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        const std::size_t n = capture.visit_counts[l].size();
        if (n < e_per_layer + min_keep[l]) {
            throw ConfigError("budget_infeasible",
                              "layer " + std::to_string(l) + " cannot lose " +
                                  std::to_string(e_per_layer) + " experts and keep " +
                                  std::to_string(min_keep[l]));
        }
        counts[l] = n;
        dsus.emplace_back(n);
        budget += n - e_per_layer;
    }

    std::vector<TraceEvent> trace;
    std::size_t step = 0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        const std::vector<std::uint64_t> & visits = capture.visit_counts[l];
        const std::size_t n = visits.size();

        // Drop order: fewest visits first, ties drop the higher index.
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (visits[a] != visits[b]) {
                return visits[a] < visits[b];
            }
            return a > b;
        });
        std::vector<bool> dropped(n, false);
        for (std::size_t d = 0; d < e_per_layer; ++d) {
            dropped[order[d]] = true;
        }

        // Absorber: most-visited retained expert, ties to the lower index.
        std::size_t absorber = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (dropped[i]) {
                continue;
            }
            if (absorber == n || visits[i] > visits[absorber]) {
                absorber = i;
            }
        }

        for (std::size_t i = 0; i < n; ++i) {
            if (!dropped[i]) {
                continue;
            }
            dsus[l].unite(absorber, i);
            --counts[l];
            TraceEvent event;
            event.step = step++;
            event.kind = TraceKind::merge;
            event.layer = l;
            event.pair = {std::min(absorber, i), std::max(absorber, i)};
            event.pair_similarity = 0.0;
            event.entropy_after = cluster_entropy(counts);
            trace.push_back(std::move(event));
        }
    }

    ClusterPlan plan;
    plan.method = PlanMethod::count_guided;
    plan.budget_total = budget;
    plan.gamma = 1.0;
    plan.layers.reserve(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
        plan.layers.push_back(dsu_clusters(dsus[l], capture.visit_counts[l].size()));
    }
    plan.trace = std::move(trace);
    plan.objective_retained_mass = 0.0;  // no similarity source for this method
    return plan;
}

ClusterPlan router_guided_prune(const SynthMoeModel & model,
                                std::size_t e_per_layer,
                                const std::vector<std::size_t> & min_keep) {
    if (model.layers.empty()) {
        throw ConfigError("config_invalid", "model holds no layers");
    }
    std::vector<SimilarityBlock> blocks;
    blocks.reserve(model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const Matrix & gate = model.layers[l].gate;
        const std::size_t n = gate.rows;
        std::vector<double> norms(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < gate.cols; ++c) {
                acc += gate.at(i, c) * gate.at(i, c);
            }
            norms[i] = std::sqrt(acc);
        }
        SimilarityBlock block;
        block.layer = l;
        block.n = n;
        block.metric = SimilarityMetric::cka;  // placeholder metric tag; values are cosines
        block.values = Matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double cosine = 0.0;
                if (norms[i] > 0.0 && norms[j] > 0.0) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < gate.cols; ++c) {
                        dot += gate.at(i, c) * gate.at(j, c);
                    }
                    cosine = dot / (norms[i] * norms[j]);
                }
                // Negative cosines carry no redundancy signal; clamp into the
                // block's [0, 1] range.
                const double v = std::clamp(cosine, 0.0, 1.0);
                block.values.at(i, j) = v;
                block.values.at(j, i) = v;
            }
        }
        blocks.push_back(std::move(block));
    }

    ClusterPlan plan = uniform_prune(blocks, e_per_layer, min_keep);
    plan.method = PlanMethod::router_guided;
    return plan;
}

ClusterPlan random_prune(const std::vector<SimilarityBlock> & blocks,
                         std::size_t keep_total,
                         const std::vector<std::size_t> & min_keep,
                         std::uint64_t seed) {
    validate_blocks(blocks, min_keep);
    const std::size_t layer_count = blocks.size();
    std::size_t total = 0;
    std::size_t min_total = 0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        total += blocks[l].n;
        min_total += min_keep[l];
    }
    check_budget(keep_total, min_total, total);

    std::vector<std::size_t> counts(layer_count);
    std::vector<Dsu> dsus;
    for (std::size_t l = 0; l < layer_count; ++l) {
        counts[l] = blocks[l].n;
        dsus.emplace_back(blocks[l].n);
    }

    Rng rng(seed);
    std::vector<TraceEvent> trace;
    std::size_t step = 0;
    while (total > keep_total) {
        std::vector<std::size_t> eligible;
        for (std::size_t l = 0; l < layer_count; ++l) {
            if (counts[l] > min_keep[l]) {
                eligible.push_back(l);
            }
        }
        const std::size_t layer = eligible[rng.below(eligible.size())];

        std::vector<std::size_t> roots;
        for (std::size_t i = 0; i < blocks[layer].n; ++i) {
            if (dsus[layer].find(i) == i) {
                roots.push_back(i);
            }
        }
        const std::size_t a = rng.below(roots.size());
        std::size_t b = rng.below(roots.size() - 1);
        if (b >= a) {
            ++b;
        }
        const std::size_t lo = std::min(roots[a], roots[b]);
        const std::size_t hi = std::max(roots[a], roots[b]);
        dsus[layer].unite(lo, hi);
        --counts[layer];
        --total;

        TraceEvent event;
        event.step = step++;
        event.kind = TraceKind::merge;
        event.layer = layer;
        event.pair = {lo, hi};
        event.pair_similarity = blocks[layer].values.at(lo, hi);
        event.entropy_after = cluster_entropy(counts);
        trace.push_back(std::move(event));
    }
    return finish_plan(PlanMethod::random, keep_total, 1.0, blocks, dsus, std::move(trace));
}

OracleResult oracle_allocate(const std::vector<SimilarityBlock> & blocks,
                             std::size_t keep_total,
                             const std::vector<std::size_t> & min_keep) {
    validate_blocks(blocks, min_keep);
    const std::size_t layer_count = blocks.size();
    std::size_t total = 0;
    std::size_t min_total = 0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        total += blocks[l].n;
        min_total += min_keep[l];
    }
    if (total > 24) {
        throw ConfigError("oracle_guard", "exhaustive oracle is limited to 24 experts in total, got " +
                                              std::to_string(total));
    }
    check_budget(keep_total, min_total, total);

    constexpr double kInf = std::numeric_limits<double>::infinity();

    // Per layer: minimal retained mass over subsets of each size, found by
    // depth-first combination enumeration with an incremental pair sum.
    std::vector<std::vector<double>> best_mass(layer_count);
    for (std::size_t l = 0; l < layer_count; ++l) {
        const std::size_t n = blocks[l].n;
        const Matrix & d = blocks[l].values;
        std::vector<double> best(n + 1, kInf);
        best[0] = 0.0;
        std::vector<std::size_t> members;

        auto enumerate = [&](auto && self, std::size_t next, double mass) -> void {
            if (mass < best[members.size()]) {
                best[members.size()] = mass;
            }
            for (std::size_t x = next; x < n; ++x) {
                double delta = 0.0;
                for (std::size_t m : members) {
                    delta += 2.0 * d.at(m, x);
                }
                members.push_back(x);
                self(self, x + 1, mass + delta);
                members.pop_back();
            }
        };
        enumerate(enumerate, 0, 0.0);
        best_mass[l] = std::move(best);
    }

    // Compose layers: minimal total mass for every feasible total count.
    std::vector<double> dp(keep_total + 1, kInf);
    std::vector<std::vector<std::size_t>> choice(layer_count,
                                                 std::vector<std::size_t>(keep_total + 1, 0));
    dp[0] = 0.0;
    for (std::size_t l = 0; l < layer_count; ++l) {
        std::vector<double> next_dp(keep_total + 1, kInf);
        for (std::size_t c = 0; c <= keep_total; ++c) {
            if (dp[c] == kInf) {
                continue;
            }
            for (std::size_t keep = min_keep[l]; keep <= blocks[l].n; ++keep) {
                const std::size_t c2 = c + keep;
                if (c2 > keep_total) {
                    break;
                }
                const double candidate = dp[c] + best_mass[l][keep];
                if (candidate < next_dp[c2]) {
                    next_dp[c2] = candidate;
                    choice[l][c2] = keep;
                }
            }
        }
        dp = std::move(next_dp);
    }
    if (dp[keep_total] == kInf) {
        throw ConfigError("budget_infeasible", "no feasible per-layer allocation reaches the budget");
    }

    OracleResult result;
    result.objective = dp[keep_total];
    result.allocation.assign(layer_count, 0);
    std::size_t remaining = keep_total;
    for (std::size_t l = layer_count; l-- > 0;) {
        const std::size_t keep = choice[l][remaining];
        result.allocation[l] = keep;
        remaining -= keep;
    }
    return result;
}

}  // namespace grape
