#pragma once

#include <string>
#include <utility>
#include <vector>

#include "grape/planner.hpp"
#include "grape/synth_moe.hpp"

namespace grape {

// Degradation of a pruned model against its original on held-out tokens.
// Per-layer MSE is end-to-end by default: the pruned stack feeds itself, so
// error compounds the way it would in deployment.
struct FidelityReport {
    std::vector<double> per_layer_mse;
    double end_to_end_mse = 0.0;
    double routing_kl = 0.0;  // nats, original routing aggregated to clusters
    std::size_t tokens = 0;
};

FidelityReport evaluate(const SynthMoeModel & original,
                        const SynthMoeModel & pruned,
                        const ClusterPlan & plan,
                        const Matrix & tokens,
                        bool teacher_forced = false);

struct ComparisonTable {
    std::vector<std::string> columns;
    std::vector<std::pair<std::string, std::vector<double>>> rows;  // method -> metric values
};

// One row per named report, rows sorted by method name.
ComparisonTable compare(const std::vector<std::pair<std::string, FidelityReport>> & reports);

}  // namespace grape
