#pragma once

#include "grape/planner.hpp"
#include "grape/synth_moe.hpp"

namespace grape {

// How a cluster collapses into its retained expert. `average` takes the
// arithmetic mean of member tensors and gate rows; `representative` keeps the
// member with the largest intra-cluster weight-similarity sum untouched and
// discards the rest.
enum class MergeMode { average, representative };

SynthMoeModel apply_plan(const SynthMoeModel & model, const ClusterPlan & plan, MergeMode mode);

}  // namespace grape
