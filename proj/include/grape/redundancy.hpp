#pragma once

#include <cstddef>
#include <vector>

#include "grape/similarity.hpp"

namespace grape {

// Cross-layer redundancy profile. `mean_redundancy` averages the off-diagonal
// similarity, `residual_mass` is its unnormalized sum (the quantity the
// planner consumes), `normalized` is the min-max rescaled mean per layer.
struct RedundancyProfile {
    std::vector<double> mean_redundancy;
    std::vector<double> residual_mass;
    std::vector<double> normalized;
};

// (1 / (n*(n-1))) * sum of off-diagonal entries. Needs n >= 2.
double mean_redundancy(const SimilarityBlock & block);

// Sum of all off-diagonal entries, both orientations.
double residual_mass(const SimilarityBlock & block);

// Min-max rescale to [0, 1]; a constant input maps to all 0.5 (the midpoint
// stands in for the undefined 0/0 case).
std::vector<double> normalize_profile(const std::vector<double> & scores);

RedundancyProfile build_profile(const std::vector<SimilarityBlock> & blocks);

}  // namespace grape
