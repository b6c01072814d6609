#include "grape/redundancy.hpp"

#include <algorithm>
#include <string>

#include "grape/errors.hpp"

namespace grape {

double mean_redundancy(const SimilarityBlock & block) {
    if (block.n < 2) {
        throw ConfigError("config_invalid", "mean redundancy needs at least two experts");
    }
    const double pairs = static_cast<double>(block.n) * static_cast<double>(block.n - 1);
    return residual_mass(block) / pairs;
}

double residual_mass(const SimilarityBlock & block) {
    double sum = 0.0;
    for (std::size_t i = 0; i < block.n; ++i) {
        for (std::size_t j = 0; j < block.n; ++j) {
            if (i != j) {
                sum += block.values.at(i, j);
            }
        }
    }
    return sum;
}

std::vector<double> normalize_profile(const std::vector<double> & scores) {
    if (scores.empty()) {
        throw ConfigError("config_invalid", "cannot normalize an empty score list");
    }
    const double lo = *std::min_element(scores.begin(), scores.end());
    const double hi = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size(), 0.5);
    if (hi == lo) {
        return out;
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = (scores[i] - lo) / (hi - lo);
    }
    return out;
}

RedundancyProfile build_profile(const std::vector<SimilarityBlock> & blocks) {
    if (blocks.empty()) {
        throw ConfigError("config_invalid", "profile needs at least one block");
    }
    RedundancyProfile profile;
    profile.mean_redundancy.reserve(blocks.size());
    profile.residual_mass.reserve(blocks.size());
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        if (blocks[l].layer != l) {
            throw DataError("bad_block", "blocks must be ordered by layer, one per layer");
        }
        profile.mean_redundancy.push_back(mean_redundancy(blocks[l]));
        profile.residual_mass.push_back(residual_mass(blocks[l]));
    }
    profile.normalized = normalize_profile(profile.mean_redundancy);
    return profile;
}

}  // namespace grape
