#pragma once

#include <cstddef>
#include <vector>

#include "grape/matrix.hpp"
#include "grape/synth_moe.hpp"

namespace grape {

enum class SimilarityMetric { cka, mse, weight_cka };

// Symmetric per-layer expert-similarity matrix. Off-diagonal entries are in
// [0, 1]; the diagonal is fixed to 0 so full-matrix sums equal the sums over
// distinct pairs.
struct SimilarityBlock {
    std::size_t layer = 0;
    std::size_t n = 0;
    Matrix values;  // n x n
    SimilarityMetric metric = SimilarityMetric::cka;
};

// Throws DataError when symmetry, range or the zero diagonal are violated.
void validate_block(const SimilarityBlock & block);

// Linear centered kernel alignment between two equally-shaped sample
// matrices:  |Yc' Xc|_F^2 / (|Xc' Xc|_F * |Yc' Yc|_F).
// Throws DataError("degenerate_input") when either input is constant in
// every column.
double linear_cka(const Matrix & x, const Matrix & y);

SimilarityBlock cka_similarity_block(std::size_t layer, const std::vector<Matrix> & outputs);

// Pairwise MSE mapped to similarity via 1 - mse/max_mse (layer-local
// normalization). All experts identical yields all-ones off-diagonal.
SimilarityBlock mse_similarity_block(std::size_t layer, const std::vector<Matrix> & outputs);

// CKA on flattened expert weights [w_in | w_out'], used where no activation
// capture is available (e.g. picking a cluster representative at apply time).
SimilarityBlock weight_cka_similarity_block(std::size_t layer, const std::vector<Expert> & experts);

}  // namespace grape
