#include "grape/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "grape/errors.hpp"

namespace grape {

namespace {

void check_pair_inputs(const Matrix & x, const Matrix & y) {
    if (!same_shape(x, y)) {
        throw DataError("shape_mismatch", "similarity inputs must share a shape");
    }
    if (x.rows < 2) {
        throw DataError("degenerate_input", "similarity needs at least two samples");
    }
}

void check_output_list(const std::vector<Matrix> & outputs) {
    if (outputs.size() < 2) {
        throw ConfigError("config_invalid", "a similarity block needs at least two experts");
    }
    for (const Matrix & m : outputs) {
        if (!same_shape(m, outputs.front())) {
            throw DataError("shape_mismatch", "expert outputs must share a shape");
        }
    }
}

SimilarityBlock empty_block(std::size_t layer, std::size_t n, SimilarityMetric metric) {
    SimilarityBlock block;
    block.layer = layer;
    block.n = n;
    block.values = Matrix(n, n);
    block.metric = metric;
    return block;
}

// Builds a block from pairwise CKA over pre-supplied feature matrices.
// `degenerate_to_zero` maps degenerate pairs to similarity 0 instead of
// raising, for weight-based blocks where a constant tensor is legal input.
SimilarityBlock cka_block_from_features(std::size_t layer,
                                        const std::vector<Matrix> & features,
                                        SimilarityMetric metric,
                                        bool degenerate_to_zero) {
    check_output_list(features);
    const std::size_t n = features.size();

    std::vector<Matrix> centered;
    centered.reserve(n);
    std::vector<double> self_norm(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (features[i].rows < 2) {
            throw DataError("degenerate_input", "similarity needs at least two samples");
        }
        centered.push_back(center_columns(features[i]));
        self_norm[i] = frobenius_norm(matmul(transpose(centered[i]), centered[i]));
        if (self_norm[i] == 0.0 && !degenerate_to_zero) {
            throw DataError("degenerate_input",
                            "expert " + std::to_string(i) + " has constant outputs; CKA undefined");
        }
    }

    SimilarityBlock block = empty_block(layer, n, metric);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double value = 0.0;
            if (self_norm[i] > 0.0 && self_norm[j] > 0.0) {
                const double cross = frobenius_norm(matmul(transpose(centered[j]), centered[i]));
                value = (cross * cross) / (self_norm[i] * self_norm[j]);
                value = std::clamp(value, 0.0, 1.0);
            }
            block.values.at(i, j) = value;
            block.values.at(j, i) = value;
        }
    }
    return block;
}

}  // namespace

void validate_block(const SimilarityBlock & block) {
    if (block.values.rows != block.n || block.values.cols != block.n) {
        throw DataError("shape_mismatch", "similarity block is not n x n");
    }
    for (std::size_t i = 0; i < block.n; ++i) {
        if (block.values.at(i, i) != 0.0) {
            throw DataError("bad_block", "similarity block diagonal must be 0");
        }
        for (std::size_t j = 0; j < block.n; ++j) {
            const double v = block.values.at(i, j);
            if (v < 0.0 || v > 1.0) {
                throw DataError("bad_block", "similarity entry outside [0, 1]");
            }
            if (std::abs(v - block.values.at(j, i)) > 1e-12) {
                throw DataError("bad_block", "similarity block is not symmetric");
            }
        }
    }
}

double linear_cka(const Matrix & x, const Matrix & y) {
    check_pair_inputs(x, y);
    const Matrix xc = center_columns(x);
    const Matrix yc = center_columns(y);
    const double x_self = frobenius_norm(matmul(transpose(xc), xc));
    const double y_self = frobenius_norm(matmul(transpose(yc), yc));
    if (x_self == 0.0 || y_self == 0.0) {
        throw DataError("degenerate_input", "constant input; CKA denominator is zero");
    }
    const double cross = frobenius_norm(matmul(transpose(yc), xc));
    return (cross * cross) / (x_self * y_self);
}

SimilarityBlock cka_similarity_block(std::size_t layer, const std::vector<Matrix> & outputs) {
    return cka_block_from_features(layer, outputs, SimilarityMetric::cka, false);
}

SimilarityBlock mse_similarity_block(std::size_t layer, const std::vector<Matrix> & outputs) {
    check_output_list(outputs);
    const std::size_t n = outputs.size();

    Matrix mse(n, n);
    double max_mse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = mean_squared_error(outputs[i], outputs[j]);
            mse.at(i, j) = m;
            mse.at(j, i) = m;
            max_mse = std::max(max_mse, m);
        }
    }

    SimilarityBlock block = empty_block(layer, n, SimilarityMetric::mse);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) {
                continue;
            }
            // All pairwise MSEs zero means all experts are identical; the
            // convention is an all-ones off-diagonal.
            const double v = max_mse == 0.0 ? 1.0 : 1.0 - mse.at(i, j) / max_mse;
            block.values.at(i, j) = std::clamp(v, 0.0, 1.0);
        }
    }
    return block;
}

SimilarityBlock weight_cka_similarity_block(std::size_t layer, const std::vector<Expert> & experts) {
    std::vector<Matrix> features;
    features.reserve(experts.size());
    for (const Expert & e : experts) {
        // d_model x 2*d_ff: input weights beside transposed output weights.
        const Matrix w_out_t = transpose(e.w_out);
        Matrix f(e.w_in.rows, e.w_in.cols + w_out_t.cols);
        for (std::size_t r = 0; r < f.rows; ++r) {
            for (std::size_t c = 0; c < e.w_in.cols; ++c) {
                f.at(r, c) = e.w_in.at(r, c);
            }
            for (std::size_t c = 0; c < w_out_t.cols; ++c) {
                f.at(r, e.w_in.cols + c) = w_out_t.at(r, c);
            }
        }
        features.push_back(std::move(f));
    }
    return cka_block_from_features(layer, features, SimilarityMetric::weight_cka, true);
}

}  // namespace grape
