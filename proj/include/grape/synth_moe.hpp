#pragma once

#include <cstdint>
#include <vector>

#include "grape/matrix.hpp"

namespace grape {

// One feed-forward expert: y = gelu(x * w_in) * w_out.
struct Expert {
    Matrix w_in;   // d_model x d_ff
    Matrix w_out;  // d_ff x d_model
};

struct MoeLayer {
    Matrix gate;  // n_experts x d_model, one row per expert
    std::vector<Expert> experts;
    std::size_t top_k = 1;
};

// Stack of sparse MoE layers, no attention or residuals. `planted_redundancy`
// records the per-layer duplication level the generator was asked for.
struct SynthMoeModel {
    std::size_t d_model = 0;
    std::size_t d_ff = 0;
    std::vector<MoeLayer> layers;
    std::vector<double> planted_redundancy;
    std::uint64_t seed = 0;
};

// Dense activation record from running calibration tokens through the model.
// Every expert sees every token, so pairwise similarity is defined on a
// common sample set regardless of routing.
struct CalibrationCapture {
    std::size_t tokens = 0;
    std::size_t d_model = 0;
    std::vector<Matrix> layer_inputs;                      // per layer: T x d_model
    std::vector<std::vector<Matrix>> expert_outputs;       // per layer, per expert: T x d_model
    std::vector<std::vector<std::uint64_t>> visit_counts;  // per layer, per expert
};

double gelu(double x);

Matrix expert_forward(const Expert & expert, const Matrix & x);

// Per-token routing probabilities for one layer: a full T x n_experts row per
// token, zero outside the selected top-k set, softmax-renormalized inside it.
// Selection ties go to the lower expert index.
Matrix route_layer(const MoeLayer & layer, const Matrix & x);

Matrix layer_forward(const MoeLayer & layer, const Matrix & x);

// Experts in each layer are noisy copies of ceil(n*(1-r)) independently drawn
// base experts, with copy noise of standard deviation (1-r)*sigma0 where
// sigma0 = 1/sqrt(d_model). r=0 plants independent experts, r=1 exact
// duplicates. Deterministic for a fixed seed.
SynthMoeModel generate_model(std::size_t layer_count,
                             const std::vector<std::size_t> & n_per_layer,
                             std::size_t d_model,
                             std::size_t d_ff,
                             std::size_t top_k,
                             const std::vector<double> & redundancy_levels,
                             std::uint64_t seed);

Matrix forward(const SynthMoeModel & model, const Matrix & tokens);

struct ForwardTrace {
    std::vector<Matrix> layer_inputs;
    std::vector<Matrix> layer_outputs;
    std::vector<Matrix> routing;  // per layer: T x n_experts
};

ForwardTrace forward_trace(const SynthMoeModel & model, const Matrix & tokens);

CalibrationCapture capture_calibration(const SynthMoeModel & model, const Matrix & tokens);

// i.i.d. standard gaussian token batch.
Matrix gaussian_tokens(std::size_t count, std::size_t d_model, std::uint64_t seed);

}  // namespace grape
