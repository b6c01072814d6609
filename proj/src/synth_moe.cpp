#include "grape/synth_moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "grape/errors.hpp"
#include "grape/rng.hpp"

namespace grape {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

Matrix gaussian_matrix(Rng & rng, std::size_t rows, std::size_t cols, double sigma) {
    Matrix m(rows, cols);
    for (double & v : m.data) {
        v = sigma * rng.gaussian();
    }
    return m;
}

void check_layer(const MoeLayer & layer) {
    const std::size_t n = layer.experts.size();
    if (n == 0 || layer.top_k < 1 || layer.top_k > n) {
        throw ConfigError("config_invalid", "layer needs 1 <= top_k <= expert count");
    }
    if (layer.gate.rows != n) {
        throw DataError("shape_mismatch", "gate row count does not match expert count");
    }
}

struct LayerRun {
    Matrix probs;                     // T x n
    std::vector<Matrix> expert_outs;  // per expert: T x d_model
    Matrix output;                    // T x d_model
};

LayerRun run_layer(const MoeLayer & layer, const Matrix & x) {
    check_layer(layer);
    const std::size_t n = layer.experts.size();
    const std::size_t t_count = x.rows;
    const std::size_t d_model = layer.gate.cols;
    if (x.cols != d_model) {
        throw DataError("shape_mismatch", "layer input width " + std::to_string(x.cols) +
                                              " does not match d_model " + std::to_string(d_model));
    }

    LayerRun run;
    run.probs = route_layer(layer, x);
    run.expert_outs.reserve(n);
    for (std::size_t e = 0; e < n; ++e) {
        run.expert_outs.push_back(expert_forward(layer.experts[e], x));
    }
    run.output = Matrix(t_count, d_model);
    for (std::size_t t = 0; t < t_count; ++t) {
        for (std::size_t e = 0; e < n; ++e) {
            const double alpha = run.probs.at(t, e);
            if (alpha == 0.0) {
                continue;
            }
            for (std::size_t d = 0; d < d_model; ++d) {
                run.output.at(t, d) += alpha * run.expert_outs[e].at(t, d);
            }
        }
    }
    return run;
}

}  // namespace

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

Matrix expert_forward(const Expert & expert, const Matrix & x) {
    Matrix hidden = matmul(x, expert.w_in);
    for (double & v : hidden.data) {
        v = gelu(v);
    }
    return matmul(hidden, expert.w_out);
}

Matrix route_layer(const MoeLayer & layer, const Matrix & x) {
    check_layer(layer);
    const std::size_t n = layer.experts.size();
    const std::size_t k = layer.top_k;
    const Matrix logits = matmul(x, transpose(layer.gate));  // T x n

    Matrix probs(x.rows, n);
    std::vector<std::size_t> order(n);
    for (std::size_t t = 0; t < x.rows; ++t) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double la = logits.at(t, a);
            const double lb = logits.at(t, b);
            if (la != lb) {
                return la > lb;
            }
            return a < b;  // ties to the lower expert index
        });
        order.resize(k);
        std::sort(order.begin(), order.end());

        double max_logit = logits.at(t, order[0]);
        for (std::size_t s : order) {
            max_logit = std::max(max_logit, logits.at(t, s));
        }
        double denom = 0.0;
        for (std::size_t s : order) {
            denom += std::exp(logits.at(t, s) - max_logit);
        }
        for (std::size_t s : order) {
            probs.at(t, s) = std::exp(logits.at(t, s) - max_logit) / denom;
        }
        order.resize(n);
    }
    return probs;
}

Matrix layer_forward(const MoeLayer & layer, const Matrix & x) {
    return run_layer(layer, x).output;
}

SynthMoeModel generate_model(std::size_t layer_count,
                             const std::vector<std::size_t> & n_per_layer,
                             std::size_t d_model,
                             std::size_t d_ff,
                             std::size_t top_k,
                             const std::vector<double> & redundancy_levels,
                             std::uint64_t seed) {
    if (layer_count == 0 || d_model == 0 || d_ff == 0 || top_k == 0) {
        throw ConfigError("config_invalid", "layer count, dims and top_k must be positive");
    }
    if (n_per_layer.size() != layer_count || redundancy_levels.size() != layer_count) {
        throw ConfigError("config_invalid",
                          "expert counts and redundancy levels must both have one entry per layer");
    }
    for (std::size_t l = 0; l < layer_count; ++l) {
        if (n_per_layer[l] < top_k) {
            throw ConfigError("config_invalid", "layer " + std::to_string(l) +
                                                    " has fewer experts than top_k");
        }
        const double r = redundancy_levels[l];
        if (!(r >= 0.0 && r <= 1.0)) {
            throw ConfigError("config_invalid", "redundancy level outside [0, 1] at layer " +
                                                    std::to_string(l));
        }
    }

    const double sigma0 = 1.0 / std::sqrt(static_cast<double>(d_model));
    Rng rng(seed);

    SynthMoeModel model;
    model.d_model = d_model;
    model.d_ff = d_ff;
    model.planted_redundancy = redundancy_levels;
    model.seed = seed;
    model.layers.reserve(layer_count);

    for (std::size_t l = 0; l < layer_count; ++l) {
        const std::size_t n = n_per_layer[l];
        const double r = redundancy_levels[l];

        MoeLayer layer;
        layer.top_k = top_k;
        layer.gate = gaussian_matrix(rng, n, d_model, sigma0);

        const double raw = std::ceil(static_cast<double>(n) * (1.0 - r));
        const std::size_t base_count =
            std::clamp<std::size_t>(static_cast<std::size_t>(raw), 1, n);

        std::vector<Expert> bases;
        bases.reserve(base_count);
        for (std::size_t b = 0; b < base_count; ++b) {
            bases.push_back({gaussian_matrix(rng, d_model, d_ff, sigma0),
                             gaussian_matrix(rng, d_ff, d_model, sigma0)});
        }

        const double noise_sigma = (1.0 - r) * sigma0;
        layer.experts.reserve(n);
        for (std::size_t e = 0; e < n; ++e) {
            const Expert & base = bases[e % base_count];
            Expert copy = base;
            for (double & v : copy.w_in.data) {
                v += noise_sigma * rng.gaussian();
            }
            for (double & v : copy.w_out.data) {
                v += noise_sigma * rng.gaussian();
            }
            layer.experts.push_back(std::move(copy));
        }
        model.layers.push_back(std::move(layer));
    }
    return model;
}

Matrix forward(const SynthMoeModel & model, const Matrix & tokens) {
    Matrix x = tokens;
    for (const MoeLayer & layer : model.layers) {
        x = layer_forward(layer, x);
    }
    return x;
}

ForwardTrace forward_trace(const SynthMoeModel & model, const Matrix & tokens) {
    ForwardTrace trace;
    Matrix x = tokens;
    for (const MoeLayer & layer : model.layers) {
        trace.layer_inputs.push_back(x);
        LayerRun run = run_layer(layer, x);
        trace.routing.push_back(std::move(run.probs));
        x = std::move(run.output);
        trace.layer_outputs.push_back(x);
    }
    return trace;
}

CalibrationCapture capture_calibration(const SynthMoeModel & model, const Matrix & tokens) {
    CalibrationCapture capture;
    capture.tokens = tokens.rows;
    capture.d_model = model.d_model;

    Matrix x = tokens;
    for (const MoeLayer & layer : model.layers) {
        capture.layer_inputs.push_back(x);
        LayerRun run = run_layer(layer, x);

        std::vector<std::uint64_t> visits(layer.experts.size(), 0);
        for (std::size_t t = 0; t < run.probs.rows; ++t) {
            for (std::size_t e = 0; e < run.probs.cols; ++e) {
                if (run.probs.at(t, e) > 0.0) {
                    ++visits[e];
                }
            }
        }
        capture.visit_counts.push_back(std::move(visits));
        capture.expert_outputs.push_back(std::move(run.expert_outs));
        x = std::move(run.output);
    }
    return capture;
}

Matrix gaussian_tokens(std::size_t count, std::size_t d_model, std::uint64_t seed) {
    Rng rng(seed);
    return gaussian_matrix(rng, count, d_model, 1.0);
}

}  // namespace grape
