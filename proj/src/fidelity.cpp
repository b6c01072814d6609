#include "grape/fidelity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "grape/errors.hpp"

namespace grape {

namespace {

// Smoothing keeps the divergence finite when a cluster selected by the
// original routing is unselected by the pruned routing (or vice versa).
constexpr double kKlEpsilon = 1e-12;

double smoothed_kl(const std::vector<double> & p, const std::vector<double> & q) {
    const double norm = 1.0 + static_cast<double>(p.size()) * kKlEpsilon;
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = (p[i] + kKlEpsilon) / norm;
        const double qi = (q[i] + kKlEpsilon) / norm;
        kl += pi * std::log(pi / qi);
    }
    return kl;
}

}  // namespace

FidelityReport evaluate(const SynthMoeModel & original,
                        const SynthMoeModel & pruned,
                        const ClusterPlan & plan,
                        const Matrix & tokens,
                        bool teacher_forced) {
    if (original.d_model != pruned.d_model || tokens.cols != original.d_model) {
        throw DataError("shape_mismatch", "models and tokens disagree on d_model");
    }
    if (original.layers.size() != pruned.layers.size() ||
        plan.layers.size() != original.layers.size()) {
        throw DataError("plan_mismatch", "original, pruned and plan must have the same layer count");
    }

    const ForwardTrace orig = forward_trace(original, tokens);
    const ForwardTrace prun = forward_trace(pruned, tokens);

    FidelityReport report;
    report.tokens = tokens.rows;
    report.per_layer_mse.reserve(original.layers.size());
    for (std::size_t l = 0; l < original.layers.size(); ++l) {
        if (teacher_forced) {
            const Matrix forced = layer_forward(pruned.layers[l], orig.layer_inputs[l]);
            report.per_layer_mse.push_back(mean_squared_error(orig.layer_outputs[l], forced));
        } else {
            report.per_layer_mse.push_back(
                mean_squared_error(orig.layer_outputs[l], prun.layer_outputs[l]));
        }
    }
    report.end_to_end_mse =
        mean_squared_error(orig.layer_outputs.back(), prun.layer_outputs.back());

    // Aggregate the original per-expert routing into the plan's clusters and
    // compare with the pruned routing, cluster by cluster. Cluster order
    // matches apply_plan: ascending smallest member.
    double kl_sum = 0.0;
    std::size_t kl_terms = 0;
    for (std::size_t l = 0; l < original.layers.size(); ++l) {
        auto clusters = plan.layers[l];
        for (auto & c : clusters) {
            std::sort(c.begin(), c.end());
        }
        std::sort(clusters.begin(), clusters.end(),
                  [](const auto & a, const auto & b) { return a.front() < b.front(); });
        if (clusters.size() != pruned.layers[l].experts.size()) {
            throw DataError("plan_mismatch",
                            "pruned layer " + std::to_string(l) + " does not match plan clusters");
        }

        const Matrix & orig_probs = orig.routing[l];
        const Matrix & prun_probs = prun.routing[l];
        std::vector<double> p(clusters.size(), 0.0);
        std::vector<double> q(clusters.size(), 0.0);
        for (std::size_t t = 0; t < tokens.rows; ++t) {
            for (std::size_t c = 0; c < clusters.size(); ++c) {
                double mass = 0.0;
                for (std::size_t member : clusters[c]) {
                    if (member >= orig_probs.cols) {
                        throw DataError("plan_mismatch", "cluster member outside original layer");
                    }
                    mass += orig_probs.at(t, member);
                }
                p[c] = mass;
                q[c] = prun_probs.at(t, c);
            }
            kl_sum += smoothed_kl(p, q);
            ++kl_terms;
        }
    }
    report.routing_kl = kl_terms == 0 ? 0.0 : kl_sum / static_cast<double>(kl_terms);
    return report;
}

ComparisonTable compare(const std::vector<std::pair<std::string, FidelityReport>> & reports) {
    if (reports.empty()) {
        throw ConfigError("config_invalid", "comparison needs at least one report");
    }
    ComparisonTable table;
    table.columns = {"end_to_end_mse", "mean_layer_mse", "routing_kl", "tokens"};
    for (const auto & [name, report] : reports) {
        double mean_layer = 0.0;
        for (double v : report.per_layer_mse) {
            mean_layer += v;
        }
        if (!report.per_layer_mse.empty()) {
            mean_layer /= static_cast<double>(report.per_layer_mse.size());
        }
        table.rows.push_back({name,
                              {report.end_to_end_mse, mean_layer, report.routing_kl,
                               static_cast<double>(report.tokens)}});
    }
    std::sort(table.rows.begin(), table.rows.end(),
              [](const auto & a, const auto & b) { return a.first < b.first; });
    return table;
}

}  // namespace grape
