#include "grape/apply_merge.hpp"

#include <algorithm>
#include <string>

#include "grape/errors.hpp"
#include "grape/similarity.hpp"

namespace grape {

namespace {

// Clusters must partition {0..n-1}; returns them sorted by smallest member
// with members ascending.
std::vector<std::vector<std::size_t>> normalized_partition(
    const std::vector<std::vector<std::size_t>> & clusters, std::size_t n, std::size_t layer) {
    std::vector<std::vector<std::size_t>> out = clusters;
    std::vector<bool> seen(n, false);
    std::size_t covered = 0;
    for (auto & cluster : out) {
        if (cluster.empty()) {
            throw DataError("plan_mismatch", "empty cluster at layer " + std::to_string(layer));
        }
        std::sort(cluster.begin(), cluster.end());
        for (std::size_t m : cluster) {
            if (m >= n || seen[m]) {
                throw DataError("plan_mismatch",
                                "cluster members at layer " + std::to_string(layer) +
                                    " do not partition the expert indices");
            }
            seen[m] = true;
            ++covered;
        }
    }
    if (covered != n) {
        throw DataError("plan_mismatch", "clusters at layer " + std::to_string(layer) +
                                             " cover " + std::to_string(covered) + " of " +
                                             std::to_string(n) + " experts");
    }
    std::sort(out.begin(), out.end(),
              [](const auto & a, const auto & b) { return a.front() < b.front(); });
    return out;
}

Matrix average_rows(const std::vector<const Matrix *> & members) {
    Matrix out(members.front()->rows, members.front()->cols);
    for (const Matrix * m : members) {
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] += m->data[i];
        }
    }
    const double count = static_cast<double>(members.size());
    for (double & v : out.data) {
        v /= count;
    }
    return out;
}

std::size_t pick_representative(const std::vector<std::size_t> & cluster,
                                const SimilarityBlock & weight_sim) {
    if (cluster.size() == 1) {
        return cluster.front();
    }
    std::size_t best = cluster.front();
    double best_sum = -1.0;
    for (std::size_t m : cluster) {
        double sum = 0.0;
        for (std::size_t o : cluster) {
            if (o != m) {
                sum += weight_sim.values.at(m, o);
            }
        }
        if (sum > best_sum) {  // ties keep the lowest index (first seen)
            best_sum = sum;
            best = m;
        }
    }
    return best;
}

}  // namespace

SynthMoeModel apply_plan(const SynthMoeModel & model, const ClusterPlan & plan, MergeMode mode) {
    if (plan.layers.size() != model.layers.size()) {
        throw DataError("plan_mismatch", "plan has " + std::to_string(plan.layers.size()) +
                                             " layers, model has " +
                                             std::to_string(model.layers.size()));
    }

    SynthMoeModel pruned;
    pruned.d_model = model.d_model;
    pruned.d_ff = model.d_ff;
    pruned.planted_redundancy = model.planted_redundancy;
    pruned.seed = model.seed;
    pruned.layers.reserve(model.layers.size());

    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const MoeLayer & layer = model.layers[l];
        const std::size_t n = layer.experts.size();
        const auto clusters = normalized_partition(plan.layers[l], n, l);
        if (clusters.size() < layer.top_k) {
            throw ConfigError("config_invalid",
                              "layer " + std::to_string(l) + " would retain " +
                                  std::to_string(clusters.size()) + " experts, fewer than top_k=" +
                                  std::to_string(layer.top_k));
        }

        MoeLayer out;
        out.top_k = layer.top_k;
        out.gate = Matrix(clusters.size(), model.d_model);
        out.experts.reserve(clusters.size());

        SimilarityBlock weight_sim;
        if (mode == MergeMode::representative) {
            bool needed = false;
            for (const auto & c : clusters) {
                needed = needed || c.size() > 1;
            }
            if (needed) {
                weight_sim = weight_cka_similarity_block(l, layer.experts);
            } else {
                weight_sim.n = n;
                weight_sim.values = Matrix(n, n);
            }
        }

        for (std::size_t c = 0; c < clusters.size(); ++c) {
            const auto & cluster = clusters[c];
            if (mode == MergeMode::average) {
                std::vector<const Matrix *> w_in;
                std::vector<const Matrix *> w_out;
                for (std::size_t m : cluster) {
                    w_in.push_back(&layer.experts[m].w_in);
                    w_out.push_back(&layer.experts[m].w_out);
                }
                out.experts.push_back({average_rows(w_in), average_rows(w_out)});
                for (std::size_t d = 0; d < model.d_model; ++d) {
                    double acc = 0.0;
                    for (std::size_t m : cluster) {
                        acc += layer.gate.at(m, d);
                    }
                    out.gate.at(c, d) = acc / static_cast<double>(cluster.size());
                }
            } else {
                const std::size_t rep = pick_representative(cluster, weight_sim);
                out.experts.push_back(layer.experts[rep]);
                for (std::size_t d = 0; d < model.d_model; ++d) {
                    out.gate.at(c, d) = layer.gate.at(rep, d);
                }
            }
        }
        pruned.layers.push_back(std::move(out));
    }
    return pruned;
}

}  // namespace grape
