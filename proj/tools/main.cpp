// grape: generate, measure, plan, apply and evaluate expert pruning of
// synthetic mixture-of-experts models. Every subcommand is deterministic for
// fixed seeds; all randomness requires an explicit seed flag.

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grape/apply_merge.hpp"
#include "grape/errors.hpp"
#include "grape/fidelity.hpp"
#include "grape/io.hpp"
#include "grape/planner.hpp"
#include "grape/redundancy.hpp"
#include "grape/similarity.hpp"
#include "grape/synth_moe.hpp"

namespace {

int g_log_level = 1;  // 0 quiet, 1 info, 2 debug

void log_info(const std::string & message) {
    if (g_log_level >= 1) {
        std::cerr << message << '\n';
    }
}

template <typename T>
std::vector<T> parse_list(const std::string & text, std::size_t expected, const char * what) {
    std::vector<T> out;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (item.empty()) {
            continue;
        }
        try {
            if constexpr (std::is_floating_point_v<T>) {
                out.push_back(std::stod(item));
            } else {
                out.push_back(static_cast<T>(std::stoull(item)));
            }
        } catch (const std::exception &) {
            throw grape::ConfigError("config_invalid",
                                     std::string(what) + ": cannot parse '" + item + "'");
        }
    }
    if (out.empty()) {
        throw grape::ConfigError("config_invalid", std::string(what) + ": empty list");
    }
    if (out.size() == 1 && expected > 1) {
        out.assign(expected, out.front());  // single value broadcasts
    }
    if (out.size() != expected) {
        throw grape::ConfigError("config_invalid", std::string(what) + ": expected " +
                                                       std::to_string(expected) + " entries, got " +
                                                       std::to_string(out.size()));
    }
    return out;
}

std::vector<std::size_t> resolve_min_keep(const std::string & min_keep_flag,
                                          const grape::SynthMoeModel * model,
                                          std::size_t layer_count) {
    if (!min_keep_flag.empty()) {
        return parse_list<std::size_t>(min_keep_flag, layer_count, "--min-keep");
    }
    std::vector<std::size_t> out(layer_count, 1);
    if (model != nullptr) {
        for (std::size_t l = 0; l < layer_count; ++l) {
            out[l] = model->layers[l].top_k;
        }
    }
    return out;
}

std::size_t total_experts(const std::vector<grape::SimilarityBlock> & blocks) {
    std::size_t total = 0;
    for (const auto & b : blocks) {
        total += b.n;
    }
    return total;
}

// Per-layer methods remove the same count e everywhere; a --keep budget is
// accepted only when it is expressible that way.
std::size_t per_layer_e(std::size_t keep, std::size_t total, std::size_t layer_count) {
    if (keep > total) {
        throw grape::ConfigError("budget_infeasible",
                                 "keep=" + std::to_string(keep) + " exceeds the " +
                                     std::to_string(total) + " experts present");
    }
    const std::size_t pruned = total - keep;
    if (pruned % layer_count != 0) {
        throw grape::ConfigError(
            "budget_mismatch",
            "per-layer pruning removes layers*e experts; keep=" + std::to_string(keep) +
                " implies pruning " + std::to_string(pruned) + ", not divisible by " +
                std::to_string(layer_count) + " layers");
    }
    return pruned / layer_count;
}

struct PlanArgs {
    std::string similarity_path;
    std::string capture_path;
    std::string model_path;
    std::string method = "grape";
    std::string min_keep;
    std::int64_t keep = -1;
    std::int64_t per_layer_equivalent = -1;
    double gamma = 0.5;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
};

void run_plan(const PlanArgs & args) {
    const grape::PlanMethod method = grape::method_from_name(args.method);

    std::vector<grape::SimilarityBlock> blocks;
    bool have_blocks = false;
    if (!args.similarity_path.empty()) {
        blocks = grape::blocks_from_json(grape::read_file(args.similarity_path));
        have_blocks = true;
    }
    grape::SynthMoeModel model;
    bool have_model = false;
    if (!args.model_path.empty()) {
        model = grape::model_from_json(grape::read_file(args.model_path));
        have_model = true;
    }
    grape::CalibrationCapture capture;
    bool have_capture = false;
    if (!args.capture_path.empty()) {
        capture = grape::capture_from_json(grape::read_file(args.capture_path));
        have_capture = true;
    }

    if (have_blocks && have_model) {
        if (blocks.size() != model.layers.size()) {
            throw grape::DataError("plan_mismatch", "similarity and model disagree on layer count");
        }
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            if (blocks[l].n != model.layers[l].experts.size()) {
                throw grape::DataError("plan_mismatch",
                                       "similarity and model disagree on experts in layer " +
                                           std::to_string(l));
            }
        }
    }

    std::size_t layer_count = 0;
    std::vector<std::size_t> n_per_layer;
    if (have_blocks) {
        layer_count = blocks.size();
        for (const auto & b : blocks) {
            n_per_layer.push_back(b.n);
        }
    } else if (have_capture) {
        layer_count = capture.visit_counts.size();
        for (const auto & v : capture.visit_counts) {
            n_per_layer.push_back(v.size());
        }
    } else if (have_model) {
        layer_count = model.layers.size();
        for (const auto & l : model.layers) {
            n_per_layer.push_back(l.experts.size());
        }
    } else {
        throw grape::ConfigError("config_invalid",
                                 "plan needs --similarity, --capture or --model input");
    }

    const std::vector<std::size_t> min_keep =
        resolve_min_keep(args.min_keep, have_model ? &model : nullptr, layer_count);

    std::size_t total = 0;
    for (std::size_t n : n_per_layer) {
        total += n;
    }

    const bool has_keep = args.keep >= 0;
    const bool has_e = args.per_layer_equivalent >= 0;

    auto resolve_keep = [&]() -> std::size_t {
        if (has_keep == has_e) {
            throw grape::ConfigError("config_invalid",
                                     "give exactly one of --keep and --per-layer-equivalent");
        }
        if (has_keep) {
            return static_cast<std::size_t>(args.keep);
        }
        const auto e = static_cast<std::size_t>(args.per_layer_equivalent);
        std::size_t keep = 0;
        for (std::size_t n : n_per_layer) {
            if (n < e) {
                throw grape::ConfigError("budget_infeasible",
                                         "--per-layer-equivalent exceeds a layer's expert count");
            }
            keep += n - e;
        }
        return keep;
    };
    auto resolve_e = [&]() -> std::size_t {
        if (has_keep == has_e) {
            throw grape::ConfigError("config_invalid",
                                     "give exactly one of --keep and --per-layer-equivalent");
        }
        if (has_e) {
            return static_cast<std::size_t>(args.per_layer_equivalent);
        }
        return per_layer_e(static_cast<std::size_t>(args.keep), total, layer_count);
    };

    grape::ClusterPlan plan;
    switch (method) {
        case grape::PlanMethod::grape:
            if (!have_blocks) {
                throw grape::ConfigError("config_invalid", "method grape needs --similarity");
            }
            plan = grape::grape_prune(blocks, resolve_keep(), args.gamma, min_keep);
            break;
        case grape::PlanMethod::uniform:
            if (!have_blocks) {
                throw grape::ConfigError("config_invalid", "method uniform needs --similarity");
            }
            plan = grape::uniform_prune(blocks, resolve_e(), min_keep);
            break;
        case grape::PlanMethod::count_guided:
            if (!have_capture) {
                throw grape::ConfigError("config_invalid", "method count_guided needs --capture");
            }
            plan = grape::count_guided_prune(capture, resolve_e(), min_keep);
            break;
        case grape::PlanMethod::router_guided:
            if (!have_model) {
                throw grape::ConfigError("config_invalid", "method router_guided needs --model");
            }
            plan = grape::router_guided_prune(model, resolve_e(), min_keep);
            break;
        case grape::PlanMethod::random:
            if (!have_blocks) {
                throw grape::ConfigError("config_invalid", "method random needs --similarity");
            }
            if (!args.seed_set) {
                throw grape::ConfigError("missing_seed", "method random needs an explicit --seed");
            }
            plan = grape::random_prune(blocks, resolve_keep(), min_keep, args.seed);
            break;
    }

    grape::atomic_write_file(args.out, grape::plan_to_json(plan));
    log_info("wrote plan (" + grape::method_name(plan.method) +
             ", keep=" + std::to_string(plan.budget_total) + ") to " + args.out);
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"synthetic MoE expert-pruning pipeline"};
    app.require_subcommand(1);
    app.add_option("--log-level", g_log_level, "0 quiet, 1 info, 2 debug")
        ->check(CLI::Range(0, 2));

    // gen
    auto * gen = app.add_subcommand("gen", "generate a synthetic MoE model");
    struct {
        std::size_t layers = 0;
        std::string experts = "8";
        std::size_t d_model = 16;
        std::size_t d_ff = 32;
        std::size_t top_k = 2;
        std::string redundancy;
        std::uint64_t seed = 0;
        std::string out;
    } gen_args;
    gen->add_option("--layers", gen_args.layers, "MoE layer count")->required();
    gen->add_option("--experts", gen_args.experts, "experts per layer (single value or comma list)");
    gen->add_option("--d-model", gen_args.d_model, "model width");
    gen->add_option("--d-ff", gen_args.d_ff, "expert hidden width");
    gen->add_option("--top-k", gen_args.top_k, "experts activated per token");
    gen->add_option("--redundancy", gen_args.redundancy,
                    "planted redundancy per layer in [0,1] (single value or comma list)")
        ->required();
    gen->add_option("--seed", gen_args.seed, "generator seed")->required();
    gen->add_option("--out", gen_args.out, "output model JSON")->required();
    gen->callback([&] {
        const auto n = parse_list<std::size_t>(gen_args.experts, gen_args.layers, "--experts");
        const auto r = parse_list<double>(gen_args.redundancy, gen_args.layers, "--redundancy");
        const auto model = grape::generate_model(gen_args.layers, n, gen_args.d_model,
                                                 gen_args.d_ff, gen_args.top_k, r, gen_args.seed);
        grape::atomic_write_file(gen_args.out, grape::model_to_json(model));
        log_info("wrote model (" + std::to_string(gen_args.layers) + " layers) to " + gen_args.out);
    });

    // capture
    auto * capture_cmd = app.add_subcommand("capture", "run calibration tokens, record activations");
    struct {
        std::string model;
        std::size_t tokens = 128;
        std::uint64_t seed = 0;
        std::string out;
    } cap_args;
    capture_cmd->add_option("--model", cap_args.model, "model JSON")->required();
    capture_cmd->add_option("--tokens", cap_args.tokens, "calibration token count");
    capture_cmd->add_option("--seed", cap_args.seed, "token seed")->required();
    capture_cmd->add_option("--out", cap_args.out, "output capture JSON")->required();
    capture_cmd->callback([&] {
        const auto model = grape::model_from_json(grape::read_file(cap_args.model));
        const auto tokens = grape::gaussian_tokens(cap_args.tokens, model.d_model, cap_args.seed);
        const auto capture = grape::capture_calibration(model, tokens);
        grape::atomic_write_file(cap_args.out, grape::capture_to_json(capture));
        log_info("wrote capture (" + std::to_string(cap_args.tokens) + " tokens) to " + cap_args.out);
    });

    // similarity
    auto * sim = app.add_subcommand("similarity", "pairwise expert-similarity blocks from a capture");
    struct {
        std::string capture;
        std::string metric = "cka";
        std::string out;
    } sim_args;
    sim->add_option("--capture", sim_args.capture, "capture JSON")->required();
    sim->add_option("--metric", sim_args.metric, "cka or mse")
        ->check(CLI::IsMember({"cka", "mse"}));
    sim->add_option("--out", sim_args.out, "output similarity JSON")->required();
    sim->callback([&] {
        const auto capture = grape::capture_from_json(grape::read_file(sim_args.capture));
        const auto metric = grape::metric_from_name(sim_args.metric);
        std::vector<grape::SimilarityBlock> blocks;
        for (std::size_t l = 0; l < capture.expert_outputs.size(); ++l) {
            blocks.push_back(metric == grape::SimilarityMetric::cka
                                 ? grape::cka_similarity_block(l, capture.expert_outputs[l])
                                 : grape::mse_similarity_block(l, capture.expert_outputs[l]));
        }
        grape::atomic_write_file(sim_args.out, grape::blocks_to_json(blocks));
        log_info("wrote " + std::to_string(blocks.size()) + " similarity blocks to " + sim_args.out);
    });

    // profile
    auto * prof = app.add_subcommand("profile", "cross-layer redundancy profile CSV");
    struct {
        std::string similarity;
        std::string out;
    } prof_args;
    prof->add_option("--similarity", prof_args.similarity, "similarity JSON")->required();
    prof->add_option("--out", prof_args.out, "output CSV")->required();
    prof->callback([&] {
        const auto blocks = grape::blocks_from_json(grape::read_file(prof_args.similarity));
        const auto profile = grape::build_profile(blocks);
        grape::atomic_write_file(prof_args.out, grape::profile_to_csv(profile));
        log_info("wrote profile to " + prof_args.out);
    });

    // plan
    auto * plan_cmd = app.add_subcommand("plan", "compute a pruning plan");
    PlanArgs plan_args;
    plan_cmd->add_option("--similarity", plan_args.similarity_path, "similarity JSON");
    plan_cmd->add_option("--capture", plan_args.capture_path, "capture JSON (count_guided)");
    plan_cmd->add_option("--model", plan_args.model_path, "model JSON (router_guided, min_keep)");
    plan_cmd->add_option("--method", plan_args.method, "grape|uniform|count_guided|router_guided|random")
        ->check(CLI::IsMember({"grape", "uniform", "count_guided", "router_guided", "random"}));
    plan_cmd->add_option("--keep", plan_args.keep, "total experts to retain");
    plan_cmd->add_option("--per-layer-equivalent", plan_args.per_layer_equivalent,
                         "prune e experts per layer (sets keep = sum(N_l - e))");
    plan_cmd->add_option("--gamma", plan_args.gamma, "entropy tolerance in [0,1]");
    plan_cmd->add_option("--min-keep", plan_args.min_keep,
                         "per-layer retention floor (single value or comma list)");
    plan_cmd->add_option("--seed", plan_args.seed, "seed for method random")
        ->each([&](const std::string &) { plan_args.seed_set = true; });
    plan_cmd->add_option("--out", plan_args.out, "output plan JSON")->required();
    plan_cmd->callback([&] { run_plan(plan_args); });

    // apply
    auto * apply_cmd = app.add_subcommand("apply", "materialize a plan by merging experts");
    struct {
        std::string model;
        std::string plan;
        std::string mode = "average";
        std::string out;
    } apply_args;
    apply_cmd->add_option("--model", apply_args.model, "model JSON")->required();
    apply_cmd->add_option("--plan", apply_args.plan, "plan JSON")->required();
    apply_cmd->add_option("--mode", apply_args.mode, "average or representative")
        ->check(CLI::IsMember({"average", "representative"}));
    apply_cmd->add_option("--out", apply_args.out, "output model JSON")->required();
    apply_cmd->callback([&] {
        const auto model = grape::model_from_json(grape::read_file(apply_args.model));
        const auto plan = grape::plan_from_json(grape::read_file(apply_args.plan));
        const auto mode = apply_args.mode == "average" ? grape::MergeMode::average
                                                       : grape::MergeMode::representative;
        const auto pruned = grape::apply_plan(model, plan, mode);
        grape::atomic_write_file(apply_args.out, grape::model_to_json(pruned));
        log_info("wrote pruned model to " + apply_args.out);
    });

    // eval
    auto * eval_cmd = app.add_subcommand("eval", "fidelity of a pruned model vs its original");
    struct {
        std::string original;
        std::string pruned;
        std::string plan;
        std::uint64_t tokens_seed = 0;
        std::size_t tokens = 256;
        bool teacher_forced = false;
        std::string out;
    } eval_args;
    eval_cmd->add_option("--original", eval_args.original, "original model JSON")->required();
    eval_cmd->add_option("--pruned", eval_args.pruned, "pruned model JSON")->required();
    eval_cmd->add_option("--plan", eval_args.plan, "plan JSON")->required();
    eval_cmd->add_option("--tokens-seed", eval_args.tokens_seed, "held-out token seed")->required();
    eval_cmd->add_option("--tokens", eval_args.tokens, "held-out token count");
    eval_cmd->add_flag("--teacher-forced", eval_args.teacher_forced,
                       "feed pruned layers the original layer inputs (debugging)");
    eval_cmd->add_option("--out", eval_args.out, "output CSV")->required();
    eval_cmd->callback([&] {
        const auto original = grape::model_from_json(grape::read_file(eval_args.original));
        const auto pruned = grape::model_from_json(grape::read_file(eval_args.pruned));
        const auto plan = grape::plan_from_json(grape::read_file(eval_args.plan));
        const auto tokens =
            grape::gaussian_tokens(eval_args.tokens, original.d_model, eval_args.tokens_seed);
        const auto report =
            grape::evaluate(original, pruned, plan, tokens, eval_args.teacher_forced);
        grape::atomic_write_file(eval_args.out, grape::report_to_csv(report));
        log_info("wrote fidelity report to " + eval_args.out);
    });

    // oracle
    auto * oracle_cmd = app.add_subcommand("oracle", "exhaustive best allocation (small instances)");
    struct {
        std::string similarity;
        std::int64_t keep = -1;
        std::string min_keep;
        std::string out;
    } oracle_args;
    oracle_cmd->add_option("--similarity", oracle_args.similarity, "similarity JSON")->required();
    oracle_cmd->add_option("--keep", oracle_args.keep, "total experts to retain")->required();
    oracle_cmd->add_option("--min-keep", oracle_args.min_keep,
                           "per-layer retention floor (single value or comma list)");
    oracle_cmd->add_option("--out", oracle_args.out, "output JSON (stdout when omitted)");
    oracle_cmd->callback([&] {
        const auto blocks = grape::blocks_from_json(grape::read_file(oracle_args.similarity));
        const auto min_keep = resolve_min_keep(oracle_args.min_keep, nullptr, blocks.size());
        if (oracle_args.keep < 0) {
            throw grape::ConfigError("config_invalid", "--keep must be non-negative");
        }
        const auto result = grape::oracle_allocate(
            blocks, static_cast<std::size_t>(oracle_args.keep), min_keep);
        const std::string text = grape::oracle_to_json(result);
        if (oracle_args.out.empty()) {
            std::cout << text << '\n';
        } else {
            grape::atomic_write_file(oracle_args.out, text);
            log_info("wrote oracle result to " + oracle_args.out);
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        nlohmann::ordered_json err;
        err["code"] = "bad_arguments";
        err["message"] = e.what();
        std::cerr << err.dump() << '\n';
        return 1;
    } catch (const grape::ConfigError & e) {
        nlohmann::ordered_json err;
        err["code"] = e.code();
        err["message"] = e.what();
        std::cerr << err.dump() << '\n';
        return 1;
    } catch (const grape::StallError & e) {
        nlohmann::ordered_json err;
        err["code"] = e.code();
        err["message"] = e.what();
        std::cerr << err.dump() << '\n';
        return 3;
    } catch (const grape::Error & e) {
        nlohmann::ordered_json err;
        err["code"] = e.code();
        err["message"] = e.what();
        std::cerr << err.dump() << '\n';
        return 2;
    } catch (const std::exception & e) {
        nlohmann::ordered_json err;
        err["code"] = "internal_error";
        err["message"] = e.what();
        std::cerr << err.dump() << '\n';
        return 2;
    }
    return 0;
}
