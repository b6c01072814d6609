#include "grape/io.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <system_error>

#include "json.hpp"

#include "grape/errors.hpp"

namespace grape {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json matrix_to_json(const Matrix & m) {
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < m.rows; ++i) {
        ordered_json row = ordered_json::array();
        for (std::size_t j = 0; j < m.cols; ++j) {
            row.push_back(m.at(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const ordered_json & j, const std::string & what) {
    if (!j.is_array() || j.empty()) {
        throw DataError("bad_file", what + ": expected a non-empty array of rows");
    }
    const std::size_t rows = j.size();
    const std::size_t cols = j.front().size();
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const auto & row : j) {
        if (!row.is_array() || row.size() != cols) {
            throw DataError("bad_file", what + ": ragged rows");
        }
        for (const auto & v : row) {
            if (!v.is_number()) {
                throw DataError("bad_file", what + ": non-numeric entry");
            }
            data.push_back(v.get<double>());
        }
    }
    return Matrix(rows, cols, std::move(data));
}

ordered_json parse(const std::string & text, const std::string & what) {
    ordered_json j = ordered_json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        throw DataError("bad_file", what + ": invalid JSON");
    }
    return j;
}

const ordered_json & field(const ordered_json & j, const char * key, const std::string & what) {
    auto it = j.find(key);
    if (it == j.end()) {
        throw DataError("bad_file", what + ": missing field '" + key + "'");
    }
    return *it;
}

std::string kind_name(TraceKind kind) {
    switch (kind) {
        case TraceKind::merge: return "merge";
        case TraceKind::freeze: return "freeze";
        case TraceKind::restart: return "restart";
    }
    return "merge";
}

TraceKind kind_from_name(const std::string & name) {
    if (name == "merge") return TraceKind::merge;
    if (name == "freeze") return TraceKind::freeze;
    if (name == "restart") return TraceKind::restart;
    throw DataError("bad_file", "unknown trace kind '" + name + "'");
}

}  // namespace

std::string model_to_json(const SynthMoeModel & model) {
    ordered_json j;
    j["d_model"] = model.d_model;
    j["d_ff"] = model.d_ff;
    j["seed"] = model.seed;
    j["planted_redundancy"] = model.planted_redundancy;
    ordered_json layers = ordered_json::array();
    for (const MoeLayer & layer : model.layers) {
        ordered_json jl;
        jl["top_k"] = layer.top_k;
        jl["gate"] = matrix_to_json(layer.gate);
        ordered_json experts = ordered_json::array();
        for (const Expert & e : layer.experts) {
            ordered_json je;
            je["w_in"] = matrix_to_json(e.w_in);
            je["w_out"] = matrix_to_json(e.w_out);
            experts.push_back(std::move(je));
        }
        jl["experts"] = std::move(experts);
        layers.push_back(std::move(jl));
    }
    j["layers"] = std::move(layers);
    return j.dump();
}

SynthMoeModel model_from_json(const std::string & text) {
    const ordered_json j = parse(text, "model");
    SynthMoeModel model;
    model.d_model = field(j, "d_model", "model").get<std::size_t>();
    model.d_ff = field(j, "d_ff", "model").get<std::size_t>();
    model.seed = field(j, "seed", "model").get<std::uint64_t>();
    model.planted_redundancy = field(j, "planted_redundancy", "model").get<std::vector<double>>();
    for (const auto & jl : field(j, "layers", "model")) {
        MoeLayer layer;
        layer.top_k = field(jl, "top_k", "layer").get<std::size_t>();
        layer.gate = matrix_from_json(field(jl, "gate", "layer"), "gate");
        for (const auto & je : field(jl, "experts", "layer")) {
            Expert e;
            e.w_in = matrix_from_json(field(je, "w_in", "expert"), "w_in");
            e.w_out = matrix_from_json(field(je, "w_out", "expert"), "w_out");
            if (e.w_in.rows != model.d_model || e.w_in.cols != model.d_ff ||
                e.w_out.rows != model.d_ff || e.w_out.cols != model.d_model) {
                throw DataError("bad_file", "expert tensor shapes disagree with model dims");
            }
            layer.experts.push_back(std::move(e));
        }
        if (layer.gate.rows != layer.experts.size() || layer.gate.cols != model.d_model) {
            throw DataError("bad_file", "gate shape disagrees with layer");
        }
        if (layer.top_k < 1 || layer.top_k > layer.experts.size()) {
            throw DataError("bad_file", "layer top_k out of range");
        }
        model.layers.push_back(std::move(layer));
    }
    if (model.layers.empty()) {
        throw DataError("bad_file", "model holds no layers");
    }
    if (model.planted_redundancy.size() != model.layers.size()) {
        throw DataError("bad_file", "planted_redundancy length disagrees with layer count");
    }
    return model;
}

std::string capture_to_json(const CalibrationCapture & capture) {
    ordered_json j;
    j["tokens"] = capture.tokens;
    j["d_model"] = capture.d_model;
    ordered_json inputs = ordered_json::array();
    for (const Matrix & m : capture.layer_inputs) {
        inputs.push_back(matrix_to_json(m));
    }
    j["layer_inputs"] = std::move(inputs);
    ordered_json outputs = ordered_json::array();
    for (const auto & layer : capture.expert_outputs) {
        ordered_json per_layer = ordered_json::array();
        for (const Matrix & m : layer) {
            per_layer.push_back(matrix_to_json(m));
        }
        outputs.push_back(std::move(per_layer));
    }
    j["expert_outputs"] = std::move(outputs);
    j["visit_counts"] = capture.visit_counts;
    return j.dump();
}

CalibrationCapture capture_from_json(const std::string & text) {
    const ordered_json j = parse(text, "capture");
    CalibrationCapture capture;
    capture.tokens = field(j, "tokens", "capture").get<std::size_t>();
    capture.d_model = field(j, "d_model", "capture").get<std::size_t>();
    for (const auto & m : field(j, "layer_inputs", "capture")) {
        capture.layer_inputs.push_back(matrix_from_json(m, "layer_inputs"));
    }
    for (const auto & layer : field(j, "expert_outputs", "capture")) {
        std::vector<Matrix> per_layer;
        for (const auto & m : layer) {
            per_layer.push_back(matrix_from_json(m, "expert_outputs"));
        }
        capture.expert_outputs.push_back(std::move(per_layer));
    }
    capture.visit_counts =
        field(j, "visit_counts", "capture").get<std::vector<std::vector<std::uint64_t>>>();
    if (capture.expert_outputs.size() != capture.layer_inputs.size() ||
        capture.visit_counts.size() != capture.layer_inputs.size()) {
        throw DataError("bad_file", "capture arrays disagree on layer count");
    }
    return capture;
}

std::string blocks_to_json(const std::vector<SimilarityBlock> & blocks) {
    ordered_json out = ordered_json::array();
    for (const SimilarityBlock & block : blocks) {
        ordered_json jb;
        jb["layer"] = block.layer;
        jb["metric"] = metric_name(block.metric);
        jb["n"] = block.n;
        jb["values"] = matrix_to_json(block.values);
        out.push_back(std::move(jb));
    }
    ordered_json j;
    j["blocks"] = std::move(out);
    return j.dump();
}

std::vector<SimilarityBlock> blocks_from_json(const std::string & text) {
    const ordered_json j = parse(text, "similarity");
    std::vector<SimilarityBlock> blocks;
    for (const auto & jb : field(j, "blocks", "similarity")) {
        SimilarityBlock block;
        block.layer = field(jb, "layer", "block").get<std::size_t>();
        block.metric = metric_from_name(field(jb, "metric", "block").get<std::string>());
        block.n = field(jb, "n", "block").get<std::size_t>();
        block.values = matrix_from_json(field(jb, "values", "block"), "block values");
        validate_block(block);
        blocks.push_back(std::move(block));
    }
    if (blocks.empty()) {
        throw DataError("bad_file", "similarity file holds no blocks");
    }
    return blocks;
}

std::string plan_to_json(const ClusterPlan & plan) {
    ordered_json j;
    j["method"] = method_name(plan.method);
    j["budget_total"] = plan.budget_total;
    j["gamma"] = plan.gamma;
    ordered_json layers = ordered_json::array();
    for (std::size_t l = 0; l < plan.layers.size(); ++l) {
        ordered_json jl;
        jl["layer"] = l;
        jl["clusters"] = plan.layers[l];
        layers.push_back(std::move(jl));
    }
    j["layers"] = std::move(layers);
    ordered_json trace = ordered_json::array();
    for (const TraceEvent & event : plan.trace) {
        ordered_json je;
        je["step"] = event.step;
        je["kind"] = kind_name(event.kind);
        if (event.kind != TraceKind::restart) {
            je["layer"] = event.layer;
        }
        if (event.kind == TraceKind::merge) {
            je["pair"] = ordered_json::array({event.pair.first, event.pair.second});
            je["pair_similarity"] = event.pair_similarity;
        }
        je["entropy_after"] = event.entropy_after;
        je["frozen_after"] = event.frozen_after;
        trace.push_back(std::move(je));
    }
    j["trace"] = std::move(trace);
    j["objective_retained_mass"] = plan.objective_retained_mass;
    return j.dump();
}

ClusterPlan plan_from_json(const std::string & text) {
    const ordered_json j = parse(text, "plan");
    ClusterPlan plan;
    plan.method = method_from_name(field(j, "method", "plan").get<std::string>());
    plan.budget_total = field(j, "budget_total", "plan").get<std::size_t>();
    plan.gamma = field(j, "gamma", "plan").get<double>();
    const auto & layers = field(j, "layers", "plan");
    plan.layers.resize(layers.size());
    for (const auto & jl : layers) {
        const std::size_t index = field(jl, "layer", "plan layer").get<std::size_t>();
        if (index >= plan.layers.size()) {
            throw DataError("bad_file", "plan layer index out of range");
        }
        plan.layers[index] =
            field(jl, "clusters", "plan layer").get<std::vector<std::vector<std::size_t>>>();
    }
    for (const auto & je : field(j, "trace", "plan")) {
        TraceEvent event;
        event.step = field(je, "step", "trace").get<std::size_t>();
        event.kind = kind_from_name(field(je, "kind", "trace").get<std::string>());
        if (event.kind != TraceKind::restart) {
            event.layer = field(je, "layer", "trace").get<std::size_t>();
        }
        if (event.kind == TraceKind::merge) {
            const auto pair = field(je, "pair", "trace").get<std::vector<std::size_t>>();
            if (pair.size() != 2) {
                throw DataError("bad_file", "trace pair must have two indices");
            }
            event.pair = {pair[0], pair[1]};
            event.pair_similarity = field(je, "pair_similarity", "trace").get<double>();
        }
        event.entropy_after = field(je, "entropy_after", "trace").get<double>();
        event.frozen_after = field(je, "frozen_after", "trace").get<std::vector<std::size_t>>();
        plan.trace.push_back(std::move(event));
    }
    plan.objective_retained_mass = field(j, "objective_retained_mass", "plan").get<double>();
    return plan;
}

std::string oracle_to_json(const OracleResult & result) {
    ordered_json j;
    j["allocation"] = result.allocation;
    j["objective"] = result.objective;
    return j.dump();
}

std::string profile_to_csv(const RedundancyProfile & profile) {
    std::ostringstream out;
    out << "layer,mean_redundancy,residual_mass,normalized\n";
    for (std::size_t l = 0; l < profile.mean_redundancy.size(); ++l) {
        out << l << ',' << format_double(profile.mean_redundancy[l]) << ','
            << format_double(profile.residual_mass[l]) << ','
            << format_double(profile.normalized[l]) << '\n';
    }
    return out.str();
}

std::string report_to_csv(const FidelityReport & report) {
    std::ostringstream out;
    out << "metric,value\n";
    out << "end_to_end_mse," << format_double(report.end_to_end_mse) << '\n';
    out << "routing_kl," << format_double(report.routing_kl) << '\n';
    out << "tokens," << report.tokens << '\n';
    for (std::size_t l = 0; l < report.per_layer_mse.size(); ++l) {
        out << "layer_mse_" << l << ',' << format_double(report.per_layer_mse[l]) << '\n';
    }
    return out.str();
}

std::string comparison_to_csv(const ComparisonTable & table) {
    std::ostringstream out;
    out << "method";
    for (const std::string & c : table.columns) {
        out << ',' << c;
    }
    out << '\n';
    for (const auto & [name, values] : table.rows) {
        out << name;
        for (double v : values) {
            out << ',' << format_double(v);
        }
        out << '\n';
    }
    return out.str();
}

std::string method_name(PlanMethod method) {
    switch (method) {
        case PlanMethod::grape: return "grape";
        case PlanMethod::uniform: return "uniform";
        case PlanMethod::count_guided: return "count_guided";
        case PlanMethod::router_guided: return "router_guided";
        case PlanMethod::random: return "random";
    }
    return "grape";
}

PlanMethod method_from_name(const std::string & name) {
    if (name == "grape") return PlanMethod::grape;
    if (name == "uniform") return PlanMethod::uniform;
    if (name == "count_guided") return PlanMethod::count_guided;
    if (name == "router_guided") return PlanMethod::router_guided;
    if (name == "random") return PlanMethod::random;
    throw ConfigError("config_invalid", "unknown plan method '" + name + "'");
}

std::string metric_name(SimilarityMetric metric) {
    switch (metric) {
        case SimilarityMetric::cka: return "cka";
        case SimilarityMetric::mse: return "mse";
        case SimilarityMetric::weight_cka: return "weight_cka";
    }
    return "cka";
}

SimilarityMetric metric_from_name(const std::string & name) {
    if (name == "cka") return SimilarityMetric::cka;
    if (name == "mse") return SimilarityMetric::mse;
    if (name == "weight_cka") return SimilarityMetric::weight_cka;
    throw ConfigError("config_invalid", "unknown similarity metric '" + name + "'");
}

std::string format_double(double value) {
    char buffer[64];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

std::string read_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("bad_file", "cannot open '" + path + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void atomic_write_file(const std::string & path, const std::string & content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const fs::path temp = target.string() + ".tmp";
    {
        std::ofstream out(temp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("bad_file", "cannot write '" + temp.string() + "'");
        }
        out << content;
        if (!out.good()) {
            throw DataError("bad_file", "short write to '" + temp.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(temp, target, ec);
    if (ec) {
        throw DataError("bad_file", "cannot rename '" + temp.string() + "' to '" + path + "'");
    }
}

}  // namespace grape
