#pragma once

#include <string>

#include "grape/fidelity.hpp"
#include "grape/planner.hpp"
#include "grape/redundancy.hpp"
#include "grape/similarity.hpp"
#include "grape/synth_moe.hpp"

namespace grape {

// JSON artifacts round-trip through these functions. Serialization is fully
// deterministic: fixed key order, shortest round-trip decimals for numbers.

std::string model_to_json(const SynthMoeModel & model);
SynthMoeModel model_from_json(const std::string & text);

std::string capture_to_json(const CalibrationCapture & capture);
CalibrationCapture capture_from_json(const std::string & text);

std::string blocks_to_json(const std::vector<SimilarityBlock> & blocks);
std::vector<SimilarityBlock> blocks_from_json(const std::string & text);

std::string plan_to_json(const ClusterPlan & plan);
ClusterPlan plan_from_json(const std::string & text);

std::string oracle_to_json(const OracleResult & result);

std::string profile_to_csv(const RedundancyProfile & profile);
std::string report_to_csv(const FidelityReport & report);
std::string comparison_to_csv(const ComparisonTable & table);

std::string method_name(PlanMethod method);
PlanMethod method_from_name(const std::string & name);
std::string metric_name(SimilarityMetric metric);
SimilarityMetric metric_from_name(const std::string & name);

// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

std::string read_file(const std::string & path);

// Writes to a sibling temp file, then renames into place.
void atomic_write_file(const std::string & path, const std::string & content);

}  // namespace grape
