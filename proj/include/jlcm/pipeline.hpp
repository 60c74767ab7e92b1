#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jlcm/clustering.hpp"
#include "jlcm/learner.hpp"
#include "jlcm/model.hpp"
#include "jlcm/packfmt.hpp"
#include "jlcm/planner.hpp"
#include "jlcm/reorder_init.hpp"

namespace jlcm {

// "auto" resolves to multi-codebook, the better fit for dense stacks;
// multi-scale stays selectable.
enum class ModeChoice : std::uint8_t { automatic, multi_scale, multi_codebook };

ModeChoice mode_choice_from_name(const std::string& name);
const char* mode_choice_name(ModeChoice mode);

struct RunConfig {
    double alpha = 3.9;
    ModeChoice mode = ModeChoice::automatic;
    clustering::Method method = clustering::Method::hierarchical;
    bool optimize = false;
    Schedule schedule;
    ScaleEstimator scale_estimator = ScaleEstimator::stddev;

    PlanMode resolved_mode() const {
        return mode == ModeChoice::multi_scale ? PlanMode::multi_scale : PlanMode::multi_codebook;
    }
};

struct LayerReport {
    std::size_t index = 0;
    std::size_t n_o = 0, n_i = 0;
    CompressionPlan plan;
    bool reordered = false;
    double init_weight_mse = 0.0;
    double final_weight_mse = 0.0;
    double calib_feature_mse = 0.0; // mean sq. gap between compressed-prefix and original features
};

struct CompressionOutcome {
    CompressedModel compressed;
    FootprintReport footprint;
    std::vector<LayerReport> layers;
    std::vector<std::vector<TraceRow>> traces; // empty rows when optimize is off
};

// Per layer: re-order rows (skipped for the last layer), derive the plan,
// initialize codebooks and mappings; with cfg.optimize, capture original
// and compressed-prefix features and run the joint optimization before
// finalizing. The input model is never mutated. Calibration may be null
// only when optimize is off. Init-only runs parallelize across layers up
// to the JLCM_THREADS cap.
CompressionOutcome compress_model(const ModelContainer& model, const CalibrationSet* calib,
                                  const RunConfig& cfg);

struct EvalMetrics {
    std::vector<double> layer_weight_mse; // layers compared as stored
    double output_mse = 0.0;
    double max_abs_deviation = 0.0;
    double top1_agreement = 1.0;
};

EvalMetrics evaluate(const ModelContainer& original, const ModelContainer& compressed,
                     const Matf& inputs);
EvalMetrics evaluate(const ModelContainer& original, const CompressedModel& compressed,
                     const Matf& inputs);

// JSON run report: config echo, per-layer plans, footprint.
std::string run_report_json(const RunConfig& cfg, const CompressionOutcome& outcome);
std::string eval_metrics_json(const EvalMetrics& metrics);
std::string footprint_json(const FootprintReport& report);

} // namespace jlcm
