#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stmae/config.hpp"
#include "stmae/data_io.hpp"
#include "stmae/pipeline.hpp"

namespace stmae {

// Mann-Whitney concordance probability with ties counted 1/2. Requires both
// classes to be present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Area under the precision-recall curve via the step-interpolation sum over
// ranked positives. Ties are broken by original index (stable descending
// sort), which makes the value deterministic.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

struct F1Result {
    double f1 = 0.0;
    double accuracy = 0.0;
    double threshold = 0.0;
};

// Exhaustive threshold scan maximizing F1 (predict positive when
// score >= threshold); accuracy is reported at the best-F1 threshold.
F1Result f1_accuracy(const std::vector<double>& scores, const std::vector<int>& labels);

struct MetricsReport {
    double image_auroc = 0.0;
    double image_ap = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;
    double threshold = 0.0;
    bool has_pixel = false;
    double pixel_auroc = 0.0;
    double pixel_ap = 0.0;
    int image_count = 0;
    std::size_t pixel_count = 0;
    std::string config_fingerprint;

    std::string csv_header() const;
    std::string csv_row() const;
    std::string summary() const;
};

struct PerImageScore {
    std::string image_path;
    int label = 0;
    double score = 0.0;
    std::string clip;
    int frame_index = -1;
};

struct EvalOutputs {
    MetricsReport report;
    std::vector<PerImageScore> image_scores;
};

// Called once per test image with its post-processed anomaly map (heatmap
// export hook).
using MapSink = std::function<void(std::size_t item_index, const TestItem&, const AnomalyMap&)>;

// Forward + SDFR per test image with a deterministic per-image decoupling
// seed derived from eval_seed; pixel scores of all test images are pooled
// into one ranking. Pixel metrics are skipped with a warning when no item
// carries a mask.
EvalOutputs evaluate_category(const Pipeline& pipe, const Dataset& dataset,
                              std::uint64_t eval_seed, int tta_rounds,
                              const MapSink& sink = nullptr);

struct AblationRow {
    std::string axis;
    std::string value;
    MetricsReport report;
};

// One train + eval run per value of the axis. Supported axes: mode, K,
// hierarchy, backbone, variant, loss_modality.
std::vector<AblationRow> ablation_run(const RunConfig& base_cfg, const std::string& axis,
                                      std::uint64_t eval_seed);

std::vector<std::string> ablation_axis_values(const std::string& axis);

}  // namespace stmae
