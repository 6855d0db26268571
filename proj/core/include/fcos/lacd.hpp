#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fcos/dataset.hpp"
#include "fcos/model_graph.hpp"
#include "fcos/report.hpp"
#include "fcos/training.hpp"

namespace fcos {

enum class FeatureReduction { GlobalAvgPool, Flatten };

std::string to_string(FeatureReduction r);
FeatureReduction feature_reduction_from_string(const std::string& s);

struct ProbeOptions {
    std::size_t epochs = 5;
    std::size_t batch = 128;
    double lr = 0.001;
    std::uint64_t seed = 0;
    FeatureReduction reduction = FeatureReduction::GlobalAvgPool;
    /// Standardize every feature with train-split mean and deviation before fitting.
    bool standardize = true;
    unsigned workers = 1;
};

/// Probe nodes of the model's removable units, in unit order.
std::vector<int> probe_points(const ModelGraph& model);

/// Reduces one activation [B, C, L] (or [B, C]) to features [B, F] in fp64.
Tensor reduce_features(const Tensor& activation, FeatureReduction reduction);

/// Features of `node` (kGraphInput for the raw input) for every row of `batch`.
/// Throws UsageError when the node is not in the graph.
Tensor extract_features(const ModelGraph& model, int node, const Tensor& batch, FeatureReduction reduction);

/// Features of several nodes captured from shared eval-mode forward passes.
std::map<int, Tensor> extract_all_features(const ModelGraph& model, std::span<const int> nodes, const Tensor& batch,
                                           FeatureReduction reduction, std::size_t chunk = 256);

struct LinearProbe {
    Tensor weight;  // [K, F] fp64
    Tensor bias;    // [K]
    std::vector<double> mean, scale;  // standardization applied before the linear map
    double accuracy = 0;
};

/// Zero-initialised linear softmax classifier trained with Adam on (train_x, train_y);
/// accuracy is measured on (test_x, test_y). Throws DegenerateDataError for single-class labels.
LinearProbe train_probe(const Tensor& train_x, std::span<const std::int32_t> train_y, const Tensor& test_x,
                        std::span<const std::int32_t> test_y, std::size_t num_classes, const ProbeOptions& opts);

/// Acc_0..Acc_L: acc[0] comes from the raw input, acc[i] from units[i-1]'s probe node.
struct ProbeProfile {
    std::vector<int> units;
    std::vector<int> nodes;
    std::vector<double> acc;
    std::vector<std::uint64_t> seeds;
    std::string reduction;
};

/// flagged holds indices i >= 1 of `acc` with |acc[i] - acc[i-1]| <= beta; deltas[0] is 0.
struct CollapseDiagnosis {
    double beta = 0;
    std::vector<std::size_t> flagged;
    std::vector<double> deltas;
};

/// Throws ConfigError when beta <= 0 or beta >= 1, UsageError for fewer than two points.
CollapseDiagnosis diagnose_collapse(std::span<const double> acc, double beta);

/// Probes every unit of `model` on `ds` (train split to fit, test split to score).
ProbeProfile probe_model(const ModelGraph& model, const SignalDataset& ds, const ProbeOptions& opts);

/// Units to remove for a diagnosis: flagged units that can be removed, minus one survivor
/// (the highest gain) for any stage that would otherwise be emptied.
std::vector<int> select_collapsed_units(const ModelGraph& model, const ProbeProfile& profile, const CollapseDiagnosis& diag,
                                        const RewireOptions& rewire = {});

struct LacdOptions {
    double beta = 0.005;
    std::size_t warm_epochs = 20;
    std::size_t final_epochs = 80;
    TrainOptions train;  // lr, batch, seed; epochs are taken from the fields above
    ProbeOptions probe;
    RewireOptions rewire;
};

/// Warm fine-tune, freeze, probe, diagnose and remove. The final fine-tune is separate so
/// that the pipeline can checkpoint in between.
struct LacdDiagnosisResult {
    ModelGraph warm_model;
    ModelGraph pruned_model;
    ProbeProfile profile;
    CollapseDiagnosis diagnosis;
    std::vector<int> removed;
    std::vector<CurvePoint> curve;
};

LacdDiagnosisResult lacd_diagnose(const ModelGraph& stage1, const SignalDataset& ds, const LacdOptions& opts);

struct LacdResult {
    ModelGraph model;
    LacdDiagnosisResult diagnosis;
    PruneReport report;
    std::vector<CurvePoint> curve;
};

/// Full stage 2: lacd_diagnose followed by `final_epochs` of fine-tuning. The report compares
/// the warm model with the final model.
LacdResult run_lacd(const ModelGraph& stage1, const SignalDataset& ds, const LacdOptions& opts);

/// Columns point, unit, node, acc, delta, flagged, removed.
void write_profile_csv(const ProbeProfile& profile, const CollapseDiagnosis& diag, std::span<const int> removed,
                       const std::filesystem::path& path);

}  // namespace fcos
