#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcos/model_graph.hpp"
#include "fcos/tensor.hpp"

namespace fcos {

enum class SimilarityMetric { Cosine, Euclidean };
enum class FusionScheme { Mean, L1Weighted };
enum class FusionOrder { OutputFirst, InputFirst };
enum class InputChannelMode { ProducerTied, Independent };
enum class ChannelAxis { Out, In };

std::string to_string(SimilarityMetric v);
std::string to_string(FusionScheme v);
std::string to_string(FusionOrder v);
std::string to_string(InputChannelMode v);
SimilarityMetric similarity_metric_from_string(const std::string& s);
FusionScheme fusion_scheme_from_string(const std::string& s);
FusionOrder fusion_order_from_string(const std::string& s);
InputChannelMode input_channel_mode_from_string(const std::string& s);

/// Symmetric m x m channel distance matrix.
///
/// Cosine: D = 1 - cos, in [0, 2]; zero vectors have similarity 1 with each other and 0 with
/// anything else. Euclidean: D = 1 - 1 / (1 + ||x - y||), in [0, 1).
struct DistanceMatrix {
    std::size_t size = 0;
    SimilarityMetric metric = SimilarityMetric::Cosine;
    std::vector<double> values;  // row-major

    double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

double channel_similarity(std::span<const double> x, std::span<const double> y, SimilarityMetric metric);
DistanceMatrix distance_matrix(const std::vector<std::vector<double>>& vectors, SimilarityMetric metric);

/// Flattened channel slices of a rank-2 or rank-3 weight. Axis Out gives row j (length
/// c_in*k); axis In gives w[:, j, :] (length c_out*k).
std::vector<std::vector<double>> channel_vectors(const Tensor& weight, ChannelAxis axis);

DistanceMatrix channel_similarity_matrix(const Tensor& weight, ChannelAxis axis, SimilarityMetric metric);

struct Merge {
    std::size_t a = 0;  // cluster ids are the smallest member index
    std::size_t b = 0;
    double distance = 0;
};

/// Partition of m channels into `clusters` groups. Cluster ids are 0..n-1, numbered by
/// smallest member.
struct ClusterAssignment {
    std::vector<std::size_t> members;  // channel -> cluster id
    std::size_t clusters = 0;
    std::vector<Merge> trace;

    std::vector<std::vector<std::size_t>> groups() const;
};

/// Agglomerative average-linkage clustering down to `n` clusters. Among pairs at the minimum
/// linkage distance, the pair with the lexicographically smallest (min id, max id) merges.
ClusterAssignment average_linkage_cluster(const DistanceMatrix& d, std::size_t n);

/// One fused slice per cluster: arithmetic mean, or L1-norm weighted mean. A cluster whose
/// total L1 mass is zero falls back to the mean.
std::vector<std::vector<double>> fuse_cluster_weights(const std::vector<std::vector<double>>& members,
                                                      const ClusterAssignment& assignment, FusionScheme scheme);

/// Channel fusion settings. `keep_ratio` is the fraction of channels kept per dimension.
struct FusionConfig {
    double keep_ratio = 0.5;
    SimilarityMetric metric = SimilarityMetric::Cosine;
    FusionScheme scheme = FusionScheme::Mean;
    FusionOrder order = FusionOrder::OutputFirst;
    InputChannelMode input_mode = InputChannelMode::ProducerTied;
};

/// max(1, floor(channels * keep_ratio)).
std::size_t kept_channels(std::size_t channels, double keep_ratio);

struct DimensionPlan {
    std::vector<int> producers;
    std::vector<int> consumers;
    std::size_t channels_before = 0;
    std::size_t channels_after = 0;
    ClusterAssignment assignment;
    std::map<int, ClusterAssignment> consumer_assignments;  // Independent mode only
};

struct PrunePlan {
    FusionConfig config;
    std::vector<DimensionPlan> dims;
};

/// Fuses every prunable channel dimension down to kept_channels(c, keep_ratio). Dimensions
/// written by several producers (residual stages) share one assignment computed from the
/// concatenated producer rows.
std::pair<ModelGraph, PrunePlan> prune_model_channels(const ModelGraph& model, const FusionConfig& cfg);

nlohmann::json to_json(const PrunePlan& plan);
PrunePlan prune_plan_from_json(const nlohmann::json& j);
void save_prune_plan(const PrunePlan& plan, const std::filesystem::path& path);
PrunePlan load_prune_plan(const std::filesystem::path& path);

}  // namespace fcos
