#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fcos/dataset.hpp"
#include "fcos/lacd.hpp"
#include "fcos/model_graph.hpp"

namespace fcos {

enum class BaselineMethod { L1Channel, RandomLayer, ProbeLayer };

std::string to_string(BaselineMethod m);
BaselineMethod baseline_method_from_string(const std::string& s);

struct BaselineConfig {
    BaselineMethod method = BaselineMethod::L1Channel;
    double keep_ratio = 0.5;  // l1-channel
    std::size_t count = 1;    // random-layer, probe-layer
    std::uint64_t seed = 0;
};

/// Indices of the `n` largest norms, lower index first on ties, returned in ascending order.
std::vector<std::size_t> top_l1_channels(std::span<const double> norms, std::size_t n);

/// Keeps the max(1, floor(c * keep_ratio)) output channels with the largest L1 norm in every
/// prunable dimension and slices consumers to match. Coupled dimensions rank channels by the
/// summed norm over all producers.
ModelGraph l1_channel_prune(const ModelGraph& model, double keep_ratio);

/// Uniformly samples `count` distinct removable units. Throws ConfigError when count exceeds
/// the number of units.
std::vector<int> random_layer_choice(const ModelGraph& model, std::size_t count, std::uint64_t seed);
ModelGraph random_layer_prune(const ModelGraph& model, std::size_t count, std::uint64_t seed);

/// The `count` units with the smallest probe gain acc[i] - acc[i-1] (lower id on ties),
/// skipping any unit whose removal would empty its stage. Throws ConfigError when the
/// guard makes `count` unreachable.
std::vector<int> probe_layer_choice(const ModelGraph& model, const ProbeProfile& profile, std::size_t count);
ModelGraph probe_layer_prune(const ModelGraph& model, const SignalDataset& ds, std::size_t count, const ProbeOptions& opts = {});

ModelGraph apply_baseline(const ModelGraph& model, const SignalDataset& ds, const BaselineConfig& cfg, const ProbeOptions& probe = {});

}  // namespace fcos
