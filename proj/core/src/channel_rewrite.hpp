#pragma once

// Graph rewrites that recombine channel slices. Shared by channel fusion, layer removal
// rewiring and the L1-norm baseline.

#include <cstddef>
#include <utility>
#include <vector>

#include "fcos/fusion.hpp"
#include "fcos/model_graph.hpp"

namespace fcos::detail {

/// New channel r = sum over (j, w) in mix[r] of w * old channel j.
using ChannelMix = std::vector<std::vector<std::pair<std::size_t, double>>>;

/// Convex per-cluster weights for the given slices.
ChannelMix make_mix(const std::vector<std::vector<double>>& slices, const ClusterAssignment& assignment, FusionScheme scheme);

/// Keeps the listed channels unchanged, in the given order.
ChannelMix selection_mix(const std::vector<std::size_t>& keep);

/// Rewrites a conv/dense node's output rows (and bias).
void apply_out_mix(LayerNode& node, const ChannelMix& mix);
/// Rewrites a conv/dense node's input slices.
void apply_in_mix(LayerNode& node, const ChannelMix& mix);
/// Rewrites a batchnorm node's per-channel vectors; running variance is floored at 1e-5.
void apply_companion_mix(LayerNode& node, const ChannelMix& mix);

/// Nearest conv/dense node upstream of `node_id` along first inputs, or -1.
int upstream_producer(const ModelGraph& model, int node_id);

/// Recomputes c_in/c_out of parameter-free nodes from their inputs.
void sync_channel_counts(ModelGraph& model);

/// Replaces every reference to `from` (inputs and model output) with `to`.
void redirect(ModelGraph& model, int from, int to);

/// Removes the listed nodes from `model.nodes`.
void erase_nodes(ModelGraph& model, const std::vector<int>& ids);

}  // namespace fcos::detail
