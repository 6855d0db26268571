#include "channel_rewrite.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fcos::detail {

namespace {

double l1(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += std::abs(x);
    return s;
}

// Mixes along `axis` of a tensor whose shape is [d0, d1, ...]; axis 0 or 1.
Tensor mix_axis(const Tensor& t, std::size_t axis, const ChannelMix& mix) {
    Shape shape = t.shape();
    const std::size_t outer = axis == 0 ? 1 : shape[0];
    const std::size_t old_n = shape[axis];
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
    shape[axis] = mix.size();
    Tensor out(shape, t.dtype());
    dispatch_dtype(t.dtype(), [&]<class T>() {
        auto src = t.values<T>();
        auto dst = out.values<T>();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t r = 0; r < mix.size(); ++r) {
                for (std::size_t i = 0; i < inner; ++i) {
                    // anchored at the first member so that identical members fuse exactly
                    const double base = static_cast<double>(src[(o * old_n + mix[r].front().first) * inner + i]);
                    double acc = base;
                    for (const auto& [j, w] : mix[r]) acc += w * (static_cast<double>(src[(o * old_n + j) * inner + i]) - base);
                    dst[(o * mix.size() + r) * inner + i] = static_cast<T>(acc);
                }
            }
        }
    });
    return out;
}

}  // namespace

ChannelMix make_mix(const std::vector<std::vector<double>>& slices, const ClusterAssignment& assignment, FusionScheme scheme) {
    ChannelMix mix(assignment.clusters);
    const auto groups = assignment.groups();
    for (std::size_t c = 0; c < groups.size(); ++c) {
        const auto& g = groups[c];
        double total = 0;
        std::vector<double> mass(g.size(), 1.0);
        if (scheme == FusionScheme::L1Weighted) {
            for (std::size_t k = 0; k < g.size(); ++k) total += mass[k] = l1(slices.at(g[k]));
        }
        const bool uniform = scheme == FusionScheme::Mean || !(total > 0);
        for (std::size_t k = 0; k < g.size(); ++k) {
            const double w = uniform ? 1.0 / static_cast<double>(g.size()) : mass[k] / total;
            mix[c].emplace_back(g[k], w);
        }
    }
    return mix;
}

ChannelMix selection_mix(const std::vector<std::size_t>& keep) {
    ChannelMix mix;
    for (auto j : keep) mix.push_back({{j, 1.0}});
    return mix;
}

void apply_out_mix(LayerNode& node, const ChannelMix& mix) {
    node.params.at("weight") = mix_axis(node.params.at("weight"), 0, mix);
    node.params.at("bias") = mix_axis(node.params.at("bias"), 0, mix);
    node.c_out = mix.size();
}

void apply_in_mix(LayerNode& node, const ChannelMix& mix) {
    node.params.at("weight") = mix_axis(node.params.at("weight"), 1, mix);
    node.c_in = mix.size();
}

void apply_companion_mix(LayerNode& node, const ChannelMix& mix) {
    for (auto& [_, t] : node.params) t = mix_axis(t, 0, mix);
    for (auto& [name, t] : node.buffers) {
        t = mix_axis(t, 0, mix);
        if (name == "running_var")
            for (std::size_t i = 0; i < t.numel(); ++i) t.set_item(i, std::max(t.item(i), 1e-5));
    }
    node.c_in = node.c_out = mix.size();
}

int upstream_producer(const ModelGraph& model, int node_id) {
    int cur = node_id;
    while (cur != kGraphInput) {
        const auto& n = model.node(cur);
        if (n.kind == LayerKind::Conv1d || n.kind == LayerKind::Dense) return cur;
        cur = n.inputs.at(0);
    }
    return -1;
}

void sync_channel_counts(ModelGraph& model) {
    auto channels_of = [&](int id) { return id == kGraphInput ? model.in_channels : model.node(id).c_out; };
    for (auto& n : model.nodes) {
        if (n.kind == LayerKind::Conv1d || n.kind == LayerKind::Dense) continue;
        n.c_in = n.c_out = channels_of(n.inputs.at(0));
    }
}

void redirect(ModelGraph& model, int from, int to) {
    for (auto& n : model.nodes)
        for (auto& in : n.inputs)
            if (in == from) in = to;
    if (model.output == from) model.output = to;
}

void erase_nodes(ModelGraph& model, const std::vector<int>& ids) {
    const std::unordered_set<int> drop(ids.begin(), ids.end());
    std::erase_if(model.nodes, [&](const LayerNode& n) { return drop.contains(n.id); });
}

}  // namespace fcos::detail
