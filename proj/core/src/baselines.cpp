#include "fcos/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "channel_rewrite.hpp"
#include "fcos/fusion.hpp"

namespace fcos {

std::string to_string(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::L1Channel: return "l1-channel";
        case BaselineMethod::RandomLayer: return "random-layer";
        case BaselineMethod::ProbeLayer: return "probe-layer";
    }
    return "?";
}

BaselineMethod baseline_method_from_string(const std::string& s) {
    if (s == "l1-channel") return BaselineMethod::L1Channel;
    if (s == "random-layer") return BaselineMethod::RandomLayer;
    if (s == "probe-layer") return BaselineMethod::ProbeLayer;
    throw ConfigError("unknown baseline method '" + s + "' (expected l1-channel, random-layer or probe-layer)");
}

std::vector<std::size_t> top_l1_channels(std::span<const double> norms, std::size_t n) {
    std::vector<std::size_t> idx(norms.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
    idx.resize(std::min(n, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

ModelGraph l1_channel_prune(const ModelGraph& model, double keep_ratio) {
    kept_channels(1, keep_ratio);
    ModelGraph g = model;
    std::map<int, std::vector<int>> companions_of;
    for (const auto& n : g.nodes)
        if (n.kind == LayerKind::BatchNorm) companions_of[detail::upstream_producer(g, n.inputs.at(0))].push_back(n.id);

    for (const auto& dim : channel_dims(model)) {
        if (!dim.prunable(model)) continue;
        std::vector<double> norms(dim.channels, 0.0);
        for (int p : dim.producers) {
            const auto rows = channel_vectors(g.node(p).params.at("weight"), ChannelAxis::Out);
            for (std::size_t j = 0; j < dim.channels; ++j)
                for (double v : rows[j]) norms[j] += std::abs(v);
        }
        const auto mix = detail::selection_mix(top_l1_channels(norms, kept_channels(dim.channels, keep_ratio)));
        for (int p : dim.producers) {
            detail::apply_out_mix(g.node(p), mix);
            for (int bn : companions_of[p]) detail::apply_companion_mix(g.node(bn), mix);
        }
        for (int c : dim.consumers) detail::apply_in_mix(g.node(c), mix);
    }
    detail::sync_channel_counts(g);
    refresh_coupled_groups(g);
    validate(g);
    return g;
}

std::vector<int> random_layer_choice(const ModelGraph& model, std::size_t count, std::uint64_t seed) {
    if (count > model.units.size())
        throw ConfigError("baseline.count " + std::to_string(count) + " exceeds the " + std::to_string(model.units.size()) + " removable units");
    std::vector<int> ids;
    for (const auto& u : model.units) ids.push_back(u.id);
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(count);
    std::sort(ids.begin(), ids.end());
    return ids;
}

ModelGraph random_layer_prune(const ModelGraph& model, std::size_t count, std::uint64_t seed) {
    return remove_layers(model, random_layer_choice(model, count, seed));
}

std::vector<int> probe_layer_choice(const ModelGraph& model, const ProbeProfile& profile, std::size_t count) {
    if (profile.acc.size() != profile.units.size() + 1) throw UsageError("probe profile does not match its unit list");
    std::vector<std::size_t> order(profile.units.size());
    std::iota(order.begin(), order.end(), 0);
    auto gain = [&](std::size_t k) { return profile.acc[k + 1] - profile.acc[k]; };
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (gain(a) != gain(b)) return gain(a) < gain(b);
        return profile.units[a] < profile.units[b];
    });

    std::map<int, std::size_t> left;  // stage -> units still present
    for (const auto& u : model.units) left[u.stage]++;
    std::vector<int> chosen;
    for (auto k : order) {
        if (chosen.size() == count) break;
        const auto& u = model.unit(profile.units[k]);
        if (left[u.stage] <= 1) continue;
        left[u.stage]--;
        chosen.push_back(u.id);
    }
    if (chosen.size() < count)
        throw ConfigError("probe-layer baseline cannot remove " + std::to_string(count) + " units without emptying a stage");
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

ModelGraph probe_layer_prune(const ModelGraph& model, const SignalDataset& ds, std::size_t count, const ProbeOptions& opts) {
    if (count == 0) return model;
    return remove_layers(model, probe_layer_choice(model, probe_model(model, ds, opts), count));
}

ModelGraph apply_baseline(const ModelGraph& model, const SignalDataset& ds, const BaselineConfig& cfg, const ProbeOptions& probe) {
    switch (cfg.method) {
        case BaselineMethod::L1Channel: return l1_channel_prune(model, cfg.keep_ratio);
        case BaselineMethod::RandomLayer: return random_layer_prune(model, cfg.count, cfg.seed);
        case BaselineMethod::ProbeLayer: return probe_layer_prune(model, ds, cfg.count, probe);
    }
    throw ConfigError("unknown baseline method");
}

}  // namespace fcos
