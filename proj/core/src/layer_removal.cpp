#include <algorithm>

#include "channel_rewrite.hpp"
#include "fcos/fusion.hpp"
#include "fcos/model_graph.hpp"

namespace fcos {

namespace {

void remove_residual(ModelGraph& g, const RemovableUnit& u) {
    auto& add = g.node(u.join_node);
    std::vector<int> rest;
    for (int in : add.inputs)
        if (std::find(u.nodes.begin(), u.nodes.end(), in) == u.nodes.end()) rest.push_back(in);
    if (rest.size() == add.inputs.size()) throw RemovalError(u.id, "branch does not feed its join node");
    if (rest.empty()) throw RemovalError(u.id, "join node has no shortcut input");
    if (rest.size() == 1) {
        const int add_id = add.id;
        detail::redirect(g, add_id, rest.front());
        detail::erase_nodes(g, {add_id});
    } else {
        add.inputs = rest;
    }
    detail::erase_nodes(g, u.nodes);
}

void remove_plain(ModelGraph& g, const RemovableUnit& u, const RewireOptions& opts) {
    const auto& conv = g.node(u.id);
    const int entry = conv.inputs.at(0);
    const std::size_t c_in = conv.c_in, c_out = conv.c_out;
    if (c_in > c_out)
        throw RemovalError(u.id, "input width " + std::to_string(c_in) + " exceeds output width " + std::to_string(c_out) +
                                     "; downstream layers cannot be widened");

    if (c_in < c_out) {
        // Fold the c_out channels seen by downstream consumers onto c_in groups.
        const auto dims = channel_dims(g);
        auto it = std::find_if(dims.begin(), dims.end(), [&](const ChannelDim& d) {
            return std::find(d.producers.begin(), d.producers.end(), u.id) != d.producers.end();
        });
        if (it == dims.end() || it->producers.size() != 1) throw RemovalError(u.id, "output channels are shared with another producer");
        const auto metric = opts.euclidean ? SimilarityMetric::Euclidean : SimilarityMetric::Cosine;
        const auto scheme = opts.l1_weighted ? FusionScheme::L1Weighted : FusionScheme::Mean;
        const auto a = average_linkage_cluster(channel_similarity_matrix(conv.params.at("weight"), ChannelAxis::Out, metric), c_in);
        for (int c : it->consumers) {
            auto& node = g.node(c);
            detail::apply_in_mix(node, detail::make_mix(channel_vectors(node.params.at("weight"), ChannelAxis::In), a, scheme));
        }
    }

    const int exit = u.nodes.back();
    detail::redirect(g, exit, entry);
    detail::erase_nodes(g, u.nodes);
}

}  // namespace

ModelGraph remove_layers(const ModelGraph& model, std::span<const int> unit_ids, const RewireOptions& opts) {
    std::vector<int> ids(unit_ids.begin(), unit_ids.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    ModelGraph g = model;
    for (int id : ids) {
        if (!g.has_unit(id)) throw RemovalError(id, "not a removable unit of this model");
        const RemovableUnit u = g.unit(id);
        if (u.kind == UnitKind::ResidualBranch) {
            remove_residual(g, u);
        } else {
            remove_plain(g, u, opts);
        }
        std::erase_if(g.units, [&](const RemovableUnit& x) { return x.id == id; });
        detail::sync_channel_counts(g);
    }
    refresh_coupled_groups(g);
    std::string why;
    if (!is_valid(g, &why)) throw RemovalError(ids.empty() ? -1 : ids.front(), "result is not a valid graph: " + why);
    return g;
}

bool is_removable(const ModelGraph& model, int unit_id) {
    try {
        const int ids[] = {unit_id};
        remove_layers(model, ids);
        return true;
    } catch (const RemovalError&) {
        return false;
    }
}

}  // namespace fcos
