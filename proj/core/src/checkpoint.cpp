#include "fcos/checkpoint.hpp"

namespace fcos {

namespace {

std::string side_name(ChannelSide s) { return s == ChannelSide::In ? "in" : "out"; }

std::string tensor_key(int node, bool param, const std::string& name) {
    return "n" + std::to_string(node) + (param ? ".p." : ".b.") + name;
}

}  // namespace

nlohmann::json describe_graph(const ModelGraph& g) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : g.nodes) {
        nlohmann::json params = nlohmann::json::array(), buffers = nlohmann::json::array();
        for (const auto& [k, _] : n.params) params.push_back(k);
        for (const auto& [k, _] : n.buffers) buffers.push_back(k);
        nodes.push_back({{"id", n.id},
                         {"kind", std::string(to_string(n.kind))},
                         {"name", n.name},
                         {"inputs", n.inputs},
                         {"c_in", n.c_in},
                         {"c_out", n.c_out},
                         {"kernel", n.kernel},
                         {"stride", n.stride},
                         {"pad_left", n.pad_left},
                         {"pad_right", n.pad_right},
                         {"frozen", n.frozen},
                         {"params", params},
                         {"buffers", buffers}});
    }
    nlohmann::json units = nlohmann::json::array();
    for (const auto& u : g.units) {
        units.push_back({{"id", u.id},
                         {"kind", u.kind == UnitKind::PlainLayer ? "plain" : "residual"},
                         {"stage", u.stage},
                         {"nodes", u.nodes},
                         {"probe", u.probe_node},
                         {"join", u.join_node}});
    }
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& grp : g.coupled_groups) {
        nlohmann::json members = nlohmann::json::array();
        for (const auto& r : grp) members.push_back({r.node, side_name(r.side)});
        groups.push_back(members);
    }
    return {{"arch", g.arch},
            {"in_channels", g.in_channels},
            {"in_length", g.in_length},
            {"num_classes", g.num_classes},
            {"output", g.output},
            {"next_id", g.next_id},
            {"hyper", g.hyper},
            {"nodes", nodes},
            {"units", units},
            {"coupled_groups", groups}};
}

Container checkpoint_container(const ModelGraph& model, const TrainingMeta& meta) {
    Container c;
    c.descriptor = {{"kind", "checkpoint"},
                    {"graph", describe_graph(model)},
                    {"training",
                     {{"epochs", meta.epochs}, {"seed", meta.seed}, {"dataset_fingerprint", meta.dataset_fingerprint}, {"extra", meta.extra}}}};
    for (const auto& n : model.nodes) {
        for (const auto& [k, t] : n.params) c.records.push_back(Record::from_tensor(tensor_key(n.id, true, k), t));
        for (const auto& [k, t] : n.buffers) c.records.push_back(Record::from_tensor(tensor_key(n.id, false, k), t));
    }
    return c;
}

ModelGraph graph_from_container(const Container& c, TrainingMeta* meta) {
    if (c.descriptor.value("kind", "") != "checkpoint") throw FormatError(FormatErrorKind::Malformed, "container is not a checkpoint");
    ModelGraph g;
    try {
        const auto& d = c.descriptor.at("graph");
        g.arch = d.at("arch").get<std::string>();
        g.in_channels = d.at("in_channels").get<std::size_t>();
        g.in_length = d.at("in_length").get<std::size_t>();
        g.num_classes = d.at("num_classes").get<std::size_t>();
        g.output = d.at("output").get<int>();
        g.next_id = d.at("next_id").get<int>();
        g.hyper = d.at("hyper");
        for (const auto& jn : d.at("nodes")) {
            LayerNode n;
            n.id = jn.at("id").get<int>();
            n.kind = layer_kind_from_string(jn.at("kind").get<std::string>());
            n.name = jn.at("name").get<std::string>();
            n.inputs = jn.at("inputs").get<std::vector<int>>();
            n.c_in = jn.at("c_in").get<std::size_t>();
            n.c_out = jn.at("c_out").get<std::size_t>();
            n.kernel = jn.at("kernel").get<std::size_t>();
            n.stride = jn.at("stride").get<std::size_t>();
            n.pad_left = jn.at("pad_left").get<std::size_t>();
            n.pad_right = jn.at("pad_right").get<std::size_t>();
            n.frozen = jn.at("frozen").get<bool>();
            for (const auto& k : jn.at("params")) n.params[k] = c.record(tensor_key(n.id, true, k)).to_tensor();
            for (const auto& k : jn.at("buffers")) n.buffers[k] = c.record(tensor_key(n.id, false, k)).to_tensor();
            g.nodes.push_back(std::move(n));
        }
        for (const auto& ju : d.at("units")) {
            RemovableUnit u;
            u.id = ju.at("id").get<int>();
            u.kind = ju.at("kind").get<std::string>() == "plain" ? UnitKind::PlainLayer : UnitKind::ResidualBranch;
            u.stage = ju.at("stage").get<int>();
            u.nodes = ju.at("nodes").get<std::vector<int>>();
            u.probe_node = ju.at("probe").get<int>();
            u.join_node = ju.at("join").get<int>();
            g.units.push_back(std::move(u));
        }
        for (const auto& jg : d.at("coupled_groups")) {
            CoupledGroup grp;
            for (const auto& m : jg) grp.push_back({m.at(0).get<int>(), m.at(1).get<std::string>() == "in" ? ChannelSide::In : ChannelSide::Out});
            g.coupled_groups.push_back(std::move(grp));
        }
        if (meta) {
            const auto& t = c.descriptor.at("training");
            meta->epochs = t.at("epochs").get<std::size_t>();
            meta->seed = t.at("seed").get<std::uint64_t>();
            meta->dataset_fingerprint = t.at("dataset_fingerprint").get<std::string>();
            meta->extra = t.at("extra");
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorKind::Malformed, std::string("bad checkpoint descriptor: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(FormatErrorKind::Malformed, std::string("bad checkpoint descriptor: ") + e.what());
    }
    std::string why;
    if (!is_valid(g, &why)) throw FormatError(FormatErrorKind::Malformed, "checkpoint graph is inconsistent: " + why);
    return g;
}

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path, const TrainingMeta& meta) {
    write_container(checkpoint_container(model, meta), path);
}

ModelGraph load_checkpoint(const std::filesystem::path& path, TrainingMeta* meta) {
    return graph_from_container(read_container(path), meta);
}

}  // namespace fcos
