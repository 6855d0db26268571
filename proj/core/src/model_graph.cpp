#include "fcos/model_graph.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

namespace fcos {

namespace {

constexpr std::string_view kKindNames[] = {"conv1d", "batchnorm", "relu", "maxpool1d", "gap", "dense", "add"};

void expect_param(const LayerNode& n, const std::string& name, const Shape& shape, bool buffer = false) {
    const auto& m = buffer ? n.buffers : n.params;
    auto it = m.find(name);
    if (it == m.end()) throw ShapeError(n.id, "missing tensor '" + name + "'");
    if (it->second.shape() != shape)
        throw ShapeError(n.id, "tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) + ", expected " +
                                   shape_to_string(shape));
}

}  // namespace

std::string_view to_string(LayerKind kind) { return kKindNames[static_cast<int>(kind)]; }

LayerKind layer_kind_from_string(std::string_view name) {
    for (std::size_t i = 0; i < std::size(kKindNames); ++i)
        if (kKindNames[i] == name) return static_cast<LayerKind>(i);
    throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

bool ModelGraph::has_node(int id) const {
    return std::any_of(nodes.begin(), nodes.end(), [id](const LayerNode& n) { return n.id == id; });
}

std::size_t ModelGraph::index_of(int id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].id == id) return i;
    throw UsageError("no layer with id " + std::to_string(id));
}

const LayerNode& ModelGraph::node(int id) const { return nodes[index_of(id)]; }
LayerNode& ModelGraph::node(int id) { return nodes[index_of(id)]; }

bool ModelGraph::has_unit(int id) const {
    return std::any_of(units.begin(), units.end(), [id](const RemovableUnit& u) { return u.id == id; });
}

const RemovableUnit& ModelGraph::unit(int id) const {
    for (const auto& u : units)
        if (u.id == id) return u;
    throw UsageError("no removable unit with id " + std::to_string(id));
}

DType ModelGraph::dtype() const {
    for (const auto& n : nodes)
        for (const auto& [_, t] : n.params) return t.dtype();
    return DType::F32;
}

ModelGraph ModelGraph::cast(DType dtype) const {
    ModelGraph out = *this;
    for (auto& n : out.nodes) {
        for (auto& [_, t] : n.params) t = t.cast(dtype);
        for (auto& [_, t] : n.buffers) t = t.cast(dtype);
    }
    return out;
}

std::vector<Tensor*> ModelGraph::trainable_parameters() {
    std::vector<Tensor*> out;
    for (auto& n : nodes) {
        if (n.frozen) continue;
        for (auto& [_, t] : n.params) out.push_back(&t);
    }
    return out;
}

void ModelGraph::set_frozen(bool frozen) {
    for (auto& n : nodes) n.frozen = frozen;
}

std::vector<NodeShape> infer_shapes(const ModelGraph& model, std::size_t length) {
    std::unordered_map<int, std::size_t> pos;
    std::vector<NodeShape> shapes(model.nodes.size());
    const NodeShape input{model.in_channels, model.in_length == 0 ? 0 : length};

    auto shape_of = [&](const LayerNode& n, int pred) -> NodeShape {
        if (pred == kGraphInput) return input;
        auto it = pos.find(pred);
        if (it == pos.end()) throw ShapeError(n.id, "predecessor " + std::to_string(pred) + " missing or not earlier in order");
        return shapes[it->second];
    };

    for (std::size_t i = 0; i < model.nodes.size(); ++i) {
        const auto& n = model.nodes[i];
        if (pos.count(n.id)) throw ShapeError(n.id, "duplicate layer id");
        if (n.inputs.empty()) throw ShapeError(n.id, "layer has no inputs");
        if (n.kind != LayerKind::Add && n.inputs.size() != 1) throw ShapeError(n.id, "expected exactly one input");

        const NodeShape in = shape_of(n, n.inputs[0]);
        if (in.channels != n.c_in)
            throw ShapeError(n.id, "input has " + std::to_string(in.channels) + " channels, layer expects c_in=" +
                                       std::to_string(n.c_in));
        NodeShape out = in;
        switch (n.kind) {
            case LayerKind::Conv1d: {
                if (in.length == 0) throw ShapeError(n.id, "conv1d needs a [C, L] input");
                if (n.kernel == 0 || n.stride == 0) throw ShapeError(n.id, "kernel and stride must be positive");
                expect_param(n, "weight", {n.c_out, n.c_in, n.kernel});
                expect_param(n, "bias", {n.c_out});
                const auto padded = in.length + n.pad_left + n.pad_right;
                if (padded < n.kernel) throw ShapeError(n.id, "input length shorter than kernel");
                out = {n.c_out, (padded - n.kernel) / n.stride + 1};
                break;
            }
            case LayerKind::BatchNorm:
                if (n.c_in != n.c_out) throw ShapeError(n.id, "batchnorm must have c_in == c_out");
                expect_param(n, "gamma", {n.c_out});
                expect_param(n, "beta", {n.c_out});
                expect_param(n, "running_mean", {n.c_out}, true);
                expect_param(n, "running_var", {n.c_out}, true);
                break;
            case LayerKind::Relu:
                break;
            case LayerKind::MaxPool1d:
                if (in.length < n.kernel || n.kernel == 0 || n.stride == 0)
                    throw ShapeError(n.id, "maxpool1d input length " + std::to_string(in.length) + " < kernel");
                out.length = (in.length - n.kernel) / n.stride + 1;
                break;
            case LayerKind::GlobalAvgPool:
                if (in.length == 0) throw ShapeError(n.id, "global average pool needs a [C, L] input");
                out.length = 0;
                break;
            case LayerKind::Dense:
                if (in.length != 0) throw ShapeError(n.id, "dense needs a flat [C] input");
                expect_param(n, "weight", {n.c_out, n.c_in});
                expect_param(n, "bias", {n.c_out});
                out.channels = n.c_out;
                break;
            case LayerKind::Add:
                if (n.inputs.size() < 2) throw ShapeError(n.id, "add needs at least two inputs");
                for (int p : n.inputs) {
                    const auto s = shape_of(n, p);
                    if (s.channels != in.channels || s.length != in.length)
                        throw ShapeError(n.id, "add inputs disagree in shape");
                }
                break;
        }
        if (out.channels != n.c_out)
            throw ShapeError(n.id, "output has " + std::to_string(out.channels) + " channels, layer declares c_out=" +
                                       std::to_string(n.c_out));
        shapes[i] = out;
        pos[n.id] = i;
    }
    return shapes;
}

void validate(const ModelGraph& model) {
    if (model.nodes.empty()) throw ShapeError(-1, "model has no layers");
    auto shapes = infer_shapes(model, model.in_length);
    if (!model.has_node(model.output)) throw ShapeError(-1, "output layer " + std::to_string(model.output) + " missing");
    const auto& out = shapes[model.index_of(model.output)];
    if (out.length != 0 || out.channels != model.num_classes)
        throw ShapeError(model.output, "output must be [" + std::to_string(model.num_classes) + "] logits");

    for (const auto& group : model.coupled_groups) {
        std::size_t c = 0;
        for (const auto& ref : group) {
            if (!model.has_node(ref.node)) throw ShapeError(ref.node, "coupled group references a missing layer");
            const auto& n = model.node(ref.node);
            const auto ch = ref.side == ChannelSide::In ? n.c_in : n.c_out;
            if (c == 0) c = ch;
            if (ch != c) throw ShapeError(ref.node, "coupled group members disagree in channel count");
        }
    }
    for (const auto& u : model.units) {
        for (int id : u.nodes)
            if (!model.has_node(id)) throw ShapeError(id, "unit " + std::to_string(u.id) + " references a missing layer");
        if (!model.has_node(u.probe_node)) throw ShapeError(u.probe_node, "unit probe point missing");
    }
}

bool is_valid(const ModelGraph& model, std::string* why) {
    try {
        validate(model);
        return true;
    } catch (const Error& e) {
        if (why) *why = e.what();
        return false;
    }
}

bool ChannelDim::prunable(const ModelGraph& model) const {
    if (from_input || producers.empty()) return false;
    return std::all_of(producers.begin(), producers.end(),
                       [&](int id) { return model.node(id).kind == LayerKind::Conv1d; });
}

std::vector<ChannelDim> channel_dims(const ModelGraph& model) {
    // Union-find over dimension slots; slot 0 is the graph input.
    std::vector<std::size_t> parent{0};
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::unordered_map<int, std::size_t> slot;
    slot[kGraphInput] = 0;

    for (const auto& n : model.nodes) {
        switch (n.kind) {
            case LayerKind::Conv1d:
            case LayerKind::Dense:
                parent.push_back(parent.size());
                slot[n.id] = parent.size() - 1;
                break;
            case LayerKind::Add: {
                auto root = find(slot.at(n.inputs[0]));
                for (std::size_t k = 1; k < n.inputs.size(); ++k) {
                    auto other = find(slot.at(n.inputs[k]));
                    if (other != root) parent[std::max(root, other)] = std::min(root, other);
                    root = std::min(root, other);
                }
                slot[n.id] = root;
                break;
            }
            default:
                slot[n.id] = slot.at(n.inputs[0]);
        }
    }

    std::vector<ChannelDim> dims;
    std::unordered_map<std::size_t, std::size_t> index;
    auto dim_for = [&](std::size_t s) -> ChannelDim& {
        auto root = find(s);
        auto [it, inserted] = index.try_emplace(root, dims.size());
        if (inserted) dims.emplace_back();
        return dims[it->second];
    };
    auto& input_dim = dim_for(0);
    input_dim.from_input = true;
    input_dim.channels = model.in_channels;

    for (const auto& n : model.nodes) {
        if (n.kind == LayerKind::Conv1d || n.kind == LayerKind::Dense) {
            auto& in = dim_for(slot.at(n.inputs[0]));
            in.consumers.push_back(n.id);
            auto& out = dim_for(slot.at(n.id));
            out.producers.push_back(n.id);
            out.channels = n.c_out;
        } else if (n.kind == LayerKind::BatchNorm) {
            dim_for(slot.at(n.inputs[0])).companions.push_back(n.id);
        }
    }
    return dims;
}

void refresh_coupled_groups(ModelGraph& model) {
    model.coupled_groups.clear();
    for (const auto& d : channel_dims(model)) {
        if (d.producers.size() < 2) continue;
        CoupledGroup g;
        for (int p : d.producers) g.push_back({p, ChannelSide::Out});
        for (int c : d.consumers) g.push_back({c, ChannelSide::In});
        model.coupled_groups.push_back(std::move(g));
    }
}

std::size_t parameter_count(const ModelGraph& model) {
    std::size_t n = 0;
    for (const auto& node : model.nodes)
        for (const auto& [_, t] : node.params) n += t.numel();
    return n;
}

}  // namespace fcos
