#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcos/tensor.hpp"

namespace fcos {

enum class LayerKind : std::uint8_t { Conv1d, BatchNorm, Relu, MaxPool1d, GlobalAvgPool, Dense, Add };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// Pseudo node id standing for the graph input in predecessor lists.
inline constexpr int kGraphInput = -1;

/// One layer of a model graph.
///
/// Conv1d: params weight [c_out, c_in, kernel], bias [c_out].
/// Dense: params weight [c_out, c_in], bias [c_out].
/// BatchNorm: params gamma, beta; buffers running_mean, running_var; all [c_out], c_in == c_out.
/// MaxPool1d uses kernel/stride; the remaining kinds carry no parameters.
struct LayerNode {
    int id = -1;
    LayerKind kind = LayerKind::Relu;
    std::string name;
    std::vector<int> inputs;
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> buffers;
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t pad_left = 0;
    std::size_t pad_right = 0;
    bool frozen = false;

    friend bool operator==(const LayerNode&, const LayerNode&) = default;
};

enum class UnitKind : std::uint8_t { PlainLayer, ResidualBranch };

/// A group of nodes that layer pruning removes as a whole.
///
/// PlainLayer units are conv+bn+relu+pool chains; removal splices the chain out.
/// ResidualBranch units are the branch of a residual block; removal leaves the shortcut.
struct RemovableUnit {
    int id = -1;  // id of the unit's leading conv node
    UnitKind kind = UnitKind::PlainLayer;
    int stage = 0;
    std::vector<int> nodes;
    int probe_node = -1;  // node whose output is the unit's probe point
    int join_node = -1;   // residual add (ResidualBranch only)

    friend bool operator==(const RemovableUnit&, const RemovableUnit&) = default;
};

enum class ChannelSide : std::uint8_t { In, Out };

struct ChannelRef {
    int node = -1;
    ChannelSide side = ChannelSide::Out;
    friend bool operator==(const ChannelRef&, const ChannelRef&) = default;
};

using CoupledGroup = std::vector<ChannelRef>;

/// Ordered layer DAG. `nodes` is stored in topological order.
struct ModelGraph {
    std::string arch;
    std::size_t in_channels = 0;
    std::size_t in_length = 0;  // 0 for rank-2 (feature vector) inputs
    std::size_t num_classes = 0;
    std::vector<LayerNode> nodes;
    int output = -1;
    std::vector<RemovableUnit> units;
    std::vector<CoupledGroup> coupled_groups;
    nlohmann::json hyper = nlohmann::json::object();
    int next_id = 0;

    bool has_node(int id) const;
    const LayerNode& node(int id) const;
    LayerNode& node(int id);
    std::size_t index_of(int id) const;

    bool has_unit(int id) const;
    const RemovableUnit& unit(int id) const;

    DType dtype() const;
    ModelGraph cast(DType dtype) const;

    /// Learnable tensors of non-frozen nodes, in node order then parameter-name order.
    std::vector<Tensor*> trainable_parameters();
    void set_frozen(bool frozen);

    friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

struct NodeShape {
    std::size_t channels = 0;
    std::size_t length = 0;  // 0 for rank-2 outputs
};

/// Per-node output shapes (indexed like `model.nodes`) for an input of `length` samples.
std::vector<NodeShape> infer_shapes(const ModelGraph& model, std::size_t length);

/// Throws ShapeError naming the first inconsistent layer.
void validate(const ModelGraph& model);
bool is_valid(const ModelGraph& model, std::string* why = nullptr);

/// A set of layer sides that must share one channel count.
///
/// Producers are conv/dense nodes writing the dimension, companions are batchnorm nodes
/// normalizing it, consumers are conv/dense nodes reading it.
struct ChannelDim {
    std::size_t channels = 0;
    std::vector<int> producers;
    std::vector<int> companions;
    std::vector<int> consumers;
    bool from_input = false;

    bool prunable(const ModelGraph& model) const;
};

/// Channel dimensions in order of their first producer.
std::vector<ChannelDim> channel_dims(const ModelGraph& model);

/// Recomputes `coupled_groups` from topology: every dimension written by more than one producer.
void refresh_coupled_groups(ModelGraph& model);

/// Learnable scalar count (weights, biases, BN affine).
std::size_t parameter_count(const ModelGraph& model);

/// Rewiring options used when a plain layer with c_in < c_out is spliced out.
struct RewireOptions {
    bool euclidean = false;
    bool l1_weighted = false;
};

/// Returns a copy of `model` without the given removable units (ids of `model.units`).
/// Units are removed in ascending id order. Throws RemovalError on an unknown or
/// non-rewirable unit.
ModelGraph remove_layers(const ModelGraph& model, std::span<const int> unit_ids, const RewireOptions& opts = {});

/// Whether `remove_layers(model, {unit_id})` would succeed.
bool is_removable(const ModelGraph& model, int unit_id);

}  // namespace fcos
