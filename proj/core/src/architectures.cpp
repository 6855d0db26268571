#include "fcos/architectures.hpp"

#include <cmath>
#include <random>

namespace fcos {

namespace {

class GraphBuilder {
public:
    explicit GraphBuilder(ModelGraph& g) : g_(g) {}

    int conv(const std::string& name, int input, std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
             std::size_t length) {
        auto& n = add(LayerKind::Conv1d, name, {input}, c_in, c_out);
        n.kernel = k;
        n.stride = stride;
        std::tie(n.pad_left, n.pad_right) = same_padding(length, k, stride);
        n.params["weight"] = Tensor({c_out, c_in, k});
        n.params["bias"] = Tensor({c_out});
        return n.id;
    }

    int bn(const std::string& name, int input, std::size_t c) {
        auto& n = add(LayerKind::BatchNorm, name, {input}, c, c);
        for (const char* p : {"gamma", "beta"}) n.params[p] = Tensor({c});
        for (const char* b : {"running_mean", "running_var"}) n.buffers[b] = Tensor({c});
        return n.id;
    }

    int simple(LayerKind kind, const std::string& name, std::vector<int> inputs, std::size_t c) {
        return add(kind, name, std::move(inputs), c, c).id;
    }

    int pool(const std::string& name, int input, std::size_t c, std::size_t k) {
        auto& n = add(LayerKind::MaxPool1d, name, {input}, c, c);
        n.kernel = k;
        n.stride = k;
        return n.id;
    }

    int dense(const std::string& name, int input, std::size_t c_in, std::size_t c_out) {
        auto& n = add(LayerKind::Dense, name, {input}, c_in, c_out);
        n.params["weight"] = Tensor({c_out, c_in});
        n.params["bias"] = Tensor({c_out});
        return n.id;
    }

private:
    LayerNode& add(LayerKind kind, const std::string& name, std::vector<int> inputs, std::size_t c_in, std::size_t c_out) {
        LayerNode n;
        n.id = g_.next_id++;
        n.kind = kind;
        n.name = name;
        n.inputs = std::move(inputs);
        n.c_in = c_in;
        n.c_out = c_out;
        g_.nodes.push_back(std::move(n));
        return g_.nodes.back();
    }

    ModelGraph& g_;
};

ModelGraph build_plain(const ArchitectureSpec& s) {
    ModelGraph g;
    GraphBuilder b(g);
    int prev = kGraphInput;
    std::size_t c = s.in_channels, len = s.in_length;
    for (std::size_t i = 0; i < s.widths.size(); ++i) {
        const auto tag = std::to_string(i + 1);
        const std::size_t w = s.widths[i];
        RemovableUnit u;
        u.kind = UnitKind::PlainLayer;
        u.id = b.conv("conv" + tag, prev, c, w, s.kernel, 1, len);
        u.nodes = {u.id};
        if (s.batchnorm) u.nodes.push_back(b.bn("bn" + tag, u.id, w));
        u.nodes.push_back(b.simple(LayerKind::Relu, "relu" + tag, {u.nodes.back()}, w));
        const int pool = b.pool("pool" + tag, u.nodes.back(), w, 2);
        u.nodes.push_back(pool);
        u.probe_node = pool;
        g.units.push_back(u);
        prev = pool;
        c = w;
        len /= 2;
    }
    const int gap = b.simple(LayerKind::GlobalAvgPool, "gap", {prev}, c);
    g.output = b.dense("fc", gap, c, s.num_classes);
    return g;
}

ModelGraph build_residual(const ArchitectureSpec& s) {
    ModelGraph g;
    GraphBuilder b(g);
    std::size_t len = s.in_length;
    std::size_t c = s.widths.front();
    int prev = b.conv("stem.conv", kGraphInput, s.in_channels, c, s.kernel, 1, len);
    prev = b.bn("stem.bn", prev, c);
    prev = b.simple(LayerKind::Relu, "stem.relu", {prev}, c);

    for (std::size_t st = 0; st < s.widths.size(); ++st) {
        const std::size_t w = s.widths[st];
        for (std::size_t blk = 0; blk < s.blocks_per_stage; ++blk) {
            const std::string tag = "s" + std::to_string(st + 1) + ".b" + std::to_string(blk + 1);
            const std::size_t stride = (st > 0 && blk == 0) ? 2 : 1;
            RemovableUnit u;
            u.kind = UnitKind::ResidualBranch;
            u.stage = static_cast<int>(st);
            u.id = b.conv(tag + ".conv1", prev, c, w, s.kernel, stride, len);
            const std::size_t out_len = (len + stride - 1) / stride;
            const int bn1 = b.bn(tag + ".bn1", u.id, w);
            const int relu1 = b.simple(LayerKind::Relu, tag + ".relu1", {bn1}, w);
            const int conv2 = b.conv(tag + ".conv2", relu1, w, w, s.kernel, 1, out_len);
            const int bn2 = b.bn(tag + ".bn2", conv2, w);
            u.nodes = {u.id, bn1, relu1, conv2, bn2};
            int shortcut = prev;
            if (stride != 1 || c != w) {
                shortcut = b.conv(tag + ".proj", prev, c, w, 1, stride, len);
                shortcut = b.bn(tag + ".proj_bn", shortcut, w);
            }
            u.join_node = b.simple(LayerKind::Add, tag + ".add", {bn2, shortcut}, w);
            u.probe_node = b.simple(LayerKind::Relu, tag + ".relu", {u.join_node}, w);
            g.units.push_back(u);
            prev = u.probe_node;
            c = w;
            len = out_len;
        }
    }
    const int gap = b.simple(LayerKind::GlobalAvgPool, "gap", {prev}, c);
    g.output = b.dense("fc", gap, c, s.num_classes);
    return g;
}

}  // namespace

std::pair<std::size_t, std::size_t> same_padding(std::size_t length, std::size_t kernel, std::size_t stride) {
    const std::size_t out = (length + stride - 1) / stride;
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>((out - 1) * stride + kernel) - static_cast<std::ptrdiff_t>(length);
    const std::size_t t = total > 0 ? static_cast<std::size_t>(total) : 0;
    return {t / 2, t - t / 2};
}

ArchitectureSpec default_architecture(const std::string& name) {
    ArchitectureSpec s;
    s.name = name;
    if (name == "plain-cnn1d") {
        s.widths = {16, 32, 64, 64};
        s.kernel = 8;
    } else if (name == "residual-cnn1d") {
        s.widths = {8, 16, 32};
        s.kernel = 5;
    } else {
        throw ConfigError("unknown architecture '" + name + "' (expected plain-cnn1d or residual-cnn1d)");
    }
    return s;
}

ModelGraph build_model(const ArchitectureSpec& spec) {
    ArchitectureSpec s = spec;
    const auto defaults = default_architecture(s.name);
    if (s.kernel == 0) s.kernel = defaults.kernel;
    if (s.widths.empty()) throw ConfigError("architecture needs at least one width");
    for (auto w : s.widths)
        if (w == 0) throw ConfigError("widths must be positive");
    if (s.in_channels == 0 || s.in_length == 0 || s.num_classes < 2) throw ConfigError("invalid input shape or class count");
    if (s.name == "residual-cnn1d" && s.blocks_per_stage == 0) throw ConfigError("blocks_per_stage must be positive");

    ModelGraph g = s.name == "plain-cnn1d" ? build_plain(s) : build_residual(s);
    g.arch = s.name;
    g.in_channels = s.in_channels;
    g.in_length = s.in_length;
    g.num_classes = s.num_classes;
    g.hyper = {{"widths", s.widths},
               {"kernel", s.kernel},
               {"blocks_per_stage", s.blocks_per_stage},
               {"batchnorm", s.batchnorm},
               {"seed", s.seed}};
    refresh_coupled_groups(g);
    initialize_parameters(g, s.seed);
    validate(g);
    return g;
}

void initialize_parameters(ModelGraph& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& n : model.nodes) {
        if (n.kind == LayerKind::Conv1d || n.kind == LayerKind::Dense) {
            auto& w = n.params.at("weight");
            const double fan_in = static_cast<double>(w.numel() / n.c_out);
            const double bound = std::sqrt(6.0 / fan_in);
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (std::size_t i = 0; i < w.numel(); ++i) w.set_item(i, dist(rng));
            n.params.at("bias").fill(0.0);
        } else if (n.kind == LayerKind::BatchNorm) {
            n.params.at("gamma").fill(1.0);
            n.params.at("beta").fill(0.0);
            n.buffers.at("running_mean").fill(0.0);
            n.buffers.at("running_var").fill(1.0);
        }
    }
}

}  // namespace fcos
