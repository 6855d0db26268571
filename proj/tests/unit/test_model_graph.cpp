#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "fcos/architectures.hpp"
#include "fcos/executor.hpp"
#include "fcos/metrics.hpp"
#include "oracles.hpp"

using namespace fcos;

namespace {

ModelGraph plain(std::vector<std::size_t> widths, bool bn = true, std::uint64_t seed = 0) {
    auto s = default_architecture("plain-cnn1d");
    s.widths = std::move(widths);
    s.batchnorm = bn;
    s.seed = seed;
    return build_model(s);
}

ModelGraph residual(std::uint64_t seed = 0) {
    auto s = default_architecture("residual-cnn1d");
    s.seed = seed;
    return build_model(s);
}

// Independent walk over the graph: every edge carries the producer's channel count and every
// weight tensor agrees with its layer's declared sides.
bool shapes_consistent(const ModelGraph& g) {
    std::map<int, std::size_t> ch{{kGraphInput, g.in_channels}};
    for (const auto& n : g.nodes) {
        for (int p : n.inputs)
            if (!ch.count(p) || ch[p] != n.c_in) return false;
        if (n.kind == LayerKind::Conv1d && n.params.at("weight").shape() != Shape{n.c_out, n.c_in, n.kernel}) return false;
        if (n.kind == LayerKind::Dense && n.params.at("weight").shape() != Shape{n.c_out, n.c_in}) return false;
        if (n.kind != LayerKind::Conv1d && n.kind != LayerKind::Dense && n.c_in != n.c_out) return false;
        for (const auto& [_, t] : n.params)
            if (t.rank() == 1 && t.dim(0) != n.c_out) return false;
        ch[n.id] = n.c_out;
    }
    return ch.at(g.output) == g.num_classes;
}

bool finite_logits(const ModelGraph& g, std::uint64_t seed = 1) {
    const auto y = predict(g, fcos::testing::random_tensor({4, 2, 128}, seed, -1, 1, DType::F32));
    return y.all_finite() && y.shape() == Shape{4, g.num_classes};
}

std::vector<std::tuple<int, LayerKind, std::size_t, std::size_t, std::vector<int>>> structure(const ModelGraph& g) {
    std::vector<std::tuple<int, LayerKind, std::size_t, std::size_t, std::vector<int>>> s;
    for (const auto& n : g.nodes) s.emplace_back(n.id, n.kind, n.c_in, n.c_out, n.inputs);
    return s;
}

}  // namespace

TEST(BuildModel, PlainParameterCount) {
    // conv and dense terms alone sum to 21,108; the 2 * (16 + 32 + 64) batchnorm affine
    // parameters bring the total to 21,332
    const auto g = plain({16, 32, 64});
    EXPECT_EQ(parameter_count(g), 21332u);
    EXPECT_EQ(parameter_count(plain({16, 32, 64}, false)), 2u * 16 * 8 + 16 + 16 * 32 * 8 + 32 + 32 * 64 * 8 + 64 + 64 * 4 + 4);
    EXPECT_EQ(parameter_count(g), fcos::testing::plain_closed_form({16, 32, 64}, 8, 2, 4, 128).params);
    std::size_t convs = 0;
    for (const auto& n : g.nodes) convs += n.kind == LayerKind::Conv1d;
    EXPECT_EQ(convs, 3u);
    EXPECT_EQ(g.node(g.output).kind, LayerKind::Dense);
    EXPECT_NO_THROW(validate(g));
    EXPECT_TRUE(shapes_consistent(g));
}

TEST(BuildModel, ReferenceModelsMatchClosedForm) {
    const auto p = plain({16, 32, 64, 64});
    const auto pc = fcos::testing::plain_closed_form({16, 32, 64, 64}, 8, 2, 4, 128);
    EXPECT_EQ(count_params_flops(p, 128).params, pc.params);
    EXPECT_EQ(count_params_flops(p, 128).flops, pc.flops);
    const auto r = residual();
    const auto rc = fcos::testing::residual_closed_form({8, 16, 32}, 2, 5, 2, 4, 128);
    EXPECT_EQ(count_params_flops(r, 128).params, rc.params);
    EXPECT_EQ(count_params_flops(r, 128).flops, rc.flops);
}

TEST(BuildModel, ResidualCouplesBlockOutputsWithShortcut) {
    const auto g = residual();
    std::size_t convs = 0;
    for (const auto& n : g.nodes) convs += n.kind == LayerKind::Conv1d;
    EXPECT_GE(convs, 13u);
    ASSERT_EQ(g.coupled_groups.size(), 3u);
    auto id_of = [&](const std::string& name) {
        for (const auto& n : g.nodes)
            if (n.name == name) return n.id;
        return -1;
    };
    const std::vector<std::vector<std::string>> expected{{"stem.conv", "s1.b1.conv2", "s1.b2.conv2"},
                                                         {"s2.b1.proj", "s2.b1.conv2", "s2.b2.conv2"},
                                                         {"s3.b1.proj", "s3.b1.conv2", "s3.b2.conv2"}};
    for (std::size_t st = 0; st < 3; ++st) {
        std::set<int> members;
        for (const auto& ref : g.coupled_groups[st])
            if (ref.side == ChannelSide::Out) members.insert(ref.node);
        for (const auto& name : expected[st]) EXPECT_TRUE(members.count(id_of(name))) << name;
    }
    EXPECT_TRUE(shapes_consistent(g));
}

TEST(BuildModel, UnknownArchitectureIsConfigError) {
    ArchitectureSpec s;
    s.name = "transformer";
    s.widths = {4};
    EXPECT_THROW(build_model(s), ConfigError);
}

TEST(BuildModel, SeededInitialization) {
    EXPECT_EQ(plain({8, 8}, true, 3), plain({8, 8}, true, 3));
    EXPECT_NE(plain({8, 8}, true, 3), plain({8, 8}, true, 4));
}

TEST(Validate, ReportsOffendingLayer) {
    auto g = plain({8, 16});
    auto& conv2 = g.node(g.units[1].id);
    conv2.c_in = 9;
    try {
        validate(g);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_EQ(e.node(), conv2.id);
    }
}

TEST(RemoveLayers, ResidualBlockUsesIdentityPath) {
    const auto g = residual(2);
    const auto copy = g;
    const int unit = g.units[1].id;  // second block of stage 1
    const auto out = remove_layers(g, std::vector<int>{unit});
    EXPECT_EQ(g, copy);
    EXPECT_NO_THROW(validate(out));
    EXPECT_TRUE(shapes_consistent(out));
    EXPECT_LT(parameter_count(out), parameter_count(g));
    EXPECT_FALSE(out.has_unit(unit));
    EXPECT_TRUE(finite_logits(out));
    const auto x = fcos::testing::random_tensor({2, 2, 128}, 4, -1, 1, DType::F32);
    EXPECT_EQ(predict(out, x), predict(out, x));
}

TEST(RemoveLayers, MatchingPlainLayerIsSpliced) {
    const auto g = plain({16, 32, 32, 64});
    const int unit = g.units[2].id;  // c_in = c_out = 32
    const auto out = remove_layers(g, std::vector<int>{unit});
    EXPECT_TRUE(shapes_consistent(out));
    const int consumer = g.units[3].id;
    EXPECT_EQ(out.node(consumer).params, g.node(consumer).params);
    EXPECT_EQ(out.node(consumer).inputs, std::vector<int>{g.units[1].probe_node});
    EXPECT_TRUE(finite_logits(out));
}

TEST(RemoveLayers, WideningPlainLayerRewiresConsumer) {
    const auto g = plain({16, 32, 64});
    const int unit = g.units[1].id;  // 16 -> 32
    const auto out = remove_layers(g, std::vector<int>{unit});
    EXPECT_TRUE(shapes_consistent(out));
    EXPECT_NO_THROW(validate(out));
    EXPECT_EQ(out.node(g.units[2].id).c_in, 16u);
    EXPECT_TRUE(finite_logits(out));
    EXPECT_LT(parameter_count(out), parameter_count(g));
}

TEST(RemoveLayers, NarrowingPlainLayerIsRejected) {
    const auto g = plain({16, 64, 32});
    const int unit = g.units[2].id;  // 64 -> 32
    try {
        remove_layers(g, std::vector<int>{unit});
        FAIL();
    } catch (const RemovalError& e) {
        EXPECT_EQ(e.unit(), unit);
    }
    EXPECT_FALSE(is_removable(g, unit));
    EXPECT_THROW(remove_layers(g, std::vector<int>{12345}), RemovalError);
}

TEST(RemoveLayers, OrderInsensitiveForDisjointUnits) {
    const auto r = residual(1);
    const int a = r.units[1].id, b = r.units[5].id;
    const auto both = remove_layers(r, std::vector<int>{a, b});
    const auto ab = remove_layers(remove_layers(r, std::vector<int>{a}), std::vector<int>{b});
    const auto ba = remove_layers(remove_layers(r, std::vector<int>{b}), std::vector<int>{a});
    EXPECT_EQ(structure(both), structure(ab));
    EXPECT_EQ(structure(both), structure(ba));
    EXPECT_EQ(both, ab);

    const auto p = plain({16, 32, 32, 32, 64});
    const int c = p.units[2].id, d = p.units[3].id;
    EXPECT_EQ(structure(remove_layers(p, std::vector<int>{c, d})),
              structure(remove_layers(remove_layers(p, std::vector<int>{d}), std::vector<int>{c})));
}

TEST(RemoveLayers, EveryBuiltModelStaysValid) {
    const auto r = residual(5);
    for (const auto& u : r.units) {
        const auto out = remove_layers(r, std::vector<int>{u.id});
        EXPECT_TRUE(shapes_consistent(out)) << u.id;
        EXPECT_TRUE(finite_logits(out)) << u.id;
    }
}
