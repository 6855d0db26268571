#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "fcos/architectures.hpp"
#include "fcos/baselines.hpp"
#include "fcos/checkpoint.hpp"
#include "fcos/container.hpp"
#include "fcos/fusion.hpp"
#include "fcos/hash.hpp"
#include "fcos/metrics.hpp"
#include "oracles.hpp"

using namespace fcos;

namespace {

std::string model_digest(const ModelGraph& g) { return sha256_hex(encode_container(checkpoint_container(g))); }

ModelGraph plain() { return build_model(default_architecture("plain-cnn1d")); }
ModelGraph residual() { return build_model(default_architecture("residual-cnn1d")); }

const LayerNode& first_conv(const ModelGraph& g) {
    for (const auto& n : g.nodes)
        if (n.kind == LayerKind::Conv1d) return n;
    throw std::runtime_error("no conv");
}

ProbeProfile profile_of(const ModelGraph& g, std::vector<double> acc) {
    ProbeProfile p;
    for (const auto& u : g.units) {
        p.units.push_back(u.id);
        p.nodes.push_back(u.probe_node);
    }
    p.acc = std::move(acc);
    return p;
}

}  // namespace

TEST(L1Channel, TopNormsExample) {
    const std::vector<double> norms{5, 1, 3, 2};
    EXPECT_EQ(top_l1_channels(norms, 2), (std::vector<std::size_t>{0, 2}));
    const std::vector<double> tied{1, 2, 2, 2};
    EXPECT_EQ(top_l1_channels(tied, 2), (std::vector<std::size_t>{1, 2}));
}

TEST(L1Channel, KeepAllLeavesModelUnchanged) {
    for (const auto& g : {plain(), residual()}) EXPECT_EQ(model_digest(l1_channel_prune(g, 1.0)), model_digest(g));
}

TEST(L1Channel, KeepsLargestFilters) {
    const auto g = plain();
    const auto out = l1_channel_prune(g, 0.5);
    const auto& before = first_conv(g).params.at("weight");
    const auto& after = first_conv(out).params.at("weight");
    const auto rows = channel_vectors(before, ChannelAxis::Out);
    std::vector<double> norms;
    for (const auto& r : rows) {
        double s = 0;
        for (double v : r) s += std::abs(v);
        norms.push_back(s);
    }
    const auto keep = top_l1_channels(norms, 8);
    const auto kept_rows = channel_vectors(after, ChannelAxis::Out);
    ASSERT_EQ(kept_rows.size(), keep.size());
    for (std::size_t j = 0; j < keep.size(); ++j) EXPECT_EQ(kept_rows[j], rows[keep[j]]);
}

TEST(L1Channel, HalfWidthMatchesClosedForm) {
    const auto out = l1_channel_prune(plain(), 0.5);
    const auto want = fcos::testing::plain_closed_form({8, 16, 32, 32}, 8, 2, 4, 128);
    EXPECT_EQ(count_params_flops(out, 128).params, want.params);
    EXPECT_EQ(count_params_flops(out, 128).flops, want.flops);
    const auto r = l1_channel_prune(residual(), 0.5);
    const auto rwant = fcos::testing::residual_closed_form({4, 8, 16}, 2, 5, 2, 4, 128);
    EXPECT_EQ(count_params_flops(r, 128).params, rwant.params);
}

TEST(L1Channel, InvalidRatio) {
    EXPECT_THROW(l1_channel_prune(plain(), 0.0), ConfigError);
    EXPECT_THROW(l1_channel_prune(plain(), 1.5), ConfigError);
}

TEST(RandomLayer, ZeroCountIsIdentity) {
    const auto g = residual();
    EXPECT_EQ(model_digest(random_layer_prune(g, 0, 7)), model_digest(g));
}

TEST(RandomLayer, SeedDeterminesChoice) {
    const auto g = residual();
    for (std::uint64_t s = 0; s < 20; ++s) EXPECT_EQ(random_layer_choice(g, 2, s), random_layer_choice(g, 2, s));
    std::set<std::vector<int>> seen;
    for (std::uint64_t s = 0; s < 20; ++s) seen.insert(random_layer_choice(g, 2, s));
    EXPECT_GT(seen.size(), 1u);
}

TEST(RandomLayer, UniformOverUnits) {
    const auto g = residual();
    ASSERT_EQ(g.units.size(), 6u);
    std::map<int, int> hits;
    const int trials = 1000;
    for (int s = 0; s < trials; ++s) hits[random_layer_choice(g, 1, static_cast<std::uint64_t>(s)).at(0)]++;
    ASSERT_EQ(hits.size(), 6u);
    for (const auto& [_, h] : hits) EXPECT_NEAR(h / double(trials), 1.0 / 6.0, 0.05);
}

TEST(RandomLayer, CountTooLarge) {
    EXPECT_THROW(random_layer_choice(residual(), 7, 0), ConfigError);
    const auto all = random_layer_choice(residual(), 6, 0);
    EXPECT_EQ(all.size(), 6u);
}

TEST(ProbeLayer, SmallestGainExample) {
    const auto g = plain();
    ASSERT_EQ(g.units.size(), 4u);
    const auto p = profile_of(g, {0.2, 0.3, 0.6, 0.601, 0.7});
    // gains 0.1, 0.3, 0.001, 0.099: the unit behind acc index 3
    EXPECT_EQ(probe_layer_choice(g, p, 1), (std::vector<int>{g.units[2].id}));
    EXPECT_EQ(probe_layer_choice(g, p, 2), (std::vector<int>{g.units[2].id, g.units[3].id}));
}

TEST(ProbeLayer, FourPointExample) {
    auto g = residual();
    const auto p = profile_of(g, {0.3, 0.6, 0.601, 0.7, 0.8, 0.9, 0.95});
    EXPECT_EQ(probe_layer_choice(g, p, 1), (std::vector<int>{p.units[1]}));
}

TEST(ProbeLayer, LargerCountExtendsSmaller) {
    const auto g = residual();
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto acc_t = fcos::testing::random_tensor({7}, s, 0, 1);
        std::vector<double> acc;
        for (std::size_t i = 0; i < 7; ++i) acc.push_back(acc_t.item(i));
        const auto p = profile_of(g, acc);
        const auto one = probe_layer_choice(g, p, 1);
        const auto two = probe_layer_choice(g, p, 2);
        const auto three = probe_layer_choice(g, p, 3);
        EXPECT_TRUE(std::includes(two.begin(), two.end(), one.begin(), one.end()));
        EXPECT_TRUE(std::includes(three.begin(), three.end(), two.begin(), two.end()));
    }
}

TEST(ProbeLayer, StageGuardRejectsEmptyingAStage) {
    const auto g = residual();
    const auto p = profile_of(g, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7});
    EXPECT_EQ(probe_layer_choice(g, p, 3).size(), 3u);
    EXPECT_THROW(probe_layer_choice(g, p, 4), ConfigError);
    EXPECT_THROW(probe_layer_choice(g, p, 6), ConfigError);
    const auto q = plain();
    EXPECT_THROW(probe_layer_choice(q, profile_of(q, {0.1, 0.2, 0.3, 0.4, 0.5}), 4), ConfigError);
}

TEST(ProbeLayer, ProfileMismatchIsUsageError) {
    const auto g = residual();
    EXPECT_THROW(probe_layer_choice(g, profile_of(g, {0.1, 0.2}), 1), UsageError);
}

TEST(Baseline, MethodNames) {
    for (auto m : {BaselineMethod::L1Channel, BaselineMethod::RandomLayer, BaselineMethod::ProbeLayer})
        EXPECT_EQ(baseline_method_from_string(to_string(m)), m);
    EXPECT_THROW(baseline_method_from_string("magnitude"), ConfigError);
}
