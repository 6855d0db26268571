#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fcos/architectures.hpp"
#include "fcos/executor.hpp"
#include "fcos/optimizer.hpp"
#include "fcos/training.hpp"
#include "oracles.hpp"

using namespace fcos;
using fcos::testing::random_tensor;

namespace {

ModelGraph one_conv(std::size_t ci, std::size_t co, std::size_t k, std::size_t length) {
    ModelGraph g;
    g.in_channels = ci;
    g.in_length = length;
    LayerNode n;
    n.id = g.next_id++;
    n.kind = LayerKind::Conv1d;
    n.inputs = {kGraphInput};
    n.c_in = ci;
    n.c_out = co;
    n.kernel = k;
    n.params["weight"] = Tensor({co, ci, k});
    n.params["bias"] = Tensor({co});
    g.nodes.push_back(n);
    g.output = n.id;
    return g;
}

ModelGraph one_dense(std::size_t ci, std::size_t co, DType dt = DType::F64) {
    ModelGraph g;
    g.in_channels = ci;
    g.in_length = 0;
    g.num_classes = co;
    LayerNode n;
    n.id = g.next_id++;
    n.kind = LayerKind::Dense;
    n.inputs = {kGraphInput};
    n.c_in = ci;
    n.c_out = co;
    n.params["weight"] = Tensor({co, ci}, dt);
    n.params["bias"] = Tensor({co}, dt);
    g.nodes.push_back(n);
    g.output = n.id;
    return g;
}

}  // namespace

TEST(Forward, ZeroKernelGivesZeroOutput) {
    auto g = one_conv(2, 3, 5, 16);
    g.nodes[0].pad_left = 2;
    g.nodes[0].pad_right = 2;
    const auto y = Executor(g).forward(random_tensor({4, 2, 16}, 1, -1, 1, DType::F32), Mode::Eval);
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.item(i), 0.0);
}

TEST(Forward, ScalarConvolutionScales) {
    auto g = one_conv(1, 1, 1, 3);
    g.nodes[0].params["weight"].set_item(0, 2.0);
    const auto y = Executor(g).forward(Tensor::from_values<float>({1, 1, 3}, {1, 2, 3}), Mode::Eval);
    EXPECT_EQ(y.to_doubles(), (std::vector<double>{2, 4, 6}));
}

TEST(Forward, MatchesScalarLoopOracle) {
    for (const char* arch : {"plain-cnn1d", "residual-cnn1d"}) {
        auto spec = default_architecture(arch);
        spec.seed = 11;
        auto model = build_model(spec).cast(DType::F64);
        // non-trivial running statistics so the eval-mode normalization is exercised
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(0.5, 1.5);
        for (auto& n : model.nodes)
            if (n.kind == LayerKind::BatchNorm)
                for (std::size_t c = 0; c < n.c_out; ++c) {
                    n.buffers["running_mean"].set_item(c, u(rng) - 1);
                    n.buffers["running_var"].set_item(c, u(rng));
                    n.params["gamma"].set_item(c, u(rng));
                }
        const auto x = random_tensor({3, 2, 128}, 5);
        const auto y = predict(model, x);
        const auto ref = fcos::testing::reference_forward(model, x);
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(y.item(b * 4 + k), ref[b][k], 1e-10) << arch;
    }
}

TEST(Forward, ChannelMismatchNamesLayer) {
    auto g = one_conv(2, 3, 3, 16);
    try {
        Executor(g).forward(Tensor({1, 3, 16}), Mode::Eval);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_EQ(e.node(), 0);
    }
}

TEST(Forward, NonFiniteActivationIsNumericError) {
    auto g = one_conv(1, 1, 1, 4);
    g.nodes[0].params["weight"].set_item(0, 1.0);
    auto x = Tensor::from_values<float>({1, 1, 4}, {1, NAN, 0, 0});
    try {
        Executor(g).forward(x, Mode::Eval);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_EQ(e.node(), 0);
    }
}

TEST(Backward, RequiresTrainForward) {
    auto g = one_dense(3, 2);
    Executor ex(g);
    EXPECT_THROW(ex.backward(Tensor({1, 2}, DType::F64)), UsageError);
    ex.forward(Tensor({1, 3}, DType::F64), Mode::Eval);
    EXPECT_THROW(ex.backward(Tensor({1, 2}, DType::F64)), UsageError);
}

TEST(Backward, ZeroGradientAtMinimum) {
    auto g = one_dense(3, 1);
    auto& w = g.nodes[0].params["weight"];
    for (std::size_t i = 0; i < 3; ++i) w.set_item(i, 0.5 * (i + 1));
    const auto x = Tensor::from_values<double>({1, 3}, {1, -2, 4});
    Executor ex(g);
    const auto y = ex.forward(x, Mode::Train);
    const double target = y.item(0);  // w.x == y
    ex.backward(Tensor::from_values<double>({1, 1}, {2 * (y.item(0) - target)}));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(w.grad_item(i), 0.0);
}

TEST(Backward, LinearAdjointOfSum) {
    auto g = one_dense(3, 2);
    const auto x = random_tensor({4, 3}, 9);
    Executor ex(g);
    ex.forward(x, Mode::Train);
    Tensor ones({4, 2}, DType::F64);
    ones.fill(1.0);
    ex.backward(ones);
    const auto& w = g.nodes[0].params["weight"];
    for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t c = 0; c < 3; ++c) {
            double s = 0;
            for (std::size_t b = 0; b < 4; ++b) s += x.item(b * 3 + c);
            EXPECT_NEAR(w.grad_item(o * 3 + c), s, 1e-14);
        }
}

TEST(Backward, FrozenLayersGetNoGradient) {
    auto model = build_model(default_architecture("plain-cnn1d"));
    model.nodes[0].frozen = true;
    Executor ex(model);
    const auto y = ex.forward(random_tensor({2, 2, 128}, 1, -1, 1, DType::F32), Mode::Train);
    Tensor g(y.shape());
    g.fill(1.0);
    ex.backward(g);
    EXPECT_FALSE(model.nodes[0].params["weight"].has_grad());
    for (auto* p : model.trainable_parameters()) EXPECT_TRUE(p->has_grad());
}

class GradientCheck : public ::testing::TestWithParam<fcos::testing::GradCase> {};

TEST_P(GradientCheck, CentralDifferencesAgree) {
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        EXPECT_LE(fcos::testing::gradient_check(GetParam(), seed), 1e-4) << "seed " << seed;
}

INSTANTIATE_TEST_SUITE_P(AllLayerKinds, GradientCheck, ::testing::ValuesIn(fcos::testing::kGradCases),
                         [](const auto& info) {
                             std::string n = fcos::testing::name(info.param);
                             for (auto& ch : n)
                                 if (ch == '-') ch = '_';
                             return n;
                         });

TEST(CrossEntropy, UniformLogitsGiveLogK) {
    for (std::size_t k : {2u, 4u, 11u}) {
        Tensor logits({3, k}, DType::F64);
        logits.fill(0.7);
        const std::vector<int> labels{0, 1, 0};
        EXPECT_NEAR(softmax_cross_entropy(logits, labels), std::log(static_cast<double>(k)), 1e-6);
    }
}

TEST(CrossEntropy, NonNegative) {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto logits = random_tensor({6, 5}, s, -30, 30);
        std::vector<int> labels{0, 1, 2, 3, 4, 0};
        EXPECT_GE(softmax_cross_entropy(logits, labels), 0.0);
    }
}

TEST(Optimizer, SgdUpdateArithmetic) {
    auto w = Tensor::from_values<double>({1}, {1.0});
    w.zero_grad();
    w.grad<double>()[0] = 0.5;
    Optimizer opt({.method = OptimizerMethod::SgdMomentum, .lr = 0.1});
    Tensor* p[] = {&w};
    opt.step(p);
    EXPECT_DOUBLE_EQ(w.item(0), 0.95);
    EXPECT_FALSE(w.has_grad());
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
    for (auto method : {OptimizerMethod::SgdMomentum, OptimizerMethod::Adam}) {
        auto w = random_tensor({7}, 4);
        const auto before = w;
        Optimizer opt({.method = method});
        Tensor* p[] = {&w};
        for (int i = 0; i < 3; ++i) {
            w.zero_grad();
            opt.step(p);
        }
        EXPECT_EQ(w, before);
        EXPECT_EQ(opt.steps(), 3u);
    }
}

TEST(Optimizer, MissingGradientIsUsageError) {
    auto w = random_tensor({3}, 1);
    Optimizer opt;
    Tensor* p[] = {&w};
    EXPECT_THROW(opt.step(p), UsageError);
}

TEST(Optimizer, AdamMatchesScalarRecurrenceOnQuadratic) {
    const double target = 0.1, lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    auto w = Tensor::from_values<double>({1}, {0.0});
    Optimizer opt({.method = OptimizerMethod::Adam, .lr = lr});
    Tensor* p[] = {&w};
    double ref = 0, m = 0, v = 0;
    for (int t = 1; t <= 200; ++t) {
        w.zero_grad();
        w.grad<double>()[0] = 2 * (w.item(0) - target);
        opt.step(p);
        const double g = 2 * (ref - target);
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        ref -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
        ASSERT_NEAR(w.item(0), ref, 1e-15);
    }
    EXPECT_LE(std::abs(w.item(0) - target) * 10, target);
}

TEST(Training, DeterministicForSameSeed) {
    DatasetSpec spec;
    spec.classes = {Modulation::BPSK, Modulation::QPSK};
    spec.snr_db = {10, 18};
    spec.per_cell = 20;
    spec.length = 64;
    const auto ds = generate_dataset(spec);
    auto arch = default_architecture("plain-cnn1d");
    arch.widths = {4, 8};
    arch.in_length = 64;
    arch.num_classes = 2;
    TrainOptions opts;
    opts.epochs = 2;
    opts.batch = 16;
    const auto a = train_model(build_model(arch), ds, opts);
    const auto b = train_model(build_model(arch), ds, opts);
    EXPECT_EQ(a.model, b.model);
    opts.seed = 1;
    const auto c = train_model(build_model(arch), ds, opts);
    EXPECT_NE(a.model, c.model);
}
