#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "fcos/architectures.hpp"
#include "fcos/executor.hpp"
#include "fcos/fusion.hpp"
#include "fcos/lacd.hpp"
#include "fcos/optimizer.hpp"

using namespace fcos;

namespace {

Tensor random_batch(std::size_t b, std::size_t len) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> n(0, 1);
    std::vector<float> v(b * 2 * len);
    for (auto& x : v) x = n(rng);
    return Tensor::from_values(Shape{b, 2, len}, std::move(v));
}

ModelGraph model(const char* name) { return build_model(default_architecture(name)); }

}  // namespace

static void BM_Forward(benchmark::State& state, const char* arch) {
    const auto g = model(arch);
    const auto x = random_batch(static_cast<std::size_t>(state.range(0)), 128);
    for (auto _ : state) benchmark::DoNotOptimize(predict(g, x));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK_CAPTURE(BM_Forward, plain, "plain-cnn1d")->Arg(1)->Arg(128);
BENCHMARK_CAPTURE(BM_Forward, residual, "residual-cnn1d")->Arg(128);

static void BM_TrainStep(benchmark::State& state) {
    auto g = model("plain-cnn1d");
    const auto x = random_batch(128, 128);
    std::vector<int> y(128);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 4);
    Executor ex(g);
    Optimizer opt;
    for (auto _ : state) {
        Tensor grad;
        const auto logits = ex.forward(x, Mode::Train);
        benchmark::DoNotOptimize(softmax_cross_entropy(logits, y, &grad));
        ex.backward(grad);
        opt.step(g);
    }
    state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_TrainStep);

static void BM_Linkage(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 1);
    std::vector<std::vector<double>> rows(m, std::vector<double>(64 * 8));
    for (auto& r : rows)
        for (auto& v : r) v = n(rng);
    const auto d = distance_matrix(rows, SimilarityMetric::Cosine);
    for (auto _ : state) benchmark::DoNotOptimize(average_linkage_cluster(d, m / 2));
}
BENCHMARK(BM_Linkage)->Arg(16)->Arg(64)->Arg(256);

static void BM_PruneChannels(benchmark::State& state) {
    const auto g = model("plain-cnn1d");
    FusionConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(prune_model_channels(g, cfg));
}
BENCHMARK(BM_PruneChannels);
BENCHMARK_MAIN();
