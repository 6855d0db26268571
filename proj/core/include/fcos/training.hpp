#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fcos/dataset.hpp"
#include "fcos/model_graph.hpp"
#include "fcos/optimizer.hpp"
#include "fcos/report.hpp"

namespace fcos {

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double loss = 0;
    double val_acc = 0;
    double test_acc = 0;
};

struct TrainOptions {
    std::size_t epochs = 30;
    std::size_t batch = 128;
    OptimizerOptions optimizer;
    std::uint64_t seed = 0;
    /// Keep the parameters of the epoch with the best validation accuracy (earliest on ties).
    bool select_best = true;
    std::string phase = "train";  // tag for accuracy-curve rows
    /// Where the last good model is saved when training hits a non-finite value.
    std::filesystem::path abort_checkpoint;
    std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
    ModelGraph model;
    std::size_t best_epoch = 0;
    double best_val_acc = 0;
    std::vector<EpochStats> history;
    std::vector<CurvePoint> curve;
};

/// Mini-batch training on the train split with softmax cross-entropy. Each epoch shuffles
/// the train indices with a generator seeded from (seed, epoch) and records val and test
/// accuracy.
TrainResult train_model(ModelGraph model, const SignalDataset& ds, const TrainOptions& opts);

}  // namespace fcos
