#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>

#include "fcos/dataset.hpp"
#include "fcos/model_graph.hpp"
#include "fcos/tensor.hpp"

namespace fcos {

struct ModelCost {
    std::size_t params = 0;
    std::size_t flops = 0;
};

/// Parameters are learnable scalars. FLOPs: 2 per MAC in conv/dense (bias free), and per
/// element 2 for batchnorm, 1 for relu, max-pool (output), global average pool (input) and add.
ModelCost count_params_flops(const ModelGraph& model, std::size_t length);

struct Evaluation {
    double accuracy = 0;
    std::size_t samples = 0;
    std::map<double, double> per_snr;
    std::map<double, std::size_t> per_snr_count;
};

/// Index of the largest logit; the lowest index wins ties.
std::size_t argmax_row(const Tensor& logits, std::size_t row);

/// Accuracy of `logits` [N, K] against labels, overall and per SNR tag.
Evaluation evaluate_logits(const Tensor& logits, std::span<const std::int32_t> labels, std::span<const float> snr_db);

/// Eval-mode accuracy on one split. Throws UsageError when the split is empty.
Evaluation evaluate(const ModelGraph& model, const SignalDataset& ds, Split split);

}  // namespace fcos
