#pragma once

#include <memory>
#include <span>

#include "fcos/model_graph.hpp"
#include "fcos/tensor.hpp"

namespace fcos {

enum class Mode { Train, Eval };

/// Runs forward and reverse passes over a ModelGraph.
///
/// The executor keeps every layer output of the last forward pass; `activation(id)` reads
/// them back, which is how probe features are captured. Train mode uses batch statistics in
/// batchnorm and updates the running buffers; backward is only legal after a Train forward
/// and populates the gradients of every non-frozen parameter.
///
/// Batches are processed sample by sample in a fixed order, so results do not depend on
/// thread counts.
class Executor {
public:
    explicit Executor(ModelGraph& model);
    /// Read-only binding; Train-mode forward throws UsageError.
    explicit Executor(const ModelGraph& model);
    ~Executor();
    Executor(Executor&&) noexcept;
    Executor& operator=(Executor&&) noexcept;

    /// `batch` is [B, C, L] (or [B, F] for graphs with flat input). It is cast to the model dtype.
    Tensor forward(const Tensor& batch, Mode mode);

    /// Output of layer `node_id` from the last forward pass.
    const Tensor& activation(int node_id) const;

    /// Reverse pass seeded with d(loss)/d(output). Overwrites parameter gradients.
    void backward(const Tensor& grad_output);

    /// d(loss)/d(batch) from the last backward pass.
    const Tensor& input_grad() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Mean softmax cross-entropy over the batch. When `grad` is non-null it receives
/// d(loss)/d(logits) with the same shape and dtype as `logits`.
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad = nullptr);

/// Eval-mode forward pass over `batch`, in chunks of `chunk` samples.
Tensor predict(const ModelGraph& model, const Tensor& batch, std::size_t chunk = 256);

}  // namespace fcos
