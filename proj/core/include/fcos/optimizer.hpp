#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fcos/model_graph.hpp"
#include "fcos/tensor.hpp"

namespace fcos {

enum class OptimizerMethod { SgdMomentum, Adam };

std::string to_string(OptimizerMethod m);
OptimizerMethod optimizer_method_from_string(const std::string& name);

struct OptimizerOptions {
    OptimizerMethod method = OptimizerMethod::Adam;
    double lr = 0.001;
    double momentum = 0.9;  // sgd-momentum only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First-order optimizer with per-parameter moment buffers.
///
/// Parameters are matched to moment buffers by position, so every call to `step` must pass
/// the same parameter list in the same order. Gradients are consumed and dropped.
class Optimizer {
public:
    explicit Optimizer(OptimizerOptions opts = {});

    void step(std::span<Tensor* const> params);
    void step(ModelGraph& model);

    std::uint64_t steps() const noexcept { return step_; }
    const OptimizerOptions& options() const noexcept { return opts_; }
    void set_lr(double lr);

private:
    OptimizerOptions opts_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace fcos
