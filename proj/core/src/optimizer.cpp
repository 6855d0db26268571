#include "fcos/optimizer.hpp"

#include <cmath>

namespace fcos {

std::string to_string(OptimizerMethod m) { return m == OptimizerMethod::Adam ? "adam" : "sgd-momentum"; }

OptimizerMethod optimizer_method_from_string(const std::string& name) {
    if (name == "adam") return OptimizerMethod::Adam;
    if (name == "sgd-momentum" || name == "sgd") return OptimizerMethod::SgdMomentum;
    throw ConfigError("unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerOptions opts) : opts_(opts) {
    if (!(opts_.lr > 0)) throw ConfigError("learning rate must be positive");
}

void Optimizer::set_lr(double lr) {
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    opts_.lr = lr;
}

void Optimizer::step(std::span<Tensor* const> params) {
    if (m_.empty()) {
        m_.resize(params.size());
        if (opts_.method == OptimizerMethod::Adam) v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->numel(), 0.0);
            if (!v_.empty()) v_[i].assign(params[i]->numel(), 0.0);
        }
    }
    if (params.size() != m_.size()) throw UsageError("optimizer parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->numel() != m_[i].size()) throw UsageError("moment buffer does not match parameter " + std::to_string(i));
        if (!params[i]->has_grad()) throw UsageError("parameter " + std::to_string(i) + " has no gradient");
    }

    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        dispatch_dtype(p.dtype(), [&]<class T>() {
            auto w = p.values<T>();
            auto g = p.grad<T>();
            auto& m = m_[i];
            if (opts_.method == OptimizerMethod::SgdMomentum) {
                for (std::size_t j = 0; j < w.size(); ++j) {
                    m[j] = opts_.momentum * m[j] + g[j];
                    w[j] = static_cast<T>(w[j] - opts_.lr * m[j]);
                }
            } else {
                auto& v = v_[i];
                for (std::size_t j = 0; j < w.size(); ++j) {
                    const double gj = g[j];
                    m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
                    v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
                    const double mhat = m[j] / bc1;
                    const double vhat = v[j] / bc2;
                    w[j] = static_cast<T>(w[j] - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
                }
            }
        });
        p.drop_grad();
    }
}

void Optimizer::step(ModelGraph& model) {
    auto params = model.trainable_parameters();
    step(params);
}

}  // namespace fcos
