#include "fcos/executor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_map>

#include <Eigen/Core>

namespace fcos {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct Dims3 {
    std::size_t batch, channels, length;  // length 1 for rank-2 tensors
};

Dims3 dims_of(const Tensor& t) {
    if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
    if (t.rank() == 2) return {t.dim(0), t.dim(1), 1};
    throw ShapeError(-1, "expected a rank-2 or rank-3 tensor, got " + shape_to_string(t.shape()));
}

// Scratch state kept between forward and backward for one layer.
struct NodeCache {
    Tensor col;                       // conv: im2col matrix [c_in*k, B*L_out]
    Tensor xhat;                      // batchnorm: normalized input
    std::vector<double> inv_std;      // batchnorm: per-channel 1/sqrt(var+eps)
    std::vector<std::uint32_t> arg;   // maxpool: argmax positions
    bool batch_stats = false;
};

template <class T>
void conv_forward(const LayerNode& n, const Tensor& x, Tensor& out, NodeCache& cache) {
    const auto [B, Cin, Lin] = dims_of(x);
    const std::size_t K = n.kernel, S = n.stride, PL = n.pad_left;
    const std::size_t Lout = (Lin + n.pad_left + n.pad_right - K) / S + 1;
    const std::size_t CK = Cin * K, BL = B * Lout, Cout = n.c_out;

    cache.col = Tensor({CK, BL}, dtype_of<T>());
    auto col = cache.col.values<T>();
    auto xv = x.values<T>();
    for (std::size_t ci = 0; ci < Cin; ++ci) {
        for (std::size_t k = 0; k < K; ++k) {
            T* row = col.data() + (ci * K + k) * BL;
            for (std::size_t b = 0; b < B; ++b) {
                const T* src = xv.data() + (b * Cin + ci) * Lin;
                T* dst = row + b * Lout;
                for (std::size_t t = 0; t < Lout; ++t) {
                    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t * S + k) - static_cast<std::ptrdiff_t>(PL);
                    dst[t] = (p >= 0 && p < static_cast<std::ptrdiff_t>(Lin)) ? src[p] : T(0);
                }
            }
        }
    }

    CMapMat<T> W(n.params.at("weight").values<T>().data(), Cout, CK);
    CMapMat<T> C(col.data(), CK, BL);
    RowMat<T> Y(Cout, BL);
    Y.noalias() = W * C;

    out = Tensor({B, Cout, Lout}, dtype_of<T>());
    auto ov = out.values<T>();
    auto bias = n.params.at("bias").values<T>();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Cout; ++co) {
            const T* src = Y.data() + co * BL + b * Lout;
            T* dst = ov.data() + (b * Cout + co) * Lout;
            const T bc = bias[co];
            for (std::size_t t = 0; t < Lout; ++t) dst[t] = src[t] + bc;
        }
}

template <class T>
void conv_backward(LayerNode& n, const Tensor& x, const Tensor& gout, const NodeCache& cache, std::span<T> gx) {
    const auto [B, Cin, Lin] = dims_of(x);
    const std::size_t K = n.kernel, S = n.stride, PL = n.pad_left;
    const std::size_t Cout = n.c_out, Lout = gout.dim(2);
    const std::size_t CK = Cin * K, BL = B * Lout;

    RowMat<T> dY(Cout, BL);
    auto gv = gout.values<T>();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Cout; ++co)
            std::memcpy(dY.data() + co * BL + b * Lout, gv.data() + (b * Cout + co) * Lout, Lout * sizeof(T));

    CMapMat<T> C(cache.col.values<T>().data(), CK, BL);
    auto& weight = n.params.at("weight");
    CMapMat<T> W(weight.values<T>().data(), Cout, CK);

    if (!n.frozen) {
        auto& bias = n.params.at("bias");
        MapMat<T> dW(weight.grad<T>().data(), Cout, CK);
        dW.noalias() += dY * C.transpose();
        auto db = bias.grad<T>();
        for (std::size_t co = 0; co < Cout; ++co) {
            T s = 0;
            const T* row = dY.data() + co * BL;
            for (std::size_t j = 0; j < BL; ++j) s += row[j];
            db[co] += s;
        }
    }

    RowMat<T> dC(CK, BL);
    dC.noalias() = W.transpose() * dY;
    for (std::size_t ci = 0; ci < Cin; ++ci)
        for (std::size_t k = 0; k < K; ++k) {
            const T* row = dC.data() + (ci * K + k) * BL;
            for (std::size_t b = 0; b < B; ++b) {
                T* dst = gx.data() + (b * Cin + ci) * Lin;
                const T* src = row + b * Lout;
                for (std::size_t t = 0; t < Lout; ++t) {
                    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t * S + k) - static_cast<std::ptrdiff_t>(PL);
                    if (p >= 0 && p < static_cast<std::ptrdiff_t>(Lin)) dst[p] += src[t];
                }
            }
        }
}

template <class T>
void dense_forward(const LayerNode& n, const Tensor& x, Tensor& out) {
    const std::size_t B = x.dim(0), In = n.c_in, Out = n.c_out;
    CMapMat<T> X(x.values<T>().data(), B, In);
    CMapMat<T> W(n.params.at("weight").values<T>().data(), Out, In);
    out = Tensor({B, Out}, dtype_of<T>());
    MapMat<T> Y(out.values<T>().data(), B, Out);
    Y.noalias() = X * W.transpose();
    auto bias = n.params.at("bias").values<T>();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Out; ++o) Y(b, o) += bias[o];
}

template <class T>
void dense_backward(LayerNode& n, const Tensor& x, const Tensor& gout, std::span<T> gx) {
    const std::size_t B = x.dim(0), In = n.c_in, Out = n.c_out;
    CMapMat<T> X(x.values<T>().data(), B, In);
    CMapMat<T> dY(gout.values<T>().data(), B, Out);
    auto& weight = n.params.at("weight");
    CMapMat<T> W(weight.values<T>().data(), Out, In);
    if (!n.frozen) {
        MapMat<T> dW(weight.grad<T>().data(), Out, In);
        dW.noalias() += dY.transpose() * X;
        auto db = n.params.at("bias").grad<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < Out; ++o) db[o] += dY(b, o);
    }
    MapMat<T> dX(gx.data(), B, In);
    dX.noalias() += dY * W;
}

template <class T>
void bn_forward(LayerNode& n, const Tensor& x, Tensor& out, NodeCache& cache, bool train) {
    const auto [B, C, L] = dims_of(x);
    const std::size_t N = B * L;
    auto xv = x.values<T>();
    auto gamma = n.params.at("gamma").values<T>();
    auto beta = n.params.at("beta").values<T>();
    auto rmean = n.buffers.at("running_mean").values<T>();
    auto rvar = n.buffers.at("running_var").values<T>();

    out = Tensor(x.shape(), dtype_of<T>());
    auto ov = out.values<T>();
    cache.xhat = Tensor(x.shape(), dtype_of<T>());
    auto xh = cache.xhat.values<T>();
    cache.inv_std.assign(C, 0.0);
    cache.batch_stats = train;

    for (std::size_t c = 0; c < C; ++c) {
        double mean, var;
        if (train) {
            double s = 0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < L; ++t) s += xv[(b * C + c) * L + t];
            mean = s / static_cast<double>(N);
            double ss = 0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < L; ++t) {
                    const double d = xv[(b * C + c) * L + t] - mean;
                    ss += d * d;
                }
            var = ss / static_cast<double>(N);
            const double unbiased = N > 1 ? ss / static_cast<double>(N - 1) : var;
            rmean[c] = static_cast<T>((1.0 - kBnMomentum) * rmean[c] + kBnMomentum * mean);
            rvar[c] = static_cast<T>((1.0 - kBnMomentum) * rvar[c] + kBnMomentum * unbiased);
        } else {
            mean = rmean[c];
            var = rvar[c];
        }
        const double inv = 1.0 / std::sqrt(var + kBnEps);
        cache.inv_std[c] = inv;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < L; ++t) {
                const std::size_t i = (b * C + c) * L + t;
                const T h = static_cast<T>((xv[i] - mean) * inv);
                xh[i] = h;
                ov[i] = gamma[c] * h + beta[c];
            }
    }
}

template <class T>
void bn_backward(LayerNode& n, const Tensor& x, const Tensor& gout, const NodeCache& cache, std::span<T> gx) {
    const auto [B, C, L] = dims_of(x);
    const double N = static_cast<double>(B * L);
    auto gv = gout.values<T>();
    auto xh = cache.xhat.values<T>();
    auto gamma = n.params.at("gamma").values<T>();
    std::span<T> dgamma, dbeta;
    if (!n.frozen) {
        dgamma = n.params.at("gamma").grad<T>();
        dbeta = n.params.at("beta").grad<T>();
    }
    for (std::size_t c = 0; c < C; ++c) {
        double sum_dy = 0, sum_dy_xh = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < L; ++t) {
                const std::size_t i = (b * C + c) * L + t;
                sum_dy += gv[i];
                sum_dy_xh += static_cast<double>(gv[i]) * xh[i];
            }
        if (!n.frozen) {
            dgamma[c] += static_cast<T>(sum_dy_xh);
            dbeta[c] += static_cast<T>(sum_dy);
        }
        const double g = gamma[c] * cache.inv_std[c];
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < L; ++t) {
                const std::size_t i = (b * C + c) * L + t;
                if (cache.batch_stats)
                    gx[i] += static_cast<T>(g * (gv[i] - sum_dy / N - xh[i] * sum_dy_xh / N));
                else
                    gx[i] += static_cast<T>(g * gv[i]);
            }
    }
}

template <class T>
void maxpool_forward(const LayerNode& n, const Tensor& x, Tensor& out, NodeCache& cache) {
    const auto [B, C, L] = dims_of(x);
    const std::size_t K = n.kernel, S = n.stride, Lout = (L - K) / S + 1;
    out = Tensor({B, C, Lout}, dtype_of<T>());
    cache.arg.assign(B * C * Lout, 0);
    auto xv = x.values<T>();
    auto ov = out.values<T>();
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t t = 0; t < Lout; ++t) {
            std::size_t best = t * S;
            T v = xv[bc * L + best];
            for (std::size_t k = 1; k < K; ++k) {
                const std::size_t p = t * S + k;
                if (xv[bc * L + p] > v) {
                    v = xv[bc * L + p];
                    best = p;
                }
            }
            ov[bc * Lout + t] = v;
            cache.arg[bc * Lout + t] = static_cast<std::uint32_t>(best);
        }
}

template <class T>
struct Engine {
    ModelGraph& model;
    std::unordered_map<int, std::size_t>& pos;
    std::vector<Tensor>& outputs;
    std::vector<NodeCache>& caches;
    Tensor& input;

    const Tensor& in_of(int pred) const { return pred == kGraphInput ? input : outputs[pos.at(pred)]; }

    void forward(bool train) {
        for (std::size_t i = 0; i < model.nodes.size(); ++i) {
            auto& n = model.nodes[i];
            const Tensor& x = in_of(n.inputs[0]);
            const auto d = dims_of(x);
            if (d.channels != n.c_in)
                throw ShapeError(n.id, std::string(to_string(n.kind)) + " expects " + std::to_string(n.c_in) +
                                           " input channels, got " + std::to_string(d.channels));
            Tensor& out = outputs[i];
            switch (n.kind) {
                case LayerKind::Conv1d:
                    if (x.rank() != 3) throw ShapeError(n.id, "conv1d expects [B, C, L]");
                    if (d.length + n.pad_left + n.pad_right < n.kernel) throw ShapeError(n.id, "input shorter than kernel");
                    conv_forward<T>(n, x, out, caches[i]);
                    break;
                case LayerKind::Dense:
                    if (x.rank() != 2) throw ShapeError(n.id, "dense expects [B, C]");
                    dense_forward<T>(n, x, out);
                    break;
                case LayerKind::BatchNorm:
                    bn_forward<T>(n, x, out, caches[i], train);
                    break;
                case LayerKind::Relu: {
                    out = Tensor(x.shape(), dtype_of<T>());
                    auto xv = x.values<T>();
                    auto ov = out.values<T>();
                    for (std::size_t j = 0; j < xv.size(); ++j) ov[j] = xv[j] > T(0) ? xv[j] : T(0);
                    break;
                }
                case LayerKind::MaxPool1d:
                    if (x.rank() != 3 || d.length < n.kernel) throw ShapeError(n.id, "maxpool1d input too short");
                    maxpool_forward<T>(n, x, out, caches[i]);
                    break;
                case LayerKind::GlobalAvgPool: {
                    if (x.rank() != 3) throw ShapeError(n.id, "global average pool expects [B, C, L]");
                    out = Tensor({d.batch, d.channels}, dtype_of<T>());
                    auto xv = x.values<T>();
                    auto ov = out.values<T>();
                    for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
                        double s = 0;
                        for (std::size_t t = 0; t < d.length; ++t) s += xv[bc * d.length + t];
                        ov[bc] = static_cast<T>(s / static_cast<double>(d.length));
                    }
                    break;
                }
                case LayerKind::Add: {
                    out = x;
                    auto ov = out.values<T>();
                    for (std::size_t k = 1; k < n.inputs.size(); ++k) {
                        const Tensor& y = in_of(n.inputs[k]);
                        if (y.shape() != x.shape()) throw ShapeError(n.id, "add inputs disagree in shape");
                        auto yv = y.values<T>();
                        for (std::size_t j = 0; j < ov.size(); ++j) ov[j] += yv[j];
                    }
                    break;
                }
            }
            if (!out.all_finite()) throw NumericError(n.id, std::string(to_string(n.kind)) + " output");
        }
    }

    void backward(const Tensor& grad_output, std::vector<Tensor>& grads, Tensor& input_grad) {
        for (auto& n : model.nodes)
            for (auto& [_, t] : n.params) {
                if (n.frozen)
                    t.drop_grad();
                else
                    t.zero_grad();
            }
        for (std::size_t i = 0; i < model.nodes.size(); ++i) grads[i] = Tensor(outputs[i].shape(), dtype_of<T>());
        input_grad = Tensor(input.shape(), dtype_of<T>());
        {
            auto g = grads[pos.at(model.output)].template values<T>();
            auto src = grad_output.values<T>();
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
        }
        auto grad_of = [&](int pred) -> std::span<T> {
            return pred == kGraphInput ? input_grad.values<T>() : grads[pos.at(pred)].template values<T>();
        };

        for (std::size_t ii = model.nodes.size(); ii-- > 0;) {
            auto& n = model.nodes[ii];
            const Tensor& gout = grads[ii];
            const Tensor& x = in_of(n.inputs[0]);
            switch (n.kind) {
                case LayerKind::Conv1d:
                    conv_backward<T>(n, x, gout, caches[ii], grad_of(n.inputs[0]));
                    break;
                case LayerKind::Dense:
                    dense_backward<T>(n, x, gout, grad_of(n.inputs[0]));
                    break;
                case LayerKind::BatchNorm:
                    bn_backward<T>(n, x, gout, caches[ii], grad_of(n.inputs[0]));
                    break;
                case LayerKind::Relu: {
                    auto gx = grad_of(n.inputs[0]);
                    auto gv = gout.values<T>();
                    auto xv = x.values<T>();
                    for (std::size_t j = 0; j < gv.size(); ++j)
                        if (xv[j] > T(0)) gx[j] += gv[j];
                    break;
                }
                case LayerKind::MaxPool1d: {
                    auto gx = grad_of(n.inputs[0]);
                    auto gv = gout.values<T>();
                    const std::size_t L = x.dim(2), Lout = gout.dim(2);
                    for (std::size_t j = 0; j < gv.size(); ++j) {
                        const std::size_t bc = j / Lout;
                        gx[bc * L + caches[ii].arg[j]] += gv[j];
                    }
                    break;
                }
                case LayerKind::GlobalAvgPool: {
                    auto gx = grad_of(n.inputs[0]);
                    auto gv = gout.values<T>();
                    const std::size_t L = x.dim(2);
                    const T scale = T(1) / static_cast<T>(L);
                    for (std::size_t bc = 0; bc < gv.size(); ++bc)
                        for (std::size_t t = 0; t < L; ++t) gx[bc * L + t] += gv[bc] * scale;
                    break;
                }
                case LayerKind::Add: {
                    auto gv = gout.values<T>();
                    for (int p : n.inputs) {
                        auto gx = grad_of(p);
                        for (std::size_t j = 0; j < gv.size(); ++j) gx[j] += gv[j];
                    }
                    break;
                }
            }
        }
        for (auto& n : model.nodes) {
            if (n.frozen) continue;
            for (auto& [name, t] : n.params)
                if (!t.has_grad() || !std::all_of(t.template grad<T>().begin(), t.template grad<T>().end(), [](T v) { return std::isfinite(v); }))
                    throw NumericError(n.id, "gradient of '" + name + "'");
        }
    }
};

}  // namespace

struct Executor::Impl {
    ModelGraph* model = nullptr;
    bool read_only = false;
    std::unordered_map<int, std::size_t> pos;
    std::vector<Tensor> outputs;
    std::vector<Tensor> grads;
    std::vector<NodeCache> caches;
    Tensor input;
    Tensor input_grad;
    bool can_backward = false;
    bool has_input_grad = false;

    void index() {
        pos.clear();
        for (std::size_t i = 0; i < model->nodes.size(); ++i) pos[model->nodes[i].id] = i;
        outputs.resize(model->nodes.size());
        grads.resize(model->nodes.size());
        caches.resize(model->nodes.size());
        if (!pos.count(model->output)) throw ShapeError(model->output, "output layer missing");
    }
};

Executor::Executor(ModelGraph& model) : impl_(std::make_unique<Impl>()) { impl_->model = &model; }

Executor::Executor(const ModelGraph& model) : impl_(std::make_unique<Impl>()) {
    impl_->model = const_cast<ModelGraph*>(&model);
    impl_->read_only = true;
}

Executor::~Executor() = default;
Executor::Executor(Executor&&) noexcept = default;
Executor& Executor::operator=(Executor&&) noexcept = default;

Tensor Executor::forward(const Tensor& batch, Mode mode) {
    auto& s = *impl_;
    if (mode == Mode::Train && s.read_only) throw UsageError("train-mode forward on a read-only executor");
    s.index();
    const bool flat = s.model->in_length == 0;
    if ((flat && batch.rank() != 2) || (!flat && batch.rank() != 3))
        throw ShapeError(s.model->nodes.front().id, "batch has shape " + shape_to_string(batch.shape()) +
                                                         ", model expects rank " + (flat ? "2" : "3"));
    if (batch.dim(1) != s.model->in_channels)
        throw ShapeError(s.model->nodes.front().id, "batch has " + std::to_string(batch.dim(1)) +
                                                         " channels, model input has " + std::to_string(s.model->in_channels));
    // parameter-free graphs run in the precision of their input
    bool has_params = false;
    for (const auto& n : s.model->nodes) has_params = has_params || !n.params.empty();
    const DType dt = has_params ? s.model->dtype() : batch.dtype();
    s.input = batch.dtype() == dt ? batch : batch.cast(dt);
    s.input.drop_grad();
    s.can_backward = false;
    s.has_input_grad = false;
    dispatch_dtype(dt, [&]<class T>() {
        Engine<T>{*s.model, s.pos, s.outputs, s.caches, s.input}.forward(mode == Mode::Train);
    });
    s.can_backward = mode == Mode::Train;
    return s.outputs[s.pos.at(s.model->output)];
}

const Tensor& Executor::activation(int node_id) const {
    auto it = impl_->pos.find(node_id);
    if (it == impl_->pos.end() || impl_->outputs.empty()) throw UsageError("no activation recorded for layer " + std::to_string(node_id));
    return impl_->outputs[it->second];
}

void Executor::backward(const Tensor& grad_output) {
    auto& s = *impl_;
    if (!s.can_backward) throw UsageError("backward requires a preceding train-mode forward");
    const auto& out = s.outputs[s.pos.at(s.model->output)];
    if (grad_output.shape() != out.shape())
        throw ShapeError(s.model->output, "gradient shape " + shape_to_string(grad_output.shape()) + " does not match output " +
                                              shape_to_string(out.shape()));
    const DType dt = s.input.dtype();
    const Tensor g = grad_output.dtype() == dt ? grad_output : grad_output.cast(dt);
    dispatch_dtype(dt, [&]<class T>() {
        Engine<T>{*s.model, s.pos, s.outputs, s.caches, s.input}.backward(g, s.grads, s.input_grad);
    });
    s.can_backward = false;
    s.has_input_grad = true;
}

const Tensor& Executor::input_grad() const {
    if (!impl_->has_input_grad) throw UsageError("no backward pass has run");
    return impl_->input_grad;
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad) {
    if (logits.rank() != 2) throw ShapeError(-1, "logits must be [B, K]");
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    if (labels.size() != B) throw ShapeError(-1, "label count does not match batch");
    if (B == 0) throw UsageError("empty batch");
    if (grad) *grad = Tensor(logits.shape(), logits.dtype());
    double total = 0;
    dispatch_dtype(logits.dtype(), [&]<class T>() {
        auto z = logits.values<T>();
        std::span<T> g = grad ? grad->values<T>() : std::span<T>{};
        std::vector<double> p(K);
        for (std::size_t b = 0; b < B; ++b) {
            const int y = labels[b];
            if (y < 0 || static_cast<std::size_t>(y) >= K) throw UsageError("label out of range");
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(z[b * K + k]));
            double sum = 0;
            for (std::size_t k = 0; k < K; ++k) sum += (p[k] = std::exp(z[b * K + k] - mx));
            total += -(z[b * K + y] - mx - std::log(sum));
            if (grad)
                for (std::size_t k = 0; k < K; ++k)
                    g[b * K + k] = static_cast<T>((p[k] / sum - (static_cast<int>(k) == y ? 1.0 : 0.0)) / static_cast<double>(B));
        }
    });
    const double loss = total / static_cast<double>(B);
    if (!std::isfinite(loss)) throw NumericError(-1, "cross-entropy loss");
    return loss;
}

Tensor predict(const ModelGraph& model, const Tensor& batch, std::size_t chunk) {
    Executor ex(model);
    const std::size_t n = batch.dim(0);
    if (n <= chunk) return ex.forward(batch, Mode::Eval);
    Tensor out;
    std::vector<double> all;
    std::size_t k = 0;
    for (std::size_t b = 0; b < n; b += chunk) {
        Tensor part = ex.forward(slice_rows(batch, b, std::min(n, b + chunk)), Mode::Eval);
        k = part.dim(1);
        auto v = part.to_doubles();
        all.insert(all.end(), v.begin(), v.end());
    }
    out = Tensor({n, k}, model.dtype());
    for (std::size_t i = 0; i < all.size(); ++i) out.set_item(i, all[i]);
    return out;
}

}  // namespace fcos
