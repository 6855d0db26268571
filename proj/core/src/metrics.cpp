#include "fcos/metrics.hpp"

#include "fcos/executor.hpp"

namespace fcos {

ModelCost count_params_flops(const ModelGraph& model, std::size_t length) {
    ModelCost cost;
    cost.params = parameter_count(model);
    const auto shapes = infer_shapes(model, length);
    auto elems = [](const NodeShape& s) { return s.channels * std::max<std::size_t>(s.length, 1); };
    auto input_shape = [&](const LayerNode& n) {
        const int in = n.inputs.at(0);
        return in == kGraphInput ? NodeShape{model.in_channels, length} : shapes[model.index_of(in)];
    };
    for (std::size_t i = 0; i < model.nodes.size(); ++i) {
        const auto& n = model.nodes[i];
        const auto& out = shapes[i];
        switch (n.kind) {
            case LayerKind::Conv1d: cost.flops += 2 * n.c_out * n.c_in * n.kernel * out.length; break;
            case LayerKind::Dense: cost.flops += 2 * n.c_in * n.c_out; break;
            case LayerKind::BatchNorm: cost.flops += 2 * elems(out); break;
            case LayerKind::Relu:
            case LayerKind::MaxPool1d:
            case LayerKind::Add: cost.flops += elems(out); break;
            case LayerKind::GlobalAvgPool: cost.flops += elems(input_shape(n)); break;
        }
    }
    return cost;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t k = logits.dim(1);
    std::size_t best = 0;
    double bv = logits.item(row * k);
    for (std::size_t j = 1; j < k; ++j) {
        const double v = logits.item(row * k + j);
        if (v > bv) {
            bv = v;
            best = j;
        }
    }
    return best;
}

Evaluation evaluate_logits(const Tensor& logits, std::span<const std::int32_t> labels, std::span<const float> snr_db) {
    if (labels.empty()) throw UsageError("cannot evaluate an empty split");
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || snr_db.size() != labels.size())
        throw ShapeError(-1, "logits, labels and SNR tags disagree in length");
    Evaluation ev;
    ev.samples = labels.size();
    std::size_t correct = 0;
    std::map<double, std::size_t> hits;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool ok = argmax_row(logits, i) == static_cast<std::size_t>(labels[i]);
        correct += ok;
        hits[snr_db[i]] += ok;
        ev.per_snr_count[snr_db[i]]++;
    }
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    for (const auto& [snr, n] : ev.per_snr_count) ev.per_snr[snr] = static_cast<double>(hits[snr]) / static_cast<double>(n);
    return ev;
}

Evaluation evaluate(const ModelGraph& model, const SignalDataset& ds, Split split) {
    const auto idx = split_dataset(ds)[split];
    if (idx.empty()) throw UsageError("split '" + to_string(split) + "' is empty");
    const auto logits = predict(model, gather_samples(ds, idx));
    std::vector<float> snr;
    for (auto i : idx) snr.push_back(ds.snr_db[i]);
    return evaluate_logits(logits, gather_labels(ds, idx), snr);
}

}  // namespace fcos
