#include "fcos/training.hpp"

#include <algorithm>
#include <random>

#include <spdlog/spdlog.h>

#include "fcos/checkpoint.hpp"
#include "fcos/executor.hpp"
#include "fcos/metrics.hpp"

namespace fcos {

TrainResult train_model(ModelGraph model, const SignalDataset& ds, const TrainOptions& opts) {
    if (opts.batch == 0) throw ConfigError("train.batch must be positive");
    const auto splits = split_dataset(ds);
    if (splits.train.empty()) throw UsageError("train split is empty");

    TrainResult res;
    res.model = model;
    if (opts.epochs == 0) return res;

    Optimizer opt(opts.optimizer);
    std::vector<std::size_t> order = splits.train;
    bool have_best = false;

    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32), static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0;
        std::size_t batches = 0;
        try {
            Executor ex(model);
            for (std::size_t b = 0; b < order.size(); b += opts.batch) {
                const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + opts.batch)));
                const auto x = gather_samples(ds, idx);
                const auto y = gather_labels(ds, idx);
                const auto logits = ex.forward(x, Mode::Train);
                Tensor grad;
                loss_sum += softmax_cross_entropy(logits, y, &grad);
                ++batches;
                ex.backward(grad);
                opt.step(model);
            }
        } catch (const NumericError& e) {
            spdlog::error("numeric failure in {} epoch {}: {}", opts.phase, epoch, e.what());
            if (!opts.abort_checkpoint.empty()) {
                save_checkpoint(res.model, opts.abort_checkpoint, {res.best_epoch, opts.seed, "", {{"aborted", true}}});
                spdlog::error("last good model saved to {}", opts.abort_checkpoint.string());
            }
            throw;
        }

        EpochStats st;
        st.epoch = epoch;
        st.loss = loss_sum / static_cast<double>(batches);
        st.val_acc = splits.val.empty() ? 0.0 : evaluate(model, ds, Split::Val).accuracy;
        st.test_acc = splits.test.empty() ? 0.0 : evaluate(model, ds, Split::Test).accuracy;
        res.history.push_back(st);
        res.curve.push_back({opts.phase, epoch, "val", st.val_acc});
        res.curve.push_back({opts.phase, epoch, "test", st.test_acc});
        spdlog::debug("{} epoch {}/{} loss {:.4f} val {:.4f} test {:.4f}", opts.phase, epoch, opts.epochs, st.loss, st.val_acc, st.test_acc);
        if (opts.on_epoch) opts.on_epoch(st);

        if (!opts.select_best || !have_best || st.val_acc > res.best_val_acc) {
            res.model = model;
            res.best_epoch = epoch;
            res.best_val_acc = st.val_acc;
            have_best = true;
        }
    }
    for (auto& n : res.model.nodes)
        for (auto& [_, t] : n.params) t.drop_grad();
    return res;
}

}  // namespace fcos
