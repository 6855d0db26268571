#include "fcos/lacd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "fcos/executor.hpp"
#include "fcos/metrics.hpp"
#include "parallel.hpp"

namespace fcos {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_matrix(const Tensor& t) {
    if (t.rank() != 2) throw ShapeError(-1, "feature matrix must be rank 2");
    Mat m(t.dim(0), t.dim(1));
    const auto v = t.to_doubles();
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

double probe_accuracy(const Mat& x, std::span<const std::int32_t> y, const Mat& w, const Eigen::VectorXd& b) {
    if (y.empty()) return 0.0;
    const Mat logits = (x * w.transpose()).rowwise() + b.transpose();
    std::size_t hit = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < logits.cols(); ++k)
            if (logits(i, k) > logits(i, best)) best = k;
        hit += best == y[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(hit) / static_cast<double>(y.size());
}

std::uint64_t probe_seed(std::uint64_t base, std::size_t point) { return base + 0x9E3779B97F4A7C15ull * (point + 1); }

}  // namespace

std::string to_string(FeatureReduction r) { return r == FeatureReduction::GlobalAvgPool ? "gap" : "flatten"; }

FeatureReduction feature_reduction_from_string(const std::string& s) {
    if (s == "gap") return FeatureReduction::GlobalAvgPool;
    if (s == "flatten") return FeatureReduction::Flatten;
    throw ConfigError("unknown feature reduction '" + s + "' (expected gap or flatten)");
}

std::vector<int> probe_points(const ModelGraph& model) {
    std::vector<int> out;
    for (const auto& u : model.units) out.push_back(u.probe_node);
    return out;
}

Tensor reduce_features(const Tensor& a, FeatureReduction reduction) {
    if (a.rank() == 2 || reduction == FeatureReduction::Flatten) {
        const std::size_t b = a.dim(0), f = a.numel() / std::max<std::size_t>(b, 1);
        return a.reshaped({b, f}).cast(DType::F64);
    }
    if (a.rank() != 3) throw ShapeError(-1, "cannot reduce an activation of rank " + std::to_string(a.rank()));
    const std::size_t b = a.dim(0), c = a.dim(1), l = a.dim(2);
    Tensor out({b, c}, DType::F64);
    auto dst = out.values<double>();
    const auto src = a.to_doubles();
    for (std::size_t i = 0; i < b * c; ++i) {
        double s = 0;
        for (std::size_t t = 0; t < l; ++t) s += src[i * l + t];
        dst[i] = s / static_cast<double>(l);
    }
    return out;
}

std::map<int, Tensor> extract_all_features(const ModelGraph& model, std::span<const int> nodes, const Tensor& batch,
                                           FeatureReduction reduction, std::size_t chunk) {
    for (int n : nodes)
        if (n != kGraphInput && !model.has_node(n)) throw UsageError("probe point " + std::to_string(n) + " is not in the graph");
    std::map<int, std::vector<Tensor>> parts;
    Executor ex(model);
    const std::size_t total = batch.dim(0);
    for (std::size_t b = 0; b < total; b += chunk) {
        const auto x = slice_rows(batch, b, std::min(total, b + chunk));
        const bool need_forward = std::any_of(nodes.begin(), nodes.end(), [](int n) { return n != kGraphInput; });
        if (need_forward) ex.forward(x, Mode::Eval);
        for (int n : nodes) parts[n].push_back(reduce_features(n == kGraphInput ? x : ex.activation(n), reduction));
    }
    std::map<int, Tensor> out;
    for (auto& [n, chunks] : parts) {
        const std::size_t f = chunks.front().dim(1);
        Tensor t({total, f}, DType::F64);
        auto dst = t.values<double>();
        std::size_t off = 0;
        for (const auto& c : chunks) {
            auto src = c.values<double>();
            std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(off));
            off += src.size();
        }
        out.emplace(n, std::move(t));
    }
    return out;
}

Tensor extract_features(const ModelGraph& model, int node, const Tensor& batch, FeatureReduction reduction) {
    const int nodes[] = {node};
    return extract_all_features(model, nodes, batch, reduction).at(node);
}

LinearProbe train_probe(const Tensor& train_x, std::span<const std::int32_t> train_y, const Tensor& test_x,
                        std::span<const std::int32_t> test_y, std::size_t num_classes, const ProbeOptions& opts) {
    if (train_x.rank() != 2 || train_x.dim(0) != train_y.size()) throw ShapeError(-1, "probe features and labels disagree");
    if (test_x.rank() != 2 || test_x.dim(0) != test_y.size() || test_x.dim(1) != train_x.dim(1))
        throw ShapeError(-1, "probe test features do not match the training features");
    if (std::set<std::int32_t>(train_y.begin(), train_y.end()).size() < 2) throw DegenerateDataError("probe training labels contain a single class");
    for (auto y : train_y)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw UsageError("probe label out of range");
    if (opts.batch == 0) throw ConfigError("probe batch must be positive");

    Mat x = to_matrix(train_x);
    Mat xt = to_matrix(test_x);
    const auto n = static_cast<std::size_t>(x.rows());
    const auto f = static_cast<std::size_t>(x.cols());
    const auto k = static_cast<Eigen::Index>(num_classes);

    LinearProbe probe;
    probe.mean.assign(f, 0.0);
    probe.scale.assign(f, 1.0);
    if (opts.standardize) {
        for (std::size_t j = 0; j < f; ++j) {
            const double mu = x.col(static_cast<Eigen::Index>(j)).mean();
            const double var = (x.col(static_cast<Eigen::Index>(j)).array() - mu).square().mean();
            probe.mean[j] = mu;
            probe.scale[j] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
        }
        for (std::size_t j = 0; j < f; ++j) {
            const auto c = static_cast<Eigen::Index>(j);
            x.col(c) = (x.col(c).array() - probe.mean[j]) * probe.scale[j];
            xt.col(c) = (xt.col(c).array() - probe.mean[j]) * probe.scale[j];
        }
    }

    Mat w = Mat::Zero(k, static_cast<Eigen::Index>(f));
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    Mat mw = Mat::Zero(k, static_cast<Eigen::Index>(f)), vw = mw;
    Eigen::VectorXd mb = b, vb = b;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t step = 0;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32), static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t s = 0; s < n; s += opts.batch) {
            const std::size_t e = std::min(n, s + opts.batch);
            const auto bs = static_cast<Eigen::Index>(e - s);
            Mat xb(bs, static_cast<Eigen::Index>(f));
            for (std::size_t i = s; i < e; ++i) xb.row(static_cast<Eigen::Index>(i - s)) = x.row(static_cast<Eigen::Index>(order[i]));
            Mat g = (xb * w.transpose()).rowwise() + b.transpose();
            for (Eigen::Index i = 0; i < bs; ++i) {
                const double mx = g.row(i).maxCoeff();
                g.row(i) = (g.row(i).array() - mx).exp();
                g.row(i) /= g.row(i).sum();
                g(i, train_y[order[s + static_cast<std::size_t>(i)]]) -= 1.0;
            }
            g /= static_cast<double>(bs);
            const Mat gw = g.transpose() * xb;
            const Eigen::VectorXd gb = g.colwise().sum().transpose();

            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            mw = beta1 * mw + (1 - beta1) * gw;
            vw = beta2 * vw + (1 - beta2) * gw.cwiseProduct(gw);
            mb = beta1 * mb + (1 - beta1) * gb;
            vb = beta2 * vb + (1 - beta2) * gb.cwiseProduct(gb);
            w.array() -= opts.lr * (mw.array() / bc1) / ((vw.array() / bc2).sqrt() + eps);
            b.array() -= opts.lr * (mb.array() / bc1) / ((vb.array() / bc2).sqrt() + eps);
        }
    }

    probe.accuracy = probe_accuracy(xt, test_y, w, b);
    probe.weight = Tensor({num_classes, f}, DType::F64);
    std::copy(w.data(), w.data() + w.size(), probe.weight.values<double>().begin());
    probe.bias = Tensor({num_classes}, DType::F64);
    std::copy(b.data(), b.data() + b.size(), probe.bias.values<double>().begin());
    return probe;
}

CollapseDiagnosis diagnose_collapse(std::span<const double> acc, double beta) {
    if (!(beta > 0 && beta < 1)) throw ConfigError("beta must lie in (0, 1)");
    if (acc.size() < 2) throw UsageError("a probe profile needs at least two points");
    CollapseDiagnosis d;
    d.beta = beta;
    d.deltas.assign(acc.size(), 0.0);
    for (std::size_t i = 1; i < acc.size(); ++i) {
        d.deltas[i] = std::abs(acc[i] - acc[i - 1]);
        if (d.deltas[i] <= beta) d.flagged.push_back(i);
    }
    return d;
}

ProbeProfile probe_model(const ModelGraph& model, const SignalDataset& ds, const ProbeOptions& opts) {
    ModelGraph frozen = model;
    frozen.set_frozen(true);
    const auto splits = split_dataset(ds);
    if (splits.train.empty() || splits.test.empty()) throw UsageError("probing needs non-empty train and test splits");

    ProbeProfile p;
    p.reduction = to_string(opts.reduction);
    std::vector<int> nodes{kGraphInput};
    for (const auto& u : frozen.units) {
        p.units.push_back(u.id);
        p.nodes.push_back(u.probe_node);
        nodes.push_back(u.probe_node);
    }
    const auto train_f = extract_all_features(frozen, nodes, gather_samples(ds, splits.train), opts.reduction);
    const auto test_f = extract_all_features(frozen, nodes, gather_samples(ds, splits.test), opts.reduction);
    const auto train_y = gather_labels(ds, splits.train);
    const auto test_y = gather_labels(ds, splits.test);

    p.acc.assign(nodes.size(), 0.0);
    for (std::size_t i = 0; i < nodes.size(); ++i) p.seeds.push_back(probe_seed(opts.seed, i));
    detail::parallel_for(nodes.size(), opts.workers, [&](std::size_t i) {
        ProbeOptions o = opts;
        o.seed = p.seeds[i];
        p.acc[i] = train_probe(train_f.at(nodes[i]), train_y, test_f.at(nodes[i]), test_y, ds.num_classes(), o).accuracy;
    });
    return p;
}

std::vector<int> select_collapsed_units(const ModelGraph& model, const ProbeProfile& profile, const CollapseDiagnosis& diag,
                                        const RewireOptions& rewire) {
    std::map<int, std::vector<std::size_t>> flagged_by_stage;  // stage -> profile indices
    for (auto i : diag.flagged) {
        const int uid = profile.units.at(i - 1);
        if (!model.has_unit(uid)) throw UsageError("profile unit " + std::to_string(uid) + " is not in the model");
        flagged_by_stage[model.unit(uid).stage].push_back(i);
    }

    std::set<int> candidates;
    for (auto& [stage, idx] : flagged_by_stage) {
        const auto in_stage = std::count_if(model.units.begin(), model.units.end(), [&](const RemovableUnit& u) { return u.stage == stage; });
        if (static_cast<std::ptrdiff_t>(idx.size()) == in_stage) {
            std::size_t keep = idx.front();
            for (auto i : idx)
                if (profile.acc[i] - profile.acc[i - 1] > profile.acc[keep] - profile.acc[keep - 1]) keep = i;
            spdlog::warn("every unit of stage {} is flagged; keeping unit {} (highest probe gain)", stage, profile.units[keep - 1]);
            std::erase(idx, keep);
        }
        for (auto i : idx) candidates.insert(profile.units[i - 1]);
    }

    std::vector<int> chosen;
    for (int uid : candidates) {
        auto trial = chosen;
        trial.push_back(uid);
        try {
            remove_layers(model, trial, rewire);
            chosen = std::move(trial);
        } catch (const RemovalError& e) {
            spdlog::warn("flagged unit {} is kept: {}", uid, e.what());
        }
    }
    return chosen;
}

LacdDiagnosisResult lacd_diagnose(const ModelGraph& stage1, const SignalDataset& ds, const LacdOptions& opts) {
    LacdDiagnosisResult r;
    TrainOptions warm = opts.train;
    warm.epochs = opts.warm_epochs;
    warm.phase = "warm";
    auto trained = train_model(stage1, ds, warm);
    r.warm_model = std::move(trained.model);
    r.curve = std::move(trained.curve);

    r.profile = probe_model(r.warm_model, ds, opts.probe);
    r.diagnosis = diagnose_collapse(r.profile.acc, opts.beta);
    r.removed = select_collapsed_units(r.warm_model, r.profile, r.diagnosis, opts.rewire);
    spdlog::info("LaCD: {} of {} units flagged, {} removed", r.diagnosis.flagged.size(), r.profile.units.size(), r.removed.size());
    r.pruned_model = r.removed.empty() ? r.warm_model : remove_layers(r.warm_model, r.removed, opts.rewire);
    return r;
}

LacdResult run_lacd(const ModelGraph& stage1, const SignalDataset& ds, const LacdOptions& opts) {
    LacdResult out;
    out.diagnosis = lacd_diagnose(stage1, ds, opts);
    TrainOptions fin = opts.train;
    fin.epochs = opts.final_epochs;
    fin.phase = "final";
    auto trained = train_model(out.diagnosis.pruned_model, ds, fin);
    out.model = std::move(trained.model);
    out.curve = out.diagnosis.curve;
    out.curve.insert(out.curve.end(), trained.curve.begin(), trained.curve.end());

    const auto before = evaluate(out.diagnosis.warm_model, ds, Split::Test);
    const auto after = evaluate(out.model, ds, Split::Test);
    out.report.stage = "lacd";
    out.report.original = count_params_flops(out.diagnosis.warm_model, ds.length());
    out.report.pruned = count_params_flops(out.model, ds.length());
    out.report.original_acc = before.accuracy;
    out.report.pruned_acc = after.accuracy;
    out.report.per_snr = after.per_snr;
    return out;
}

void write_profile_csv(const ProbeProfile& profile, const CollapseDiagnosis& diag, std::span<const int> removed,
                       const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "point,unit,node,acc,delta,flagged,removed\n";
    const std::set<int> rm(removed.begin(), removed.end());
    for (std::size_t i = 0; i < profile.acc.size(); ++i) {
        const int unit = i == 0 ? -1 : profile.units[i - 1];
        const int node = i == 0 ? kGraphInput : profile.nodes[i - 1];
        const bool flagged = std::find(diag.flagged.begin(), diag.flagged.end(), i) != diag.flagged.end();
        out << i << ',' << unit << ',' << node << ',' << format_number(profile.acc[i]) << ','
            << format_number(i < diag.deltas.size() ? diag.deltas[i] : 0.0) << ',' << flagged << ',' << rm.contains(unit) << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace fcos
