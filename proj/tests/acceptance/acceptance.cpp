#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fcos/architectures.hpp"
#include "fcos/checkpoint.hpp"
#include "fcos/config.hpp"
#include "fcos/dataset.hpp"
#include "fcos/executor.hpp"
#include "fcos/fusion.hpp"
#include "fcos/lacd.hpp"
#include "fcos/metrics.hpp"
#include "fcos/pipeline.hpp"
#include "fcos/training.hpp"
#include "oracles.hpp"

using namespace fcos;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

double points(double acc) { return 100.0 * acc; }

struct Trained {
    ModelGraph model;
    double test_acc = 0;
};

struct FcosRun {
    double acc = 0;
    double params_pr = 0;
    double flops_pr = 0;
    std::size_t removed = 0;
};

class Harness {
public:
    Harness(fs::path out, unsigned workers, bool cache) : out_(std::move(out)), workers_(workers), cache_(cache) {
        fs::create_directories(out_);
    }

    ExperimentConfig config(const std::string& arch, std::uint64_t seed) const {
        auto cfg = parse_config("[model]\narch = " + arch + "\n");
        cfg.override_seed(seed);
        return cfg;
    }

    const SignalDataset& dataset(std::uint64_t seed) {
        auto it = data_.find(seed);
        if (it == data_.end()) it = data_.emplace(seed, generate_dataset(config("plain-cnn1d", seed).dataset.spec, workers_)).first;
        return it->second;
    }

    // The reference training run of one architecture and seed, shared by every criterion.
    const Trained& baseline(const std::string& arch, std::uint64_t seed) {
        const auto key = arch + "-" + std::to_string(seed);
        if (auto it = trained_.find(key); it != trained_.end()) return it->second;
        const auto cfg = config(arch, seed);
        const auto& ds = dataset(seed);
        const auto path = out_ / "cache" / (key + ".ckpt");
        Trained t;
        if (cache_ && fs::exists(path)) {
            t.model = load_checkpoint(path);
        } else {
            t.model = train_model(build_model(cfg.model), ds, cfg.train_options("train", cfg.train.epochs)).model;
            if (cache_) {
                fs::create_directories(path.parent_path());
                save_checkpoint(t.model, path);
            }
        }
        t.test_acc = evaluate(t.model, ds, Split::Test).accuracy;
        return trained_.emplace(key, std::move(t)).first->second;
    }

    // Channel fusion at `fusion`, then warm fine-tune, probe, collapse removal and final fine-tune.
    FcosRun fcos_run(std::uint64_t seed, const FusionConfig& fusion) {
        auto cfg = config("plain-cnn1d", seed);
        cfg.fcos.fusion = fusion;
        const auto& ds = dataset(seed);
        const auto& base = baseline("plain-cnn1d", seed);
        const auto stage1 = prune_model_channels(base.model, fusion).first;
        const auto r = run_lacd(stage1, ds, cfg.lacd_options(workers_));
        const auto len = ds.length();
        const auto before = count_params_flops(base.model, len), after = count_params_flops(r.model, len);
        return {evaluate(r.model, ds, Split::Test).accuracy, pruning_rate(before.params, after.params),
                pruning_rate(before.flops, after.flops), r.diagnosis.removed.size()};
    }

    const FcosRun& default_run(std::uint64_t seed) {
        auto it = defaults_.find(seed);
        if (it == defaults_.end()) it = defaults_.emplace(seed, fcos_run(seed, a5_fusion())).first;
        return it->second;
    }

    static FusionConfig a5_fusion() {
        FusionConfig f;
        f.keep_ratio = 0.5;
        return f;
    }

    const fs::path& out() const { return out_; }
    unsigned workers() const { return workers_; }

private:
    fs::path out_;
    unsigned workers_;
    bool cache_;
    std::map<std::uint64_t, SignalDataset> data_;
    std::map<std::string, Trained> trained_;
    std::map<std::uint64_t, FcosRun> defaults_;
};

Outcome a1_gradients() {
    const auto t0 = Clock::now();
    double worst = 0;
    std::string worst_case;
    std::size_t checks = 0;
    for (auto c : fcos::testing::kGradCases)
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const double e = fcos::testing::gradient_check(c, seed);
            ++checks;
            if (!(e <= worst)) {
                worst = e;
                worst_case = fcos::testing::name(c);
            }
        }
    const double secs = seconds_since(t0);
    return {worst <= 1e-4 && secs < 60.0,
            fmt::format("max rel err {:.2e} ({}) over {} checks, {:.1f} s (limits 1e-4, 60 s)", worst, worst_case, checks, secs)};
}

Outcome a2_linkage() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0, 2);
    std::size_t mismatches = 0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t m = 1 + rng() % 10, n = 1 + rng() % m;
        DistanceMatrix d;
        d.size = m;
        d.values.assign(m * m, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) {
                // a coarse grid makes exact ties common
                const double v = t % 2 ? std::round(u(rng) * 4) / 4 : u(rng);
                d.values[i * m + j] = d.values[j * m + i] = v;
            }
        const auto got = average_linkage_cluster(d, n);
        if (got.clusters != n ||
            fcos::testing::canonical_partition(got.members) != fcos::testing::canonical_partition(fcos::testing::brute_force_linkage(d, n)))
            ++mismatches;
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 10.0, fmt::format("{} of 200 partitions differ from the oracle, {:.2f} s (limit 10 s)", mismatches, secs)};
}

Outcome a3_fusion() {
    double worst = 0;
    auto near = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
    ClusterAssignment one{{0, 0}, 1, {}};
    const auto mean = fuse_cluster_weights({{1, 2}, {3, 4}}, one, FusionScheme::Mean)[0];
    near(mean[0], 2);
    near(mean[1], 3);
    const auto l1 = fuse_cluster_weights({{1, 1}, {3, 3}}, one, FusionScheme::L1Weighted)[0];
    near(l1[0], 2.5);
    near(l1[1], 2.5);

    std::size_t inexact = 0;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0, 1);
    for (int t = 0; t < 200; ++t) {
        const std::size_t copies = 2 + rng() % 5, dim = 1 + rng() % 40;
        std::vector<double> w(dim);
        for (auto& v : w) v = g(rng) * std::pow(10.0, static_cast<double>(rng() % 7) - 3);
        ClusterAssignment a{std::vector<std::size_t>(copies, 0), 1, {}};
        for (auto scheme : {FusionScheme::Mean, FusionScheme::L1Weighted})
            if (fuse_cluster_weights(std::vector<std::vector<double>>(copies, w), a, scheme)[0] != w) ++inexact;
    }
    return {worst <= 1e-12 && inexact == 0,
            fmt::format("example error {:.1e} (limit 1e-12), {} of 400 identical-member fusions inexact", worst, inexact)};
}

Outcome a4_sweep() {
    std::size_t graphs = 0, failures = 0;
    std::string first_failure;
    auto fail = [&](const std::string& what) {
        if (failures++ == 0) first_failure = what;
    };
    auto kept = [](const std::vector<std::size_t>& widths, double eps) {
        std::vector<std::size_t> out;
        for (auto w : widths) out.push_back(kept_channels(w, eps));
        return out;
    };
    for (int step = 1; step <= 9; ++step) {
        const double eps = step / 10.0;
        for (auto order : {FusionOrder::OutputFirst, FusionOrder::InputFirst})
            for (auto metric : {SimilarityMetric::Cosine, SimilarityMetric::Euclidean})
                for (auto scheme : {FusionScheme::Mean, FusionScheme::L1Weighted}) {
                    FusionConfig cfg{eps, metric, scheme, order, InputChannelMode::ProducerTied};
                    for (const char* name : {"plain-cnn1d", "residual-cnn1d"}) {
                        auto spec = default_architecture(name);
                        spec.seed = static_cast<std::uint64_t>(step);
                        const auto model = build_model(spec);
                        const bool plain = std::string(name) == "plain-cnn1d";
                        const auto tag = fmt::format("{} eps={} {} {} {}", name, eps, to_string(order), to_string(metric), to_string(scheme));
                        ++graphs;
                        try {
                            const auto pruned = prune_model_channels(model, cfg).first;
                            validate(pruned);
                            const auto want = plain ? fcos::testing::plain_closed_form(kept(spec.widths, eps), 8, 2, 4, 128)
                                                    : fcos::testing::residual_closed_form(kept(spec.widths, eps), 2, 5, 2, 4, 128);
                            const auto got = count_params_flops(pruned, 128);
                            if (got.params != want.params || got.flops != want.flops) fail(tag + ": counts differ from closed form");
                            const auto x = fcos::testing::random_tensor({4, 2, 128}, static_cast<std::uint64_t>(step), -1, 1, DType::F32);
                            if (!predict(pruned, x).all_finite()) fail(tag + ": non-finite logits");
                        } catch (const std::exception& e) {
                            fail(tag + ": " + e.what());
                        }
                    }
                }
    }
    return {failures == 0, fmt::format("{} pruned graphs, {} unsound{}", graphs, failures, failures ? " (first: " + first_failure + ")" : "")};
}

Outcome a5_retention(Harness& h) {
    const auto t0 = Clock::now();
    std::size_t retained = 0;
    bool base_ok = true, pr_ok = true;
    std::vector<std::string> rows;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto& base = h.baseline("plain-cnn1d", seed);
        const auto& r = h.default_run(seed);
        base_ok = base_ok && base.test_acc >= 0.85;
        pr_ok = pr_ok && r.params_pr >= 0.70;
        const double drop = points(base.test_acc) - points(r.acc);
        if (drop <= 3.0) ++retained;
        rows.push_back(fmt::format("seed {}: base {:.2f} fcos {:.2f} params PR {:.2f}%", seed, points(base.test_acc), points(r.acc), points(r.params_pr)));
    }
    const double secs = seconds_since(t0);
    std::string detail;
    for (const auto& r : rows) detail += r + "; ";
    detail += fmt::format("{}/3 within 3.0 points, {:.0f} s (limit 1200 s)", retained, secs);
    return {base_ok && pr_ok && retained >= 2 && secs <= 1200.0, detail};
}

Outcome a6_collapse(Harness& h) {
    std::size_t flagged = 0, worse = 0;
    double gain_sum = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto cfg = h.config("residual-cnn1d", seed);
        const auto& ds = h.dataset(seed);
        const auto& base = h.baseline("residual-cnn1d", seed);
        FusionConfig f = cfg.fcos.fusion;
        f.keep_ratio = 0.02;
        const auto stage1 = prune_model_channels(base.model, f).first;
        const auto opts = cfg.lacd_options(h.workers());
        const auto diag = lacd_diagnose(stage1, ds, opts);
        if (diag.diagnosis.flagged.empty()) {
            detail += fmt::format("seed {}: no plateau; ", seed);
            continue;
        }
        ++flagged;
        const auto final_opts = cfg.train_options("final", cfg.fcos.final_epochs);
        const double with = evaluate(train_model(diag.pruned_model, ds, final_opts).model, ds, Split::Test).accuracy;
        const double without = evaluate(train_model(diag.warm_model, ds, final_opts).model, ds, Split::Test).accuracy;
        if (with < without) ++worse;
        gain_sum += points(with) - points(without);
        detail += fmt::format("seed {}: {} flagged, {} removed, lacd {:.2f} vs none {:.2f}; ", seed, diag.diagnosis.flagged.size(),
                              diag.removed.size(), points(with), points(without));
    }
    const double mean_gain = flagged ? gain_sum / static_cast<double>(flagged) : 0.0;
    detail += fmt::format("{} of 5 seeds plateau, mean gain {:.2f} points (need >= 1.0, no seed worse)", flagged, mean_gain);
    return {flagged >= 1 && worse == 0 && mean_gain >= 1.0, detail};
}

Outcome a7_scratch(Harness& h) {
    std::size_t wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto cfg = h.config("plain-cnn1d", seed);
        const auto& ds = h.dataset(seed);
        const auto pruned = prune_model_channels(h.baseline("plain-cnn1d", seed).model, Harness::a5_fusion()).first;
        auto spec = cfg.model;
        for (auto& w : spec.widths) w = kept_channels(w, Harness::a5_fusion().keep_ratio);
        const auto scratch = build_model(spec);
        if (count_params_flops(scratch, ds.length()).params != count_params_flops(pruned, ds.length()).params)
            return {false, "from-scratch model does not match the pruned shape"};
        const auto opts = cfg.train_options("compare", 10);
        const double ft = train_model(pruned, ds, opts).history.at(9).test_acc;
        const double sc = train_model(scratch, ds, opts).history.at(9).test_acc;
        if (ft > sc) ++wins;
        detail += fmt::format("seed {}: fine-tuned {:.2f} scratch {:.2f}; ", seed, points(ft), points(sc));
    }
    detail += fmt::format("{}/5 seeds favour fine-tuning (need 4)", wins);
    return {wins >= 4, detail};
}

Outcome a8_ablation(Harness& h) {
    struct Variant {
        const char* name;
        std::function<void(FusionConfig&)> tweak;
    };
    const std::vector<Variant> variants{{"euclidean", [](FusionConfig& f) { f.metric = SimilarityMetric::Euclidean; }},
                                        {"l1-weighted", [](FusionConfig& f) { f.scheme = FusionScheme::L1Weighted; }},
                                        {"input-first", [](FusionConfig& f) { f.order = FusionOrder::InputFirst; }}};
    bool ok = true;
    double ref_acc = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) ref_acc += h.default_run(seed).acc / 3.0;
    std::string detail = fmt::format("default {:.2f}", points(ref_acc));
    for (const auto& v : variants) {
        double acc = 0;
        bool same_pr = true;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            auto f = Harness::a5_fusion();
            v.tweak(f);
            const auto r = h.fcos_run(seed, f);
            const auto& d = h.default_run(seed);
            same_pr = same_pr && r.params_pr == d.params_pr && r.flops_pr == d.flops_pr;
            acc += r.acc / 3.0;
        }
        const double gap = std::abs(points(acc) - points(ref_acc));
        ok = ok && same_pr && gap <= 1.0;
        detail += fmt::format(", {} {:.2f} (gap {:.2f}, PR {})", v.name, points(acc), gap, same_pr ? "identical" : "differs");
    }
    detail += "; mean final Acc over 3 seeds, limit 1.0 point";
    return {ok, detail};
}

Outcome a9_determinism(Harness& h) {
    const auto cfg = parse_config(
        "[dataset]\nper_cell = 20\n[train]\nepochs = 3\n[fcos]\nwarm_epochs = 2\nprobe_epochs = 2\nfinal_epochs = 2\n"
        "[baseline]\nmethod = probe-layer\nfinetune_epochs = 2\n");
    std::vector<std::string> digests;
    for (const char* run : {"a9_first", "a9_second"}) {
        const auto dir = h.out() / run;
        fs::remove_all(dir);
        Pipeline p(cfg, dir, 1);
        p.run();
        std::string bytes;
        for (auto s : {Stage::Final, Stage::Baseline}) {
            std::ifstream in(p.artifact(s), std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            bytes += ss.str();
        }
        digests.push_back(bytes);
    }
    const bool same = digests[0] == digests[1] && !digests[0].empty();
    return {same, fmt::format("two single-worker runs: final and baseline checkpoints {} ({} bytes)", same ? "identical" : "differ", digests[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria A1-A9"};
    fs::path out = "acceptance_runs";
    unsigned workers = 1;
    bool cache = false, verbose = false;
    std::vector<std::string> only;
    app.add_option("--out", out, "Working directory");
    app.add_option("--workers", workers)->check(CLI::PositiveNumber);
    app.add_option("--only", only, "Criteria to run, e.g. A5 A8")->delimiter(',');
    app.add_flag("--cache", cache, "Reuse trained reference models stored under --out");
    app.add_flag("-v,--verbose", verbose);
    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

    Harness h(out, workers, cache);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"A1", a1_gradients},
        {"A2", a2_linkage},
        {"A3", a3_fusion},
        {"A4", a4_sweep},
        {"A5", [&] { return a5_retention(h); }},
        {"A6", [&] { return a6_collapse(h); }},
        {"A7", [&] { return a7_scratch(h); }},
        {"A8", [&] { return a8_ablation(h); }},
        {"A9", [&] { return a9_determinism(h); }},
    };
    const std::set<std::string> selected(only.begin(), only.end());
    int failed = 0, ran = 0;
    for (const auto& [id, fn] : criteria) {
        if (!selected.empty() && !selected.count(id)) continue;
        ++ran;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.pass) ++failed;
        fmt::print("{} {} {} [{:.1f} s]\n", id, o.pass ? "PASS" : "FAIL", o.detail, seconds_since(t0));
        std::fflush(stdout);
    }
    fmt::print("{}/{} criteria passed\n", ran - failed, ran);
    return failed ? 1 : 0;
}
