#include "fcos/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <iterator>

#include <spdlog/spdlog.h>

#include "fcos/baselines.hpp"
#include "fcos/checkpoint.hpp"
#include "fcos/hash.hpp"
#include "fcos/lacd.hpp"
#include "fcos/report.hpp"
#include "fcos/training.hpp"

namespace fcos {

namespace {

constexpr Stage kOrder[] = {Stage::Data, Stage::Train, Stage::Stage1, Stage::Lacd, Stage::Final, Stage::Baseline, Stage::Report};

std::string short_key(const std::string& k) { return k.substr(0, 12); }

nlohmann::json curve_json(const std::vector<CurvePoint>& c) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : c) j.push_back({p.phase, p.epoch, p.split, p.accuracy});
    return j;
}

std::vector<CurvePoint> curve_from_json(const nlohmann::json& j) {
    std::vector<CurvePoint> out;
    for (const auto& p : j) out.push_back({p.at(0).get<std::string>(), p.at(1).get<std::size_t>(), p.at(2).get<std::string>(), p.at(3).get<double>()});
    return out;
}

nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) return nlohmann::json::object();
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(p.string() + " is not valid JSON");
    }
}

std::string baseline_label(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::L1Channel: return "L1-norm";
        case BaselineMethod::RandomLayer: return "Random";
        case BaselineMethod::ProbeLayer: return "LCP";
    }
    return "?";
}

}  // namespace

std::string to_string(Stage s) {
    switch (s) {
        case Stage::Data: return "gen-data";
        case Stage::Train: return "train";
        case Stage::Stage1: return "prune-channels";
        case Stage::Lacd: return "lacd";
        case Stage::Final: return "finetune";
        case Stage::Baseline: return "baseline";
        case Stage::Report: return "report";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    for (auto st : kOrder)
        if (to_string(st) == s) return st;
    if (s == "data") return Stage::Data;
    if (s == "stage1") return Stage::Stage1;
    if (s == "final") return Stage::Final;
    throw ConfigError("unknown stage '" + s + "' (expected gen-data, train, prune-channels, lacd, finetune, baseline or report)");
}

std::filesystem::path resolve_output_dir(const std::optional<std::filesystem::path>& flag, const ExperimentConfig& cfg) {
    if (flag && !flag->empty()) return *flag;
    if (!cfg.output_dir.empty()) return cfg.output_dir;
    if (const char* env = std::getenv("FCOS_OUT"); env != nullptr && *env != '\0') return env;
    return "fcos_out";
}

Pipeline::Pipeline(ExperimentConfig cfg, std::filesystem::path out, unsigned workers)
    : cfg_(std::move(cfg)), out_(std::move(out)), workers_(std::max(1u, workers)) {}

std::string Pipeline::key(Stage s) const {
    switch (s) {
        case Stage::Data: {
            std::string text = "data|" + normalized_section(cfg_, "dataset");
            if (!cfg_.dataset.path.empty()) {
                std::ifstream in(cfg_.dataset.path, std::ios::binary);
                if (!in) throw ConfigError("dataset.path: cannot read " + cfg_.dataset.path.string());
                const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
                text += "|file=" + sha256_hex(bytes);
            }
            return sha256_hex(text);
        }
        case Stage::Train:
            return sha256_hex("train|" + key(Stage::Data) + normalized_section(cfg_, "model") + normalized_section(cfg_, "train"));
        case Stage::Stage1: {
            const auto& f = cfg_.fcos.fusion;
            return sha256_hex("stage1|" + key(Stage::Train) + "keep_ratio=" + format_number(f.keep_ratio) + ";similarity=" + to_string(f.metric) +
                              ";fusion=" + to_string(f.scheme) + ";order=" + to_string(f.order) + ";input=" + to_string(f.input_mode));
        }
        case Stage::Lacd: {
            const auto& f = cfg_.fcos;
            return sha256_hex("lacd|" + key(Stage::Stage1) + "beta=" + format_number(f.beta) + ";warm=" + std::to_string(f.warm_epochs) +
                              ";probe=" + std::to_string(f.probe_epochs) + ";features=" + to_string(f.features));
        }
        case Stage::Final: return sha256_hex("final|" + key(Stage::Lacd) + "epochs=" + std::to_string(cfg_.fcos.final_epochs));
        case Stage::Baseline: return sha256_hex("baseline|" + key(Stage::Train) + normalized_section(cfg_, "baseline"));
        case Stage::Report: {
            std::string text = "report|" + key(Stage::Final);
            if (cfg_.baseline.method) text += key(Stage::Baseline);
            return sha256_hex(text);
        }
    }
    throw UsageError("bad stage");
}

std::filesystem::path Pipeline::artifact(Stage s) const {
    switch (s) {
        case Stage::Data: return out_ / ("dataset-" + short_key(key(s)) + ".fcos");
        case Stage::Train: return out_ / ("baseline-" + short_key(key(s)) + ".ckpt");
        case Stage::Stage1: return out_ / ("stage1-" + short_key(key(s)) + ".ckpt");
        case Stage::Lacd: return out_ / ("lacd-" + short_key(key(s)) + ".ckpt");
        case Stage::Final: return out_ / ("final-" + short_key(key(s)) + ".ckpt");
        case Stage::Baseline: return out_ / ("compare-" + short_key(key(s)) + ".ckpt");
        case Stage::Report: return out_ / "report.csv";
    }
    throw UsageError("bad stage");
}

std::filesystem::path Pipeline::plan_path() const { return out_ / ("stage1-" + short_key(key(Stage::Stage1)) + ".plan"); }
std::filesystem::path Pipeline::profile_path() const { return out_ / ("probe_profile-" + short_key(key(Stage::Lacd)) + ".csv"); }

void Pipeline::write_snapshot() const {
    std::filesystem::create_directories(out_);
    std::ofstream out(out_ / "config.resolved.ini", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (out_ / "config.resolved.ini").string());
    out << to_ini(cfg_);
}

void Pipeline::record(Stage s) const {
    auto manifest = read_json(out_ / "manifest.json");
    manifest[to_string(s)] = {{"key", key(s)}, {"file", artifact(s).filename().string()}};
    std::ofstream out(out_ / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write manifest");
    out << manifest.dump(2) << '\n';
    write_snapshot();
}

void Pipeline::require(Stage s) const {
    if (std::filesystem::exists(artifact(s))) return;
    const auto manifest = read_json(out_ / "manifest.json");
    const auto name = to_string(s);
    if (manifest.contains(name) && manifest[name].value("key", "") != key(s)) {
        throw ConfigError("refusing to resume: the '" + name + "' artifact in " + out_.string() + " was produced under a different config (manifest key " +
                          short_key(manifest[name].value("key", "")) + ", current key " + short_key(key(s)) + ")");
    }
    throw ConfigError("missing '" + name + "' artifact " + artifact(s).string() + " for this config; run `fcos " + name + "` first");
}

void Pipeline::gen_data() {
    SignalDataset ds;
    if (!cfg_.dataset.path.empty()) {
        spdlog::info("ingesting dataset {}", cfg_.dataset.path.string());
        ds = ingest_external(cfg_.dataset.path);
    } else {
        spdlog::info("generating dataset ({} classes x {} SNRs x {})", cfg_.dataset.spec.classes.size(), cfg_.dataset.spec.snr_db.size(), cfg_.dataset.spec.per_cell);
        ds = generate_dataset(cfg_.dataset.spec, workers_);
    }
    save_dataset(ds, artifact(Stage::Data));
    record(Stage::Data);
}

void Pipeline::train() {
    require(Stage::Data);
    const auto ds = ingest_external(artifact(Stage::Data));
    auto spec = cfg_.model;
    spec.num_classes = ds.num_classes();
    spec.in_length = ds.length();
    spdlog::info("training {} for {} epochs", spec.name, cfg_.train.epochs);
    auto opts = cfg_.train_options("train", cfg_.train.epochs);
    opts.abort_checkpoint = out_ / "aborted-train.ckpt";
    auto res = train_model(build_model(spec), ds, opts);
    save_checkpoint(res.model, artifact(Stage::Train),
                    {res.best_epoch, cfg_.train.seed, dataset_fingerprint(ds), {{"stage", "train"}, {"curve", curve_json(res.curve)}}});
    record(Stage::Train);
}

void Pipeline::prune_channels() {
    require(Stage::Train);
    TrainingMeta meta;
    const auto model = load_checkpoint(artifact(Stage::Train), &meta);
    auto [pruned, plan] = prune_model_channels(model, cfg_.fcos.fusion);
    spdlog::info("stage 1: {} -> {} parameters", parameter_count(model), parameter_count(pruned));
    save_prune_plan(plan, plan_path());
    save_checkpoint(pruned, artifact(Stage::Stage1), {0, cfg_.train.seed, meta.dataset_fingerprint, {{"stage", "stage1"}}});
    record(Stage::Stage1);
}

void Pipeline::lacd() {
    require(Stage::Data);
    require(Stage::Stage1);
    const auto ds = ingest_external(artifact(Stage::Data));
    TrainingMeta meta;
    const auto stage1 = load_checkpoint(artifact(Stage::Stage1), &meta);
    auto opts = cfg_.lacd_options(workers_);
    opts.train.abort_checkpoint = out_ / "aborted-warm.ckpt";
    const auto r = lacd_diagnose(stage1, ds, opts);
    write_profile_csv(r.profile, r.diagnosis, r.removed, profile_path());
    nlohmann::json extra = {{"stage", "lacd"},
                            {"curve", curve_json(r.curve)},
                            {"profile", r.profile.acc},
                            {"flagged", r.diagnosis.flagged},
                            {"removed", r.removed}};
    save_checkpoint(r.pruned_model, artifact(Stage::Lacd), {cfg_.fcos.warm_epochs, cfg_.train.seed, meta.dataset_fingerprint, extra});
    record(Stage::Lacd);
}

void Pipeline::finetune() {
    require(Stage::Data);
    require(Stage::Lacd);
    const auto ds = ingest_external(artifact(Stage::Data));
    TrainingMeta meta;
    const auto model = load_checkpoint(artifact(Stage::Lacd), &meta);
    auto opts = cfg_.train_options("final", cfg_.fcos.final_epochs);
    opts.abort_checkpoint = out_ / "aborted-final.ckpt";
    auto res = train_model(model, ds, opts);
    save_checkpoint(res.model, artifact(Stage::Final),
                    {res.best_epoch, cfg_.train.seed, meta.dataset_fingerprint, {{"stage", "final"}, {"curve", curve_json(res.curve)}}});
    record(Stage::Final);
}

void Pipeline::baseline() {
    if (!cfg_.baseline.method) throw ConfigError("baseline.method is not set");
    require(Stage::Data);
    require(Stage::Train);
    const auto ds = ingest_external(artifact(Stage::Data));
    TrainingMeta meta;
    const auto model = load_checkpoint(artifact(Stage::Train), &meta);
    BaselineConfig bc{*cfg_.baseline.method, cfg_.baseline.keep_ratio, cfg_.baseline.count, cfg_.baseline.seed};
    const auto pruned = apply_baseline(model, ds, bc, cfg_.probe_options(workers_));
    auto opts = cfg_.train_options("baseline-finetune", cfg_.baseline.finetune_epochs);
    opts.abort_checkpoint = out_ / "aborted-baseline.ckpt";
    auto res = train_model(pruned, ds, opts);
    save_checkpoint(res.model, artifact(Stage::Baseline),
                    {res.best_epoch, cfg_.train.seed, meta.dataset_fingerprint,
                     {{"stage", "baseline"}, {"method", to_string(bc.method)}, {"curve", curve_json(res.curve)}}});
    record(Stage::Baseline);
}

Evaluation Pipeline::evaluate(const std::filesystem::path& checkpoint, Split split) const {
    require(Stage::Data);
    return fcos::evaluate(load_checkpoint(checkpoint), ingest_external(artifact(Stage::Data)), split);
}

void Pipeline::report() {
    require(Stage::Data);
    for (auto s : {Stage::Train, Stage::Stage1, Stage::Lacd, Stage::Final}) require(s);
    const bool with_baseline = cfg_.baseline.method.has_value();
    if (with_baseline) require(Stage::Baseline);

    const auto ds = ingest_external(artifact(Stage::Data));
    const std::size_t len = ds.length();
    TrainingMeta base_meta;
    const auto original = load_checkpoint(artifact(Stage::Train), &base_meta);
    const auto base_eval = fcos::evaluate(original, ds, Split::Test);
    const auto base_cost = count_params_flops(original, len);

    std::vector<PruneReport> reports;
    std::vector<CurvePoint> curve = curve_from_json(base_meta.extra.value("curve", nlohmann::json::array()));
    auto add = [&](Stage s, const std::string& method, const std::string& type, const std::string& tag) {
        TrainingMeta meta;
        const auto m = load_checkpoint(artifact(s), &meta);
        const auto ev = fcos::evaluate(m, ds, Split::Test);
        PruneReport r;
        r.method = method;
        r.pruning_type = type;
        r.stage = tag;
        r.original = base_cost;
        r.pruned = count_params_flops(m, len);
        r.original_acc = base_eval.accuracy;
        r.pruned_acc = ev.accuracy;
        r.per_snr = ev.per_snr;
        reports.push_back(std::move(r));
        const auto c = curve_from_json(meta.extra.value("curve", nlohmann::json::array()));
        curve.insert(curve.end(), c.begin(), c.end());
    };
    add(Stage::Stage1, "FCOS-stage1", "Channel", "stage1");
    add(Stage::Lacd, "FCOS-lacd", "Channel+Layer", "lacd");
    add(Stage::Final, "FCOS", "Channel+Layer", "final");
    if (with_baseline) {
        const auto m = *cfg_.baseline.method;
        add(Stage::Baseline, baseline_label(m), m == BaselineMethod::L1Channel ? "Channel" : "Layer", "baseline");
    }
    PruneReport orig;
    orig.method = "Original";
    orig.pruning_type = "-";
    orig.stage = "original";
    orig.original = orig.pruned = base_cost;
    orig.original_acc = orig.pruned_acc = base_eval.accuracy;
    orig.per_snr = base_eval.per_snr;
    reports.insert(reports.begin(), orig);

    emit_report(reports, out_);
    write_curve_csv(curve, out_ / "accuracy_curve.csv");
    record(Stage::Report);
    spdlog::info("report written to {}", (out_ / "report.md").string());
}

void Pipeline::run(Stage from, bool resume) {
    // a refused resume must leave the directory as it was
    if (resume)
        for (auto s : kOrder) {
            if (static_cast<int>(s) >= static_cast<int>(from)) break;
            if (s != Stage::Baseline || cfg_.baseline.method) require(s);
        }
    std::filesystem::create_directories(out_);
    write_snapshot();
    for (auto s : kOrder) {
        if (s == Stage::Baseline && !cfg_.baseline.method) continue;
        const bool before = static_cast<int>(s) < static_cast<int>(from);
        if (before) {
            if (resume) {
                require(s);
                spdlog::info("reusing {} ({})", to_string(s), artifact(s).filename().string());
                continue;
            }
            if (s != Stage::Report && std::filesystem::exists(artifact(s))) continue;
        }
        switch (s) {
            case Stage::Data: gen_data(); break;
            case Stage::Train: train(); break;
            case Stage::Stage1: prune_channels(); break;
            case Stage::Lacd: lacd(); break;
            case Stage::Final: finetune(); break;
            case Stage::Baseline: baseline(); break;
            case Stage::Report: report(); break;
        }
    }
}

}  // namespace fcos
