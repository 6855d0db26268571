#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "fcos/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kBadConfig = 2, kNumeric = 3, kBadFile = 4 };

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    unsigned workers = 1;
    std::string resume;
    bool verbose = false;
};

fcos::Pipeline make_pipeline(const Globals& g) {
    std::filesystem::path config = g.config;
    if (config.empty() && !g.resume.empty() && std::filesystem::exists(std::filesystem::path(g.resume) / "config.resolved.ini"))
        config = std::filesystem::path(g.resume) / "config.resolved.ini";
    auto cfg = config.empty() ? fcos::parse_config("") : fcos::load_config(config);
    if (g.seed) cfg.override_seed(*g.seed);
    std::optional<std::filesystem::path> out;
    if (!g.out.empty()) out = g.out;
    else if (!g.resume.empty()) out = g.resume;
    return fcos::Pipeline(std::move(cfg), fcos::resolve_output_dir(out, cfg), g.workers);
}

void print_evaluation(const fcos::Evaluation& ev) {
    fmt::print("accuracy {:.2f}% over {} samples\n", 100 * ev.accuracy, ev.samples);
    for (const auto& [snr, acc] : ev.per_snr) fmt::print("  {:>5g} dB  {:.2f}%\n", snr, 100 * acc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage channel fusion and layer-collapse pruning for 1D signal classifiers"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "Experiment config (INI)")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Override every seed in the config");
    app.add_option("--out", g.out, "Output directory (default: $FCOS_OUT or ./fcos_out)");
    app.add_option("--workers", g.workers, "Worker threads for data generation and probing")->check(CLI::PositiveNumber);
    app.add_option("--resume", g.resume, "Resume in an existing output directory; earlier stages must match the config")->check(CLI::ExistingDirectory);
    app.add_flag("-v,--verbose", g.verbose, "Log every training epoch");

    auto* gen = app.add_subcommand("gen-data", "Generate (or ingest) the dataset");
    auto* train = app.add_subcommand("train", "Train the unpruned model");
    auto* prune = app.add_subcommand("prune-channels", "Stage 1: similarity-clustered channel fusion");
    auto* lacd = app.add_subcommand("lacd", "Stage 2: warm fine-tune, probe, diagnose and remove collapsed layers");
    auto* finetune = app.add_subcommand("finetune", "Final fine-tune of the LaCD output");
    auto* evaluate = app.add_subcommand("evaluate", "Accuracy of a checkpoint, overall and per SNR");
    std::string checkpoint, split = "test";
    evaluate->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate (default: the final checkpoint)");
    evaluate->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    auto* baseline = app.add_subcommand("baseline", "Prune with the configured baseline method and fine-tune");
    auto* report = app.add_subcommand("report", "Write report.csv, report.md, per_snr.csv and accuracy_curve.csv");
    auto* run = app.add_subcommand("run", "Full pipeline");
    std::string stage = "gen-data";
    run->add_option("--stage", stage, "First stage to (re)compute")
        ->check(CLI::IsMember({"gen-data", "train", "prune-channels", "lacd", "finetune", "baseline", "report"}));

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        auto p = make_pipeline(g);
        if (*gen) p.gen_data();
        else if (*train) p.train();
        else if (*prune) p.prune_channels();
        else if (*lacd) p.lacd();
        else if (*finetune) p.finetune();
        else if (*evaluate) print_evaluation(p.evaluate(checkpoint.empty() ? p.artifact(fcos::Stage::Final) : std::filesystem::path(checkpoint), fcos::split_from_string(split)));
        else if (*baseline) p.baseline();
        else if (*report) p.report();
        else if (*run) p.run(fcos::stage_from_string(stage), !g.resume.empty());
        return kOk;
    } catch (const fcos::ConfigError& e) {
        spdlog::error("{}", e.what());
        return kBadConfig;
    } catch (const fcos::UsageError& e) {
        spdlog::error("{}", e.what());
        return kBadConfig;
    } catch (const fcos::NumericError& e) {
        spdlog::error("{}", e.what());
        return kNumeric;
    } catch (const fcos::FormatError& e) {
        spdlog::error("{}", e.what());
        return kBadFile;
    } catch (const fcos::IoError& e) {
        spdlog::error("{}", e.what());
        return kBadFile;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kFailure;
    }
}
