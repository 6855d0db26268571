#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fcos/architectures.hpp"
#include "fcos/baselines.hpp"
#include "fcos/dataset.hpp"
#include "fcos/fusion.hpp"
#include "fcos/lacd.hpp"
#include "fcos/optimizer.hpp"

namespace fcos {

struct DatasetSection {
    DatasetSpec spec;
    std::filesystem::path path;  // ingest this container instead of generating
};

struct TrainSection {
    double lr = 0.001;
    std::size_t batch = 128;
    std::size_t epochs = 30;
    OptimizerMethod optimizer = OptimizerMethod::Adam;
    std::uint64_t seed = 0;
};

struct FcosSection {
    FusionConfig fusion;
    double beta = 0.005;
    std::size_t warm_epochs = 20;
    std::size_t probe_epochs = 5;
    std::size_t final_epochs = 80;
    FeatureReduction features = FeatureReduction::GlobalAvgPool;
};

struct BaselineSection {
    std::optional<BaselineMethod> method;
    double keep_ratio = 0.5;
    std::size_t count = 1;
    std::uint64_t seed = 0;
    std::size_t finetune_epochs = 80;
};

/// Declarative experiment description. Every field has a default, so an empty file is valid.
struct ExperimentConfig {
    DatasetSection dataset;
    ArchitectureSpec model;
    TrainSection train;
    FcosSection fcos;
    BaselineSection baseline;
    std::filesystem::path output_dir;

    ExperimentConfig();

    /// Overrides every seed in the file.
    void override_seed(std::uint64_t seed);

    TrainOptions train_options(const std::string& phase, std::size_t epochs) const;
    ProbeOptions probe_options(unsigned workers) const;
    LacdOptions lacd_options(unsigned workers) const;
};

/// Parses INI text with sections [dataset], [model], [train], [fcos], [baseline], [output].
/// Unknown sections or keys and invalid values are collected and reported together in one
/// ConfigError, one "section.key: problem" line each.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text of one section (all keys, fixed order, shortest number formatting).
std::string normalized_section(const ExperimentConfig& cfg, const std::string& section);
/// Every section, defaults expanded. parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& cfg);

}  // namespace fcos
