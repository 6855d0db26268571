#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fcos/config.hpp"
#include "fcos/metrics.hpp"

namespace fcos {

enum class Stage { Data, Train, Stage1, Lacd, Final, Baseline, Report };

/// CLI names: gen-data, train, prune-channels, lacd, finetune, baseline, report.
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// Output root: explicit flag, then config [output] dir, then $FCOS_OUT, then ./fcos_out.
std::filesystem::path resolve_output_dir(const std::optional<std::filesystem::path>& flag, const ExperimentConfig& cfg);

/// Runs the experiment stages against one output directory.
///
/// Every stage artifact carries a content key in its file name: the SHA-256 of the config
/// sections the stage depends on, chained with its upstream stage key. A stage reads its
/// inputs only from artifacts whose key matches the current config, so outputs of different
/// configs never mix. `manifest.json` records the key of every completed stage.
class Pipeline {
public:
    Pipeline(ExperimentConfig cfg, std::filesystem::path out, unsigned workers = 1);

    const ExperimentConfig& config() const { return cfg_; }
    const std::filesystem::path& out_dir() const { return out_; }

    std::string key(Stage s) const;
    /// Primary artifact of a stage (checkpoint or dataset file).
    std::filesystem::path artifact(Stage s) const;
    std::filesystem::path plan_path() const;
    std::filesystem::path profile_path() const;

    void gen_data();
    void train();
    void prune_channels();
    void lacd();
    void finetune();
    void baseline();
    void report();

    /// Accuracy of a checkpoint on a split of this config's dataset.
    Evaluation evaluate(const std::filesystem::path& checkpoint, Split split = Split::Test) const;

    /// Runs `from` and every later stage. With `resume`, the artifacts of earlier stages must
    /// already exist under the current keys; otherwise they are recomputed first.
    void run(Stage from = Stage::Data, bool resume = false);

    /// Throws ConfigError when the artifact of `s` is missing or was produced under a
    /// different config (manifest key mismatch).
    void require(Stage s) const;

private:
    void write_snapshot() const;
    void record(Stage s) const;

    ExperimentConfig cfg_;
    std::filesystem::path out_;
    unsigned workers_;
};

}  // namespace fcos
