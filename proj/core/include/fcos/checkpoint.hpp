#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fcos/container.hpp"
#include "fcos/model_graph.hpp"

namespace fcos {

struct TrainingMeta {
    std::size_t epochs = 0;
    std::uint64_t seed = 0;
    std::string dataset_fingerprint;
    nlohmann::json extra = nlohmann::json::object();

    friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

/// Architecture descriptor: every node, unit and coupled group, without tensor payloads.
nlohmann::json describe_graph(const ModelGraph& model);

Container checkpoint_container(const ModelGraph& model, const TrainingMeta& meta = {});
ModelGraph graph_from_container(const Container& c, TrainingMeta* meta = nullptr);

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path, const TrainingMeta& meta = {});
/// Throws FormatError (BadMagic, VersionMismatch, Truncated, ChecksumMismatch, Malformed) or IoError.
ModelGraph load_checkpoint(const std::filesystem::path& path, TrainingMeta* meta = nullptr);

}  // namespace fcos
