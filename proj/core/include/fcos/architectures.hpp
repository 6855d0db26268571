#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcos/model_graph.hpp"

namespace fcos {

/// Knobs for the two reference classifiers.
///
/// plain-cnn1d: one conv(k)+bn+relu+maxpool(2) layer per entry of `widths`, then global
/// average pooling and a dense head.
/// residual-cnn1d: conv stem, then one stage per entry of `widths` with `blocks_per_stage`
/// basic blocks each (conv-bn-relu-conv-bn plus shortcut). The first block of every later
/// stage halves the length and uses a 1x1 projection shortcut.
struct ArchitectureSpec {
    std::string name = "plain-cnn1d";
    std::vector<std::size_t> widths;
    std::size_t kernel = 0;  // 0 selects the architecture default (8 plain, 5 residual)
    std::size_t blocks_per_stage = 2;
    bool batchnorm = true;  // plain-cnn1d only
    std::size_t in_channels = 2;
    std::size_t in_length = 128;
    std::size_t num_classes = 4;
    std::uint64_t seed = 0;
};

/// Desk-scale defaults: plain [16,32,64,64], residual [8,16,32] x 2 blocks.
ArchitectureSpec default_architecture(const std::string& name);

/// Throws ConfigError for unknown names or empty widths.
ModelGraph build_model(const ArchitectureSpec& spec);

/// Kaiming-uniform (fan-in) weights, zero biases, BN gamma=1 beta=0 and fresh running stats.
void initialize_parameters(ModelGraph& model, std::uint64_t seed);

/// Same-padding split (left, right) so that output length is ceil(length / stride).
std::pair<std::size_t, std::size_t> same_padding(std::size_t length, std::size_t kernel, std::size_t stride);

}  // namespace fcos
