#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tmr/model.hpp"
#include "tmr/replay_buffer.hpp"

namespace tmr {

struct CheckpointMeta {
    long step = 0;
    std::string config_hash;
    std::map<std::string, std::string> extra;  // mode plus whatever rebuilds the model
};

/// Writes <stem>.manifest (text: tensor names/shapes/dtype/offsets, step,
/// config hash, meta) and <stem>.blob (little-endian raw doubles, row-major
/// per tensor). Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& stem, ModelParams& model, const CheckpointMeta& meta,
                     const ReplayBuffer* buffer = nullptr);

struct LoadedCheckpoint {
    std::unique_ptr<ModelParams> model;
    CheckpointMeta meta;
    // Buffer entries plus the next-id counter, when the checkpoint carried them.
    std::optional<std::pair<std::vector<BufferEntry>, std::uint64_t>> buffer;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace tmr
