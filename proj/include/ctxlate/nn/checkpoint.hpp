// Checkpoint container: "CTXCKPT1" magic, a little-endian u64 header
// length, a JSON header describing every tensor, then raw float32
// little-endian payload (parameters in registry order, then optimizer
// moments). Loading validates names, counts, and payload size.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxlate/nn/adam.hpp"
#include "ctxlate/nn/networks.hpp"

namespace ctxlate::nn {

struct CheckpointNet {
    std::string name;
    std::vector<ParamRef> params;
    Adam* opt = nullptr;  // optional; moments saved/restored when present
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<CheckpointNet>& nets);

/// Restores parameters (and optimizer moments where opt is set) in place;
/// returns the stored meta block. Throws std::runtime_error on any
/// structural mismatch.
nlohmann::json load_checkpoint(const std::filesystem::path& path,
                               const std::vector<CheckpointNet>& nets);

/// Reads just the meta block (for `translate`, which only needs to know how
/// to rebuild the generators before a full load).
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace ctxlate::nn
