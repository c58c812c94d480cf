#pragma once

// Binary checkpoint: 8-byte magic "NSVDCKPT", u64 LE descriptor length, JSON
// descriptor, u64 LE double count, then that many little-endian doubles. The
// descriptor lists blocks in payload order, so loading is bit-exact.

#include <filesystem>
#include <string>
#include <vector>

#include "nestsvd/models.hpp"

namespace nestsvd {

struct CheckpointEntry {
    std::string name;
    ModelSpec spec;
    ModelParams params;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

}  // namespace nestsvd
