#pragma once

#include <filesystem>
#include <string>

#include "framescope/layout.hpp"
#include "framescope/rollout.hpp"

namespace framescope {

// On-disk attention capture: meta.json plus one raw array file per layer
// named layer_<l>, row-major float32 of shape (H, N, N), little-endian.
struct DumpMeta {
    int format_version = 1;
    std::string model_id;
    int n = 0;
    int l = 0;
    int h = 0;
    std::string dtype = "f32";
    std::string mask = "causal";
    std::string prompt;
    std::string framing;
    TokenLayout layout;
};

void save_dump(const HeadAttentionStack& stack, const TokenLayout& layout, DumpMeta meta,
               const std::filesystem::path& dir);

struct LoadedDump {
    HeadAttentionStack stack;
    TokenLayout layout;
    DumpMeta meta;
};

// Validates array shapes against the meta record; any mismatch raises
// DumpFormatError. Round-trips are lossless at 32-bit precision.
LoadedDump load_dump(const std::filesystem::path& dir);

}  // namespace framescope
