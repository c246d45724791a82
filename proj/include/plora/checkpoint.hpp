#pragma once

#include <filesystem>
#include <optional>

#include "plora/peft.hpp"

namespace plora {

/// Versioned little-endian binary checkpoint: base layers (role, activation,
/// shape, row-major weights, bias), LoRA blocks, adapters and an optional
/// sparse mask. Round-trips bit-exactly.
struct Checkpoint {
    AdaptedModel model;
    std::optional<SparseMask> mask;

    bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace plora
