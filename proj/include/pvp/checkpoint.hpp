#pragma once

// "PVPC" checkpoint files, little-endian:
//
//   magic "PVPC" | u32 version | u32 stage | u32 json length | canonical JSON
//   | u32 section count | sections...
//
// Each section is a named f64 tensor:
//   u32 name length | name | u32 rank | u64 extents[rank] | f64 payload
//
// The JSON block carries the seed, class list, hyperparameters and the frozen
// encoder configuration with its digest. Object keys are sorted, so a
// load → save cycle reproduces the input byte for byte.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pvp/encoders.hpp"
#include "pvp/model.hpp"

namespace pvp {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
    int stage = 1;
    std::uint64_t seed = 0;
    std::vector<std::string> class_names;
    EncoderConfig encoder;
    std::string encoder_digest;
    nlohmann::json hyperparameters = nlohmann::json::object();
    PseudoVisualPrompt pvp;
    std::optional<TextPromptSet> prompts;
    std::optional<DualAdapter> adapter;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// FormatError on corrupt files. When `encoders` is given, a digest mismatch raises IncompatibleError.
Checkpoint load_checkpoint(const std::filesystem::path& path, const FrozenEncoderPair* encoders = nullptr);

/// IncompatibleError unless the checkpoint was produced against `encoders`.
void require_compatible(const Checkpoint& ckpt, const FrozenEncoderPair& encoders);

}  // namespace pvp
