#pragma once

// "PVPE" embedding interchange files.
//
//   offset  size  field
//   0       4     magic "PVPE"
//   4       4     u32 version (1)
//   8       4     u32 rows
//   12      4     u32 dim
//   16      1     u8 role tag
//   17      7     reserved, zero
//   24      4·rows·dim  f32 payload, row-major
//
// All integers little-endian. An optional sidecar `<path>.labels` holds one
// UTF-8 row label per line.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pvp/tensor.hpp"

namespace pvp {

enum class EmbeddingRole : std::uint8_t {
    global_text = 0,
    pvp_visual = 1,
    text_prompt = 2,
    adapted = 3,
    test_image = 4,
};

std::string_view role_name(EmbeddingRole role);
EmbeddingRole parse_role(std::string_view name);

struct EmbeddingBatch {
    EmbeddingRole role = EmbeddingRole::global_text;
    Tensor values;                    ///< rows×dim
    std::vector<std::string> labels;  ///< empty or one per row

    std::size_t rows() const { return values.rows(); }
    std::size_t dim() const { return values.cols(); }
    /// Largest |‖row‖₂ − 1| over all rows.
    double max_norm_deviation() const;
};

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

std::filesystem::path labels_sidecar(const std::filesystem::path& path);

std::string encode_embeddings(const EmbeddingBatch& batch);
EmbeddingBatch decode_embeddings(std::string_view bytes);

/// Writes the file and, when labels are present, the sidecar.
void write_embeddings(const EmbeddingBatch& batch, const std::filesystem::path& path);
/// Reads the file and the sidecar if one exists. FormatError on bad magic, version or length.
EmbeddingBatch read_embeddings(const std::filesystem::path& path);

}  // namespace pvp
