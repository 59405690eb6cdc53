#include "pvp/interchange.hpp"

#include <cmath>
#include <sstream>

#include "pvp/error.hpp"
#include "pvp/io.hpp"

namespace pvp {
namespace {

constexpr std::string_view kMagic = "PVPE";
constexpr std::size_t kHeaderSize = 24;

}  // namespace

std::string_view role_name(EmbeddingRole role) {
    switch (role) {
        case EmbeddingRole::global_text: return "global_text";
        case EmbeddingRole::pvp_visual: return "pvp_visual";
        case EmbeddingRole::text_prompt: return "text_prompt";
        case EmbeddingRole::adapted: return "adapted";
        case EmbeddingRole::test_image: return "test_image";
    }
    return "unknown";
}

EmbeddingRole parse_role(std::string_view name) {
    for (std::uint8_t r = 0; r <= 4; ++r) {
        const auto role = static_cast<EmbeddingRole>(r);
        if (role_name(role) == name) return role;
    }
    throw InputError("unknown embedding role '" + std::string(name) + "'");
}

double EmbeddingBatch::max_norm_deviation() const {
    double worst = 0.0;
    for (std::size_t r = 0; r < rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < dim(); ++c) s += values.at(r, c) * values.at(r, c);
        worst = std::max(worst, std::abs(std::sqrt(s) - 1.0));
    }
    return worst;
}

std::filesystem::path labels_sidecar(const std::filesystem::path& path) {
    auto p = path;
    p += ".labels";
    return p;
}

std::string encode_embeddings(const EmbeddingBatch& batch) {
    if (batch.values.rank() != 2 || batch.rows() == 0) throw ParameterError("embedding batch needs at least one row");
    if (!batch.labels.empty() && batch.labels.size() != batch.rows()) {
        throw ParameterError("embedding labels must be empty or one per row");
    }
    io::ByteWriter w;
    w.bytes(kMagic);
    w.u32(kEmbeddingFormatVersion);
    w.u32(static_cast<std::uint32_t>(batch.rows()));
    w.u32(static_cast<std::uint32_t>(batch.dim()));
    w.u8(static_cast<std::uint8_t>(batch.role));
    w.zeros(7);
    for (double v : batch.values.data()) w.f32(static_cast<float>(v));
    return w.take();
}

EmbeddingBatch decode_embeddings(std::string_view bytes) {
    io::ByteReader r(bytes);
    if (bytes.size() < kHeaderSize) {
        throw FormatError("truncated header: expected " + std::to_string(kHeaderSize) + " bytes, got " +
                              std::to_string(bytes.size()),
                          bytes.size());
    }
    if (r.bytes(4) != kMagic) throw FormatError("bad magic, expected \"PVPE\"", 0);
    const auto version = r.u32();
    if (version != kEmbeddingFormatVersion) {
        throw FormatError("unsupported version " + std::to_string(version), 4);
    }
    const auto rows = r.u32();
    const auto dim = r.u32();
    const auto role = r.u8();
    if (role > 4) throw FormatError("unknown role tag " + std::to_string(role), 16);
    r.bytes(7);
    const std::uint64_t expected = kHeaderSize + 4ULL * rows * dim;
    if (bytes.size() != expected) {
        throw FormatError("payload length mismatch: expected " + std::to_string(expected) + " bytes in total, got " +
                              std::to_string(bytes.size()),
                          std::min<std::uint64_t>(bytes.size(), expected));
    }
    EmbeddingBatch batch;
    batch.role = static_cast<EmbeddingRole>(role);
    batch.values = Tensor(Shape{rows, dim});
    for (auto& v : batch.values.data()) v = static_cast<double>(r.f32());
    return batch;
}

void write_embeddings(const EmbeddingBatch& batch, const std::filesystem::path& path) {
    io::write_file(path, encode_embeddings(batch));
    if (!batch.labels.empty()) {
        std::ostringstream os;
        for (const auto& l : batch.labels) os << l << '\n';
        io::write_file(labels_sidecar(path), os.str());
    }
}

EmbeddingBatch read_embeddings(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw InputError("no such embedding file: " + path.string());
    auto batch = decode_embeddings(io::read_file(path));
    const auto sidecar = labels_sidecar(path);
    if (std::filesystem::exists(sidecar)) {
        for (auto& line : io::read_lines(sidecar)) {
            if (!line.empty() && line[0] == '#') continue;
            batch.labels.push_back(std::move(line));
        }
        if (batch.labels.size() != batch.rows()) {
            throw InputError("sidecar " + sidecar.string() + " has " + std::to_string(batch.labels.size()) +
                             " labels for " + std::to_string(batch.rows()) + " rows");
        }
    }
    return batch;
}

}  // namespace pvp
