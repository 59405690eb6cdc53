#include "pvp/checkpoint.hpp"

#include <map>

#include "pvp/error.hpp"
#include "pvp/io.hpp"

namespace pvp {
namespace {

constexpr std::string_view kMagic = "PVPC";

using Sections = std::map<std::string, Tensor>;

void write_section(io::ByteWriter& w, std::string_view name, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u64(e);
    for (double v : t.data()) w.f64(v);
}

void put_adapter(Sections& s, std::string_view prefix, const AdapterWeights& a) {
    const std::string p(prefix);
    s.emplace(p + ".w1", a.w1);
    s.emplace(p + ".b1", a.b1);
    s.emplace(p + ".w2", a.w2);
    s.emplace(p + ".b2", a.b2);
}

Tensor take(Sections& s, const std::string& name, std::size_t offset_hint) {
    auto it = s.find(name);
    if (it == s.end()) throw FormatError("missing tensor section '" + name + "'", offset_hint);
    Tensor t = std::move(it->second);
    s.erase(it);
    return t;
}

AdapterWeights take_adapter(Sections& s, std::string_view prefix, std::size_t offset_hint) {
    const std::string p(prefix);
    return {take(s, p + ".w1", offset_hint), take(s, p + ".b1", offset_hint), take(s, p + ".w2", offset_hint),
            take(s, p + ".b2", offset_hint)};
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.stage != 1 && ckpt.stage != 2) throw ParameterError("checkpoint stage must be 1 or 2");
    nlohmann::json meta;
    meta["seed"] = ckpt.seed;
    meta["stage"] = ckpt.stage;
    meta["classes"] = ckpt.class_names;
    meta["encoder"] = {
        {"embed_dim", ckpt.encoder.embed_dim},
        {"patch_size", ckpt.encoder.patch_size},
        {"max_text_length", ckpt.encoder.max_text_length},
        {"image_size", ckpt.encoder.image_size},
        {"seed", ckpt.encoder.seed},
        {"digest", ckpt.encoder_digest},
    };
    meta["hyperparameters"] = ckpt.hyperparameters;
    meta["pvp_embedding_space"] = ckpt.pvp.embedding_space;
    if (ckpt.adapter) {
        meta["adapter"] = {{"lambda", ckpt.adapter->lambda}, {"normalize", ckpt.adapter->normalize}};
    }

    Sections sections;
    sections.emplace("pvp", ckpt.pvp.values);
    if (ckpt.prompts) {
        sections.emplace("prompts.context", ckpt.prompts->context);
        sections.emplace("prompts.class_names", ckpt.prompts->class_names);
    }
    if (ckpt.adapter) {
        put_adapter(sections, "adapter.image", ckpt.adapter->image);
        put_adapter(sections, "adapter.text", ckpt.adapter->text);
    }

    io::ByteWriter w;
    w.bytes(kMagic);
    w.u32(kCheckpointFormatVersion);
    w.u32(static_cast<std::uint32_t>(ckpt.stage));
    const auto json = meta.dump();
    w.u32(static_cast<std::uint32_t>(json.size()));
    w.bytes(json);
    w.u32(static_cast<std::uint32_t>(sections.size()));
    for (const auto& [name, t] : sections) write_section(w, name, t);
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    io::ByteReader r(bytes);
    if (bytes.size() < 4 || r.bytes(4) != kMagic) throw FormatError("bad magic, expected \"PVPC\"", 0);
    const auto version = r.u32();
    if (version != kCheckpointFormatVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    const auto stage = r.u32();
    if (stage != 1 && stage != 2) throw FormatError("invalid stage tag " + std::to_string(stage), 8);
    const auto json_len = r.u32();
    const auto json_offset = r.offset();
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.bytes(json_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt hyperparameter block: ") + e.what(), json_offset);
    }

    Sections sections;
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.u32();
        std::string name(r.bytes(name_len));
        const auto rank = r.u32();
        if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), r.offset() - 4);
        Shape shape(rank);
        for (auto& e : shape) e = r.u64();
        const auto n = shape_size(shape);
        if (n > r.remaining() / 8) {
            throw FormatError("tensor '" + name + "' needs " + std::to_string(n * 8) + " bytes, only " +
                                  std::to_string(r.remaining()) + " available",
                              r.offset());
        }
        std::vector<double> data(n);
        for (auto& v : data) v = r.f64();
        sections.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (!r.at_end()) throw FormatError("trailing bytes after last section", r.offset());

    Checkpoint ckpt;
    try {
        ckpt.stage = static_cast<int>(stage);
        ckpt.seed = meta.at("seed").get<std::uint64_t>();
        ckpt.class_names = meta.at("classes").get<std::vector<std::string>>();
        const auto& enc = meta.at("encoder");
        ckpt.encoder.embed_dim = enc.at("embed_dim").get<std::size_t>();
        ckpt.encoder.patch_size = enc.at("patch_size").get<std::size_t>();
        ckpt.encoder.max_text_length = enc.at("max_text_length").get<std::size_t>();
        ckpt.encoder.image_size = enc.at("image_size").get<std::size_t>();
        ckpt.encoder.seed = enc.at("seed").get<std::uint64_t>();
        ckpt.encoder_digest = enc.at("digest").get<std::string>();
        ckpt.hyperparameters = meta.at("hyperparameters");
        ckpt.pvp.embedding_space = meta.at("pvp_embedding_space").get<bool>();
        const auto end = r.offset();
        ckpt.pvp.values = take(sections, "pvp", end);
        if (sections.contains("prompts.context")) {
            ckpt.prompts = TextPromptSet{take(sections, "prompts.context", end), take(sections, "prompts.class_names", end)};
        }
        if (meta.contains("adapter")) {
            DualAdapter a;
            a.lambda = meta["adapter"].at("lambda").get<double>();
            a.normalize = meta["adapter"].at("normalize").get<bool>();
            a.image = take_adapter(sections, "adapter.image", end);
            a.text = take_adapter(sections, "adapter.text", end);
            ckpt.adapter = std::move(a);
        }
        if (!sections.empty()) throw FormatError("unexpected tensor section '" + sections.begin()->first + "'", end);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("incomplete hyperparameter block: ") + e.what(), json_offset);
    }
    if (ckpt.pvp.values.rank() == 0 || ckpt.pvp.classes() != ckpt.class_names.size()) {
        throw FormatError("pseudo-visual prompt count does not match the class list", json_offset);
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    io::write_file(path, encode_checkpoint(ckpt));
}

void require_compatible(const Checkpoint& ckpt, const FrozenEncoderPair& encoders) {
    if (ckpt.encoder_digest != encoders.digest()) {
        throw IncompatibleError("checkpoint encoder digest " + ckpt.encoder_digest.substr(0, 12) +
                                " does not match the current encoders (" + encoders.digest().substr(0, 12) +
                                "); was it trained with a different encoder seed, vocabulary or size?");
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const FrozenEncoderPair* encoders) {
    if (!std::filesystem::exists(path)) throw InputError("no such checkpoint: " + path.string());
    auto ckpt = decode_checkpoint(io::read_file(path));
    if (encoders) require_compatible(ckpt, *encoders);
    return ckpt;
}

}  // namespace pvp
