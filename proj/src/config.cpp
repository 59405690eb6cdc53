#include "pvp/config.hpp"

#include <charconv>
#include <functional>
#include <map>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "pvp/error.hpp"
#include "pvp/io.hpp"

namespace pvp {
namespace {

enum class Kind { integer, real, boolean, text };

struct Setting {
    std::string key;
    Kind kind;
    std::function<void(StageConfig&, std::string_view)> set;
    std::function<nlohmann::json(const StageConfig&)> get;
};

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    T v{};
    const auto* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, v);
    if (r.ec != std::errc{} || r.ptr != end) {
        throw ParameterError("invalid value '" + std::string(text) + "' for " + std::string(key));
    }
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ParameterError("invalid value '" + std::string(text) + "' for " + std::string(key) + " (expected true/false)");
}

template <class Member>
Setting size_setting(std::string key, Member member) {
    return {key, Kind::integer,
            [key, member](StageConfig& c, std::string_view v) {
                if (!v.empty() && v.front() == '-') throw ParameterError(key + " must be non-negative");
                member(c) = parse_number<std::size_t>(key, v);
            },
            [member](const StageConfig& c) { return nlohmann::json(member(c)); }};
}

template <class Member>
Setting u64_setting(std::string key, Member member) {
    return {key, Kind::integer,
            [key, member](StageConfig& c, std::string_view v) { member(c) = parse_number<std::uint64_t>(key, v); },
            [member](const StageConfig& c) { return nlohmann::json(member(c)); }};
}

template <class Member>
Setting real_setting(std::string key, Member member) {
    return {key, Kind::real, [key, member](StageConfig& c, std::string_view v) { member(c) = parse_number<double>(key, v); },
            [member](const StageConfig& c) { return nlohmann::json(member(c)); }};
}

template <class Member>
Setting bool_setting(std::string key, Member member) {
    return {key, Kind::boolean, [key, member](StageConfig& c, std::string_view v) { member(c) = parse_bool(key, v); },
            [member](const StageConfig& c) { return nlohmann::json(member(c)); }};
}

template <class Member>
Setting variant_setting(std::string key, Member member) {
    return {key, Kind::text, [member](StageConfig& c, std::string_view v) { member(c) = parse_variant(v); },
            [member](const StageConfig& c) {
                return nlohmann::json(std::string(variant_name(member(c))));
            }};
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Setting>& settings() {
    static const std::vector<Setting> all{
        u64_setting("seed", FIELD(seed)),
        size_setting("batch_size", FIELD(batch_size)),
        size_setting("threads", FIELD(threads)),
        size_setting("stage1.epochs", FIELD(stage1.epochs)),
        real_setting("stage1.lr", FIELD(stage1.lr)),
        size_setting("stage1.prompt_extent", FIELD(stage1.prompt_extent)),
        bool_setting("stage1.embedding_space", FIELD(stage1.embedding_space)),
        size_setting("stage2.epochs", FIELD(stage2.epochs)),
        real_setting("stage2.lr_text", FIELD(stage2.lr_text)),
        real_setting("stage2.lr_pvp", FIELD(stage2.lr_pvp)),
        size_setting("stage2.context_length", FIELD(stage2.context_length)),
        real_setting("stage2.lambda", FIELD(stage2.lambda)),
        size_setting("stage2.adapter_hidden", FIELD(stage2.adapter_hidden)),
        bool_setting("stage2.normalize", FIELD(stage2.normalize)),
        real_setting("loss.margin", FIELD(loss.margin)),
        real_setting("loss.tau", FIELD(loss.tau)),
        real_setting("loss.gamma", FIELD(loss.gamma)),
        real_setting("loss.eta", FIELD(loss.eta)),
        real_setting("loss.nu", FIELD(loss.nu)),
        variant_setting("loss.vtc", FIELD(loss.vtc)),
        variant_setting("loss.visual", FIELD(loss.visual)),
        variant_setting("loss.text", FIELD(loss.text)),
        real_setting("loss.tau_ce", FIELD(loss.tau_ce)),
        real_setting("infer.alpha", FIELD(infer.alpha)),
        bool_setting("infer.adapt_queries", FIELD(infer.adapt_queries)),
        size_setting("encoder.embed_dim", FIELD(encoder.embed_dim)),
        size_setting("encoder.patch_size", FIELD(encoder.patch_size)),
        size_setting("encoder.max_text_length", FIELD(encoder.max_text_length)),
        size_setting("encoder.image_size", FIELD(encoder.image_size)),
        u64_setting("encoder.seed", FIELD(encoder.seed)),
    };
    return all;
}

#undef FIELD

const Setting& find_setting(std::string_view key) {
    for (const auto& s : settings()) {
        if (s.key == key) return s;
    }
    std::string valid;
    for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw ParameterError("unknown config key '" + std::string(key) + "'; valid keys: " + valid);
}

void flatten(const toml::table& table, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
    for (const auto& [k, node] : table) {
        const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
        if (const auto* sub = node.as_table()) {
            flatten(*sub, key, out);
        } else if (const auto* i = node.as_integer()) {
            out.emplace_back(key, std::to_string(i->get()));
        } else if (const auto* f = node.as_floating_point()) {
            out.emplace_back(key, format_double(f->get()));
        } else if (const auto* b = node.as_boolean()) {
            out.emplace_back(key, b->get() ? "true" : "false");
        } else if (const auto* s = node.as_string()) {
            out.emplace_back(key, s->get());
        } else {
            throw InputError("config key '" + key + "' has an unsupported value type");
        }
    }
}

}  // namespace

void StageConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ParameterError(msg);
    };
    require(batch_size >= 1, "batch_size must be at least 1");
    require(threads >= 1, "threads must be at least 1");
    require(stage1.lr >= 0.0, "stage1.lr must be non-negative");
    require(stage2.lr_text >= 0.0 && stage2.lr_pvp >= 0.0, "stage2 learning rates must be non-negative");
    require(stage2.context_length >= 1, "stage2.context_length must be at least 1");
    require(stage2.context_length + 1 <= encoder.max_text_length,
            "stage2.context_length must leave room for the class name within encoder.max_text_length");
    require(stage2.lambda >= 0.0 && stage2.lambda <= 1.0, "stage2.lambda must lie in [0, 1]");
    require(infer.alpha >= 0.0 && infer.alpha <= 1.0, "infer.alpha must lie in [0, 1]");
    require(encoder.embed_dim >= 1 && encoder.patch_size >= 1, "encoder dims must be positive");
    require(encoder.image_size % encoder.patch_size == 0, "encoder.image_size must be divisible by encoder.patch_size");
    const auto extent = stage1.prompt_extent ? stage1.prompt_extent : encoder.image_size;
    require(extent % encoder.patch_size == 0 && extent >= encoder.patch_size,
            "stage1.prompt_extent must be a positive multiple of encoder.patch_size");
    loss.validate();
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& s : settings()) k.push_back(s.key);
        return k;
    }();
    return keys;
}

void apply_setting(StageConfig& config, std::string_view key, std::string_view value) {
    find_setting(key).set(config, value);
}

std::string setting_value(const StageConfig& config, std::string_view key) {
    const auto j = find_setting(key).get(config);
    if (j.is_string()) return j.get<std::string>();
    if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
    if (j.is_number_float()) return format_double(j.get<double>());
    return j.dump();
}

nlohmann::json config_to_json(const StageConfig& config) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& s : settings()) out[s.key] = s.get(config);
    return out;
}

StageConfig config_from_json(const nlohmann::json& record) {
    StageConfig c;
    for (const auto& [key, value] : record.items()) {
        if (value.is_string()) {
            apply_setting(c, key, value.get<std::string>());
        } else if (value.is_number_float()) {
            apply_setting(c, key, format_double(value.get<double>()));
        } else {
            apply_setting(c, key, value.dump());
        }
    }
    return c;
}

StageConfig load_config(const std::filesystem::path& toml_path,
                        const std::vector<std::pair<std::string, std::string>>& overrides) {
    StageConfig c;
    if (!toml_path.empty()) {
        if (!std::filesystem::exists(toml_path)) throw InputError("no such config file: " + toml_path.string());
        toml::table table;
        try {
            table = toml::parse_file(toml_path.string());
        } catch (const toml::parse_error& e) {
            throw InputError("cannot parse " + toml_path.string() + ": " + std::string(e.description()));
        }
        std::vector<std::pair<std::string, std::string>> flat;
        flatten(table, "", flat);
        for (const auto& [k, v] : flat) apply_setting(c, k, v);
    }
    for (const auto& [k, v] : overrides) apply_setting(c, k, v);
    c.validate();
    return c;
}

void RunManifest::add_input(const std::filesystem::path& path) {
    inputs.emplace_back(path.string(), io::git_blob_id(io::read_file(path)));
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json in = nlohmann::json::array();
    for (const auto& [p, id] : inputs) in.push_back({{"path", p}, {"blob", id}});
    return {{"command", command}, {"argv", argv},        {"config", config_to_json(config)},
            {"seed", config.seed}, {"inputs", in},       {"outputs", outputs}};
}

void RunManifest::write(const std::filesystem::path& path) const { io::write_file(path, to_json().dump(2) + "\n"); }

}  // namespace pvp
