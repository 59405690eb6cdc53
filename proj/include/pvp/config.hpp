#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pvp/encoders.hpp"
#include "pvp/losses.hpp"

namespace pvp {

struct StageConfig {
    std::uint64_t seed = 0;
    std::size_t batch_size = 32;
    std::size_t threads = 1;

    struct Stage1 {
        std::size_t epochs = 40;
        double lr = 0.1;
        std::size_t prompt_extent = 0;  ///< 0 selects encoder.image_size
        bool embedding_space = false;
    } stage1;

    struct Stage2 {
        std::size_t epochs = 20;
        double lr_text = 1e-4;
        double lr_pvp = 1e-6;
        std::size_t context_length = 16;
        double lambda = 0.5;
        std::size_t adapter_hidden = 0;  ///< 0 selects D/4
        bool normalize = true;
    } stage2;

    LossConfig loss;

    struct Infer {
        double alpha = 0.5;
        bool adapt_queries = true;  ///< pass test images through the image-side adapter
    } infer;

    EncoderConfig encoder;

    /// ParameterError naming the offending key when a value is out of range.
    void validate() const;
};

/// Every accepted key, in canonical order.
const std::vector<std::string>& config_keys();
/// Parses `value` for `key` and stores it. ParameterError for unknown keys
/// (the message lists the valid ones) or unparsable values.
void apply_setting(StageConfig& config, std::string_view key, std::string_view value);
/// Current value of a key rendered as text.
std::string setting_value(const StageConfig& config, std::string_view key);

/// Flat {key: value} record of the whole configuration, sorted by key.
nlohmann::json config_to_json(const StageConfig& config);
StageConfig config_from_json(const nlohmann::json& record);

/// Defaults, then the TOML file (if any), then `overrides` in order; flags win.
/// Nested tables and dotted keys are both accepted.
StageConfig load_config(const std::filesystem::path& toml_path,
                        const std::vector<std::pair<std::string, std::string>>& overrides = {});

struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    StageConfig config;
    std::vector<std::pair<std::string, std::string>> inputs;  ///< path, git-style blob id
    std::vector<std::string> outputs;

    void add_input(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void write(const std::filesystem::path& path) const;
};

}  // namespace pvp
