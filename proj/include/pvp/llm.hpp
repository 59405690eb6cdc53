#pragma once

// Text-generation backends for corpus construction.
//
// A request is a prompt plus a nonce. The nonce identifies the sample index in
// the generation loop, so asking the same prompt twice at different indices
// can give different sentences while every (seed, prompt, nonce) triple stays
// reproducible.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pvp {

struct LlmRequest {
    std::string prompt;
    std::uint64_t nonce = 0;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;
    /// Reply text. Implementations must be safe to call from several threads.
    virtual std::string complete(const LlmRequest& request) const = 0;
};

struct MockLlmConfig {
    std::uint64_t seed = 0;
    /// Probability that a rationality query is answered "Unlikely.".
    double unlikely_rate = 0.0;
    /// Probability that a generated sentence mentions none of the keywords or their synonyms.
    double synonym_free_rate = 0.0;
    /// Probability of replacing a keyword by one of its synonyms.
    double synonym_rate = 0.3;
    /// Class name → surface synonyms the mock may use instead of the name.
    std::map<std::string, std::vector<std::string>> synonyms;
};

/// Deterministic stand-in LLM: a pure function of (seed, prompt, nonce).
class MockLlm final : public LlmClient {
public:
    explicit MockLlm(MockLlmConfig config);
    std::string complete(const LlmRequest& request) const override;

    /// Every word the mock can emit besides keywords and synonyms.
    static std::vector<std::string> lexicon();
    /// Sentence built only from filler words.
    static bool is_filler_sentence(std::string_view sentence);

private:
    std::string generate(const std::vector<std::string>& keywords, std::uint64_t nonce) const;
    MockLlmConfig config_;
};

struct HttpLlmConfig {
    std::string endpoint;  ///< e.g. http://localhost:8080/v1/chat/completions
    std::string model;
    std::chrono::milliseconds timeout{30000};
    int max_retries = 3;
    /// Replies are cached here keyed by a hash of (endpoint, model, prompt, nonce). Empty disables caching.
    std::filesystem::path cache_dir;
    /// Defaults to the PVP_LLM_KEY environment variable.
    std::optional<std::string> api_key;
};

/// Chat-completion style client. POSTs {model, messages:[{role:"user", content}]}
/// and returns choices[0].message.content. Failures after the retries raise TransportError.
class HttpLlm final : public LlmClient {
public:
    explicit HttpLlm(HttpLlmConfig config);
    std::string complete(const LlmRequest& request) const override;
    std::filesystem::path cache_path(const LlmRequest& request) const;

private:
    HttpLlmConfig config_;
    std::string scheme_host_;
    std::string path_;
};

}  // namespace pvp
