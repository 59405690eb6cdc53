#include <httplib.h>

#include "pvp/llm.hpp"

#include <cstdlib>
#include <regex>
#include <set>
#include <thread>

#include <json.hpp>

#include "pvp/error.hpp"
#include "pvp/io.hpp"
#include "pvp/random.hpp"
#include "pvp/text.hpp"

namespace pvp {
namespace {

constexpr std::string_view kKeywordMarker = "include keywords: ";
constexpr std::string_view kJudgeMarker = "Will the scene described in this text appear in reality?";

const std::vector<std::string> kOpeners{"A photo of", "There is", "Here we see", "This picture shows", "Look at",
                                        "A view of"};
const std::vector<std::string> kAdjectives{"small", "big", "red", "white", "old", "black", "young", "brown"};
const std::vector<std::string> kClosers{"in the park", "on the street", "near a house", "by the river",
                                        "at the station", "under a blue sky", "in the morning", ""};
const std::vector<std::string> kFillers{
    "The weather is calm and the sky looks clear today.",
    "It was a quiet afternoon with soft light everywhere.",
    "Everything looks peaceful on this warm summer evening.",
    "Nothing much happens here during the long winter night.",
    "The colors of the sunset fade slowly over the hills.",
};

std::string pluralize_word(const std::string& w) {
    static const std::map<std::string, std::string> irregular{
        {"person", "people"}, {"man", "men"}, {"woman", "women"}, {"child", "children"}, {"mouse", "mice"}};
    if (auto it = irregular.find(w); it != irregular.end()) return it->second;
    auto ends = [&](std::string_view s) { return w.size() >= s.size() && w.compare(w.size() - s.size(), s.size(), s) == 0; };
    if (ends("s") || ends("x") || ends("z") || ends("ch") || ends("sh")) return w + "es";
    if (w.size() > 1 && w.back() == 'y' && std::string_view("aeiou").find(w[w.size() - 2]) == std::string_view::npos) {
        return w.substr(0, w.size() - 1) + "ies";
    }
    return w + "s";
}

std::string pluralize(const std::string& phrase) {
    const auto space = phrase.rfind(' ');
    if (space == std::string::npos) return pluralize_word(phrase);
    return phrase.substr(0, space + 1) + pluralize_word(phrase.substr(space + 1));
}

std::string article(const std::string& next) {
    return std::string_view("aeiou").find(next.front()) != std::string_view::npos ? "an" : "a";
}

std::vector<std::string> parse_keywords(std::string_view prompt) {
    const auto at = prompt.find(kKeywordMarker);
    if (at == std::string_view::npos) return {};
    auto rest = prompt.substr(at + kKeywordMarker.size());
    if (!rest.empty() && rest.back() == '.') rest.remove_suffix(1);
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= rest.size()) {
        auto end = rest.find(", ", start);
        if (end == std::string_view::npos) end = rest.size();
        if (end > start) out.emplace_back(rest.substr(start, end - start));
        start = end + 2;
    }
    return out;
}

}  // namespace

MockLlm::MockLlm(MockLlmConfig config) : config_(std::move(config)) {
    for (double r : {config_.unlikely_rate, config_.synonym_free_rate, config_.synonym_rate}) {
        if (!(r >= 0.0 && r <= 1.0)) throw ParameterError("mock LLM rates must lie in [0, 1]");
    }
}

std::vector<std::string> MockLlm::lexicon() {
    std::set<std::string> words{"and", "a", "an", "two", "three", "some"};
    auto add = [&](const std::string& s) {
        for (auto& w : text::lemmas(s)) words.insert(w);
    };
    for (const auto* list : {&kOpeners, &kAdjectives, &kClosers, &kFillers}) {
        for (const auto& s : *list) add(s);
    }
    return {words.begin(), words.end()};
}

bool MockLlm::is_filler_sentence(std::string_view sentence) {
    return std::find(kFillers.begin(), kFillers.end(), sentence) != kFillers.end();
}

std::string MockLlm::generate(const std::vector<std::string>& keywords, std::uint64_t nonce) const {
    std::string key = "generate";
    for (const auto& k : keywords) key += "|" + k;
    CounterRng rng(config_.seed, substream(fnv1a64(key), nonce));
    if (rng.uniform() < config_.synonym_free_rate) return kFillers[rng.uniform_index(kFillers.size())];

    std::vector<std::string> phrases;
    for (const auto& k : keywords) {
        std::string noun = k;
        if (auto it = config_.synonyms.find(k); it != config_.synonyms.end() && !it->second.empty()) {
            if (rng.uniform() < config_.synonym_rate) noun = it->second[rng.uniform_index(it->second.size())];
        }
        const bool plural = rng.uniform() < 0.35;
        const bool adjective = rng.uniform() < 0.3;
        std::string head = noun;
        std::string det;
        if (plural && text::lemmas(pluralize(noun)) == text::lemmas(noun)) {
            head = pluralize(noun);
            det = std::vector<std::string>{"two", "three", "some"}[rng.uniform_index(3)];
        }
        if (adjective) head = kAdjectives[rng.uniform_index(kAdjectives.size())] + " " + head;
        if (det.empty()) det = article(head);
        phrases.push_back(det + " " + head);
    }
    std::string body;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        if (i > 0) body += i + 1 == phrases.size() ? " and " : ", ";
        body += phrases[i];
    }
    std::string sentence = kOpeners[rng.uniform_index(kOpeners.size())] + " " + body;
    const auto& closer = kClosers[rng.uniform_index(kClosers.size())];
    if (!closer.empty()) sentence += " " + closer;
    return sentence + ".";
}

std::string MockLlm::complete(const LlmRequest& request) const {
    const std::string_view prompt = request.prompt;
    if (prompt.starts_with(kJudgeMarker)) {
        CounterRng rng(config_.seed, substream(fnv1a64(prompt, fnv1a64("judge")), request.nonce));
        return rng.uniform() < config_.unlikely_rate ? "Unlikely." : "Likely. Such a scene is common.";
    }
    const auto keywords = parse_keywords(prompt);
    if (keywords.empty()) return "I am not sure what to say.";
    return generate(keywords, request.nonce);
}

HttpLlm::HttpLlm(HttpLlmConfig config) : config_(std::move(config)) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.endpoint, m, url)) {
        throw ParameterError("LLM endpoint must look like http(s)://host[:port]/path, got '" + config_.endpoint + "'");
    }
    scheme_host_ = m[1];
    path_ = m[2].matched ? std::string(m[2]) : "/";
    if (!config_.api_key) {
        if (const char* key = std::getenv("PVP_LLM_KEY")) config_.api_key = key;
    }
    if (config_.max_retries < 0) throw ParameterError("max_retries must be non-negative");
}

std::filesystem::path HttpLlm::cache_path(const LlmRequest& request) const {
    io::ByteWriter w;
    for (const auto& part : {config_.endpoint, config_.model, request.prompt}) {
        w.u64(part.size());
        w.bytes(part);
    }
    w.u64(request.nonce);
    return config_.cache_dir / (io::sha256_hex(w.buffer()) + ".txt");
}

std::string HttpLlm::complete(const LlmRequest& request) const {
    std::filesystem::path cached;
    if (!config_.cache_dir.empty()) {
        cached = cache_path(request);
        if (std::filesystem::exists(cached)) return io::read_file(cached);
    }

    nlohmann::json body = {{"model", config_.model},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})}};
    httplib::Headers headers;
    if (config_.api_key && !config_.api_key->empty()) headers.emplace("Authorization", "Bearer " + *config_.api_key);

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(50 << std::min(attempt, 5)));
        httplib::Client client(scheme_host_);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        client.set_write_timeout(config_.timeout);
        const auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        try {
            const auto reply = nlohmann::json::parse(res->body);
            std::string content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
            if (!cached.empty()) {
                auto tmp = cached;
                tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
                io::write_file(tmp, content);
                std::filesystem::rename(tmp, cached);
            }
            return content;
        } catch (const nlohmann::json::exception& e) {
            last_error = std::string("malformed reply: ") + e.what();
        }
    }
    throw TransportError("LLM request to " + config_.endpoint + " failed after " +
                         std::to_string(config_.max_retries + 1) + " attempts: " + last_error);
}

}  // namespace pvp
