#include "pvp/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <json.hpp>

#include "pvp/error.hpp"
#include "pvp/io.hpp"
#include "pvp/log.hpp"
#include "pvp/random.hpp"
#include "pvp/text.hpp"

namespace pvp {
namespace {

std::string join(std::span<const std::string> words, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += sep;
        out += words[i];
    }
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

// First non-empty line of a reply with surrounding quotes removed.
std::string clean_reply(std::string_view reply) {
    std::string line;
    std::size_t start = 0;
    while (start <= reply.size()) {
        auto end = reply.find('\n', start);
        if (end == std::string_view::npos) end = reply.size();
        line = trim(reply.substr(start, end - start));
        if (!line.empty()) break;
        start = end + 1;
    }
    if (line.size() >= 2 && line.front() == '"' && line.back() == '"') line = trim(line.substr(1, line.size() - 2));
    return line;
}

std::vector<std::size_t> sample_classes(CounterRng& rng, std::size_t n) {
    const std::size_t l = 1 + rng.uniform_index(std::min<std::size_t>(3, n));
    std::vector<std::size_t> picked;
    while (picked.size() < l) {
        const auto c = rng.uniform_index(n);
        if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
    }
    return picked;
}

enum class Outcome { kept, unlikely, unmatched, overlength, saturated, transport };

struct Attempt {
    Outcome outcome = Outcome::unmatched;
    std::optional<FilteredText> text;
};

Attempt attempt_one(std::size_t index, const LlmClient& client, const SynonymDictionary& dict,
                    const CorpusConfig& config) {
    CounterRng rng(config.seed, substream(fnv1a64("corpus.sample"), index));
    const auto picked = sample_classes(rng, dict.size());
    std::vector<std::string> names;
    for (auto c : picked) names.push_back(dict.classes()[c]);
    Attempt out;
    try {
        const auto sentence = clean_reply(client.complete({build_generation_prompt(names), index}));
        if (sentence.empty()) {
            out.outcome = Outcome::unmatched;
            return out;
        }
        if (!judge_rationality(sentence, client, index)) {
            out.outcome = Outcome::unlikely;
            return out;
        }
        if (text::split_words(sentence).size() > config.max_words) {
            out.outcome = Outcome::overlength;
            return out;
        }
        auto filtered = noun_filter(sentence, dict);
        if (!filtered) {
            out.outcome = Outcome::unmatched;
            return out;
        }
        if (filtered->labels.negative.empty()) {
            out.outcome = Outcome::saturated;
            return out;
        }
        out.outcome = Outcome::kept;
        out.text = std::move(filtered);
    } catch (const TransportError& e) {
        log::warn(std::string("dropping sample: ") + e.what());
        out.outcome = Outcome::transport;
    }
    return out;
}

}  // namespace

SynonymDictionary SynonymDictionary::from_rows(const std::vector<std::vector<std::string>>& rows) {
    SynonymDictionary d;
    std::map<std::vector<std::string>, std::size_t> seen;
    for (const auto& row : rows) {
        std::vector<std::string> surface;
        for (const auto& raw : row) {
            auto entry = trim(raw);
            if (!entry.empty()) surface.push_back(lowercase(entry));
        }
        if (surface.empty()) continue;
        const std::size_t cls = d.classes_.size();
        for (const auto& entry : surface) {
            auto phrase = text::lemmas(entry);
            if (phrase.empty()) throw InputError("dictionary entry '" + entry + "' has no words");
            const auto lemma = join(phrase, " ");
            if (auto it = seen.find(phrase); it != seen.end()) {
                if (it->second == cls) continue;
                throw InputError("lemma '" + lemma + "' maps to both '" + d.classes_[it->second] + "' and '" +
                                 surface.front() + "'");
            }
            seen.emplace(phrase, cls);
            d.longest_ = std::max(d.longest_, phrase.size());
        }
        d.classes_.push_back(surface.front());
        d.surface_.push_back(std::move(surface));
    }
    if (d.classes_.empty()) throw InputError("synonym dictionary has no classes");
    d.entries_.assign(seen.begin(), seen.end());
    return d;
}

SynonymDictionary SynonymDictionary::parse(std::string_view contents) {
    std::vector<std::vector<std::string>> rows;
    std::size_t start = 0;
    while (start < contents.size()) {
        auto end = contents.find('\n', start);
        if (end == std::string_view::npos) end = contents.size();
        const auto line = trim(contents.substr(start, end - start));
        start = end + 1;
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> row;
        std::size_t s = 0;
        while (s <= line.size()) {
            auto e = line.find(',', s);
            if (e == std::string::npos) e = line.size();
            row.push_back(line.substr(s, e - s));
            s = e + 1;
        }
        rows.push_back(std::move(row));
    }
    return from_rows(rows);
}

SynonymDictionary SynonymDictionary::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw InputError("no such dictionary file: " + path.string());
    return parse(io::read_file(path));
}

std::optional<std::size_t> SynonymDictionary::lookup(std::span<const std::string> lemma_phrase) const {
    const std::vector<std::string> key(lemma_phrase.begin(), lemma_phrase.end());
    auto it = std::lower_bound(entries_.begin(), entries_.end(), key,
                               [](const auto& entry, const auto& k) { return entry.first < k; });
    if (it != entries_.end() && it->first == key) return it->second;
    return std::nullopt;
}

std::vector<std::string> SynonymDictionary::lemma_words() const {
    std::set<std::string> words;
    for (const auto& [phrase, cls] : entries_) words.insert(phrase.begin(), phrase.end());
    return {words.begin(), words.end()};
}

std::optional<FilteredText> noun_filter(std::string_view sentence, const SynonymDictionary& dict) {
    FilteredText out;
    out.raw = std::string(sentence);
    out.tokens = text::lemmas(sentence);
    std::vector<std::size_t> matched;
    const auto& t = out.tokens;
    for (std::size_t pos = 0; pos < t.size();) {
        std::size_t step = 1;
        for (std::size_t len = std::min(dict.longest_entry(), t.size() - pos); len >= 1; --len) {
            if (auto c = dict.lookup(std::span(t).subspan(pos, len))) {
                matched.push_back(*c);
                step = len;
                break;
            }
        }
        pos += step;
    }
    if (matched.empty()) return std::nullopt;
    out.labels = LabelSets::from_positive(std::move(matched), dict.size());
    return out;
}

std::string build_generation_prompt(std::span<const std::string> classes) {
    if (classes.empty() || classes.size() > 3) {
        throw ParameterError("generation prompt takes 1 to 3 keywords, got " + std::to_string(classes.size()));
    }
    return "Make a sentence to describe a photo. Requirements: Each sentence should be less than 15 words and "
           "include keywords: " +
           join(classes, ", ") + ".";
}

std::string build_judge_prompt(std::string_view text) {
    return "Will the scene described in this text appear in reality? Scene: \"" + std::string(text) + "\"";
}

bool is_rational(std::string_view reply) {
    const auto lower = lowercase(reply);
    if (lower.find("unlikely") != std::string::npos) return false;
    return lower.find("likely") != std::string::npos;
}

bool judge_rationality(std::string_view text, const LlmClient& client, std::uint64_t nonce) {
    if (trim(text).empty()) throw InputError("cannot judge an empty text");
    return is_rational(client.complete({build_judge_prompt(text), nonce}));
}

Corpus generate_corpus(std::size_t count, const LlmClient& client, const SynonymDictionary& dict,
                       const CorpusConfig& config) {
    if (count == 0) throw ParameterError("corpus count must be at least 1");
    const std::size_t budget = config.max_attempts ? config.max_attempts : 20 * count;
    const std::size_t threads = std::max<std::size_t>(1, config.threads);
    Corpus corpus;
    auto& st = corpus.stats;
    std::size_t next = 0;
    while (corpus.texts.size() < count && next < budget) {
        // A wave of independent attempts; committing stops exactly where a serial run would.
        const std::size_t wave = std::min(budget - next, std::max<std::size_t>(threads * 4, count - corpus.texts.size()));
        std::vector<Attempt> results(wave);
        if (threads == 1) {
            for (std::size_t i = 0; i < wave; ++i) results[i] = attempt_one(next + i, client, dict, config);
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < threads; ++t) {
                pool.emplace_back([&, t] {
                    for (std::size_t i = t; i < wave; i += threads) results[i] = attempt_one(next + i, client, dict, config);
                });
            }
        }
        for (std::size_t i = 0; i < wave && corpus.texts.size() < count; ++i) {
            ++st.queried;
            switch (results[i].outcome) {
                case Outcome::kept: corpus.texts.push_back(std::move(*results[i].text)); break;
                case Outcome::unlikely: ++st.unlikely; break;
                case Outcome::unmatched: ++st.unmatched; break;
                case Outcome::overlength: ++st.overlength; break;
                case Outcome::saturated: ++st.saturated; break;
                case Outcome::transport: ++st.transport_failures; break;
            }
        }
        next += wave;
    }
    st.kept = corpus.texts.size();
    if (st.kept < count) {
        st.exhausted = true;
        log::warn("attempt budget exhausted: kept " + std::to_string(st.kept) + " of " + std::to_string(count) +
                  " texts after " + std::to_string(st.queried) + " queries");
    }
    return corpus;
}

void write_corpus(std::span<const FilteredText> texts, const std::filesystem::path& path) {
    std::string out;
    for (const auto& t : texts) {
        nlohmann::json j = {{"text", t.raw}, {"labels", t.labels.positive}};
        out += j.dump() + "\n";
    }
    io::write_file(path, out);
}

std::vector<FilteredText> read_corpus(const std::filesystem::path& path, const SynonymDictionary& dict) {
    if (!std::filesystem::exists(path)) throw InputError("no such corpus file: " + path.string());
    std::vector<FilteredText> out;
    std::size_t line_no = 0;
    for (const auto& line : io::read_lines(path)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto where = path.string() + ":" + std::to_string(line_no);
        FilteredText t;
        try {
            const auto j = nlohmann::json::parse(line);
            t.raw = j.at("text").get<std::string>();
            auto labels = j.at("labels").get<std::vector<std::size_t>>();
            t.tokens = text::lemmas(t.raw);
            t.labels = LabelSets::from_positive(std::move(labels), dict.size());
        } catch (const nlohmann::json::exception& e) {
            throw InputError(where + ": " + e.what());
        } catch (const ContractError& e) {
            throw InputError(where + ": " + e.what());
        }
        out.push_back(std::move(t));
    }
    return out;
}

MockLlmConfig mock_config_for(const SynonymDictionary& dict, std::uint64_t seed) {
    MockLlmConfig cfg;
    cfg.seed = seed;
    for (std::size_t c = 0; c < dict.size(); ++c) {
        const auto& forms = dict.surface_forms(c);
        cfg.synonyms[forms.front()] = std::vector<std::string>(forms.begin() + 1, forms.end());
    }
    return cfg;
}

Vocabulary build_vocabulary(const SynonymDictionary& dict) {
    auto words = dict.lemma_words();
    for (auto& w : MockLlm::lexicon()) words.push_back(std::move(w));
    // Single-word forms of one class form a synonym group.
    std::vector<std::vector<std::string>> groups;
    for (std::size_t c = 0; c < dict.size(); ++c) {
        std::vector<std::string> g;
        for (const auto& form : dict.surface_forms(c)) {
            auto lemmas = text::lemmas(form);
            if (lemmas.size() == 1 && std::find(g.begin(), g.end(), lemmas[0]) == g.end()) g.push_back(lemmas[0]);
        }
        groups.push_back(std::move(g));
    }
    return Vocabulary(words, groups);
}

std::vector<std::vector<int>> SynthDataset::multi_hot(std::size_t classes) const {
    std::vector<std::vector<int>> out(labels.size(), std::vector<int>(classes, 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (auto c : labels[i]) out[i].at(c) = 1;
    }
    return out;
}

SynthDataset synth_dataset(std::span<const std::string> classes, const FrozenEncoderPair& encoders,
                           const SynthConfig& config) {
    if (!(config.noise_std >= 0.0)) throw ParameterError("noise_std must be non-negative");
    if (classes.empty()) throw ParameterError("synthetic dataset needs at least one class");
    const std::size_t n = classes.size();
    const std::size_t d = encoders.dim();
    const std::size_t p = encoders.config().patch_size;
    const std::size_t extent = config.extent ? config.extent : encoders.config().image_size;
    if (extent % p != 0) throw ParameterError("image extent must be divisible by the patch size");
    const std::size_t grid = extent / p;
    const Tensor& w = encoders.patch_projection();  // (p·p·3)×D
    const std::size_t patch_dim = w.rows();

    SynthDataset out;
    for (std::size_t c = 0; c < n; ++c) {
        auto dir = encoders.name_embedding(classes[c]);
        const double norm = l2_norm(dir.data());
        const auto jitter = gaussian_init({grid * grid, d}, 0.0, config.jitter / std::sqrt(static_cast<double>(d)),
                                          config.seed, substream(fnv1a64("synth.jitter"), c));
        Tensor pattern(Shape{extent, extent, 3});
        for (std::size_t gy = 0; gy < grid; ++gy) {
            for (std::size_t gx = 0; gx < grid; ++gx) {
                const std::size_t k = gy * grid + gx;
                for (std::size_t e = 0; e < patch_dim; ++e) {
                    double v = 0.0;
                    for (std::size_t j = 0; j < d; ++j) v += w.at(e, j) * (dir[j] / norm + jitter.at(k, j));
                    const std::size_t dy = e / (p * 3), dx = (e / 3) % p, ch = e % 3;
                    pattern[((gy * p + dy) * extent + gx * p + dx) * 3 + ch] =
                        std::clamp(config.pattern_scale * v, -1.0, 1.0);
                }
            }
        }
        out.patterns.push_back(std::move(pattern));
    }

    CounterRng rng(config.seed, "synth.labels");
    for (std::size_t i = 0; i < config.count; ++i) {
        std::vector<std::size_t> label;
        if (i < n) {
            label = {i};
        } else {
            label = sample_classes(rng, n);
            std::sort(label.begin(), label.end());
        }
        Tensor img(Shape{extent, extent, 3});
        for (auto c : label) {
            for (std::size_t e = 0; e < img.size(); ++e) img[e] += out.patterns[c][e];
        }
        if (config.noise_std > 0.0) {
            const auto noise =
                gaussian_init(img.shape(), 0.0, config.noise_std, config.seed, substream(fnv1a64("synth.noise"), i));
            for (std::size_t e = 0; e < img.size(); ++e) img[e] += noise[e];
        }
        for (auto& v : img.data()) v = std::clamp(v, -1.0, 1.0);
        out.images.push_back(std::move(img));
        out.labels.push_back(std::move(label));
    }
    return out;
}

}  // namespace pvp
