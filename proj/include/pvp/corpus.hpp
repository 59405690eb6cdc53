#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pvp/encoders.hpp"
#include "pvp/llm.hpp"
#include "pvp/losses.hpp"
#include "pvp/tensor.hpp"

namespace pvp {

/// One class per line, comma-separated entries, the first entry is the class
/// name. Entries may span several words ("traffic light"). Lines starting with
/// '#' and blank lines are ignored. Entries are stored lemmatised.
class SynonymDictionary {
public:
    static SynonymDictionary parse(std::string_view contents);
    static SynonymDictionary load(const std::filesystem::path& path);
    /// Builds a dictionary from rows of surface forms, first entry canonical.
    static SynonymDictionary from_rows(const std::vector<std::vector<std::string>>& rows);

    std::size_t size() const noexcept { return classes_.size(); }
    const std::vector<std::string>& classes() const noexcept { return classes_; }
    /// Surface forms as written in the file, first one the class name.
    const std::vector<std::string>& surface_forms(std::size_t c) const { return surface_.at(c); }
    /// Class of a lemmatised phrase, if any.
    std::optional<std::size_t> lookup(std::span<const std::string> lemma_phrase) const;
    std::size_t longest_entry() const noexcept { return longest_; }
    /// Every lemma appearing in any entry.
    std::vector<std::string> lemma_words() const;

private:
    std::vector<std::string> classes_;
    std::vector<std::vector<std::string>> surface_;
    std::vector<std::pair<std::vector<std::string>, std::size_t>> entries_;  // sorted by phrase
    std::size_t longest_ = 0;
};

struct FilteredText {
    std::string raw;
    std::vector<std::string> tokens;  ///< lemmas
    LabelSets labels;
};

/// Lowercase, split, lemmatise, then scan left to right taking the longest
/// dictionary phrase at each position. std::nullopt when nothing matches.
std::optional<FilteredText> noun_filter(std::string_view sentence, const SynonymDictionary& dict);

/// ParameterError unless 1 ≤ |classes| ≤ 3.
std::string build_generation_prompt(std::span<const std::string> classes);
std::string build_judge_prompt(std::string_view text);
/// Case-insensitive: reject on "unlikely", keep on "likely", reject otherwise.
bool is_rational(std::string_view reply);
/// Queries the client with the judge prompt. InputError on empty text.
bool judge_rationality(std::string_view text, const LlmClient& client, std::uint64_t nonce = 0);

struct CorpusConfig {
    std::uint64_t seed = 0;
    std::size_t max_words = 25;
    /// Generation attempts before giving up; 0 selects 20·count.
    std::size_t max_attempts = 0;
    std::size_t threads = 1;
};

struct CorpusStats {
    std::size_t queried = 0;
    std::size_t kept = 0;
    std::size_t unlikely = 0;
    std::size_t unmatched = 0;
    std::size_t overlength = 0;
    std::size_t saturated = 0;  ///< matched every class, so c− would be empty
    std::size_t transport_failures = 0;
    bool exhausted = false;
};

struct Corpus {
    std::vector<FilteredText> texts;
    CorpusStats stats;
};

/// Sample l ∈ {1,2,3} classes, prompt, judge, filter; repeat until `count`
/// texts are kept or the attempt budget runs out. Results are committed in
/// sample-index order, so the corpus does not depend on `threads`.
Corpus generate_corpus(std::size_t count, const LlmClient& client, const SynonymDictionary& dict,
                       const CorpusConfig& config);

/// One JSON object per line: {"text": ..., "labels": [class indices]}.
void write_corpus(std::span<const FilteredText> texts, const std::filesystem::path& path);
/// Re-tokenises each text; InputError on malformed lines or labels outside the dictionary.
std::vector<FilteredText> read_corpus(const std::filesystem::path& path, const SynonymDictionary& dict);

/// Mock settings that use the dictionary's synonyms.
MockLlmConfig mock_config_for(const SynonymDictionary& dict, std::uint64_t seed);

/// Encoder vocabulary: dictionary lemmas plus everything the mock can say.
Vocabulary build_vocabulary(const SynonymDictionary& dict);

struct SynthConfig {
    std::size_t count = 160;
    double noise_std = 0.05;
    std::uint64_t seed = 0;
    std::size_t extent = 0;      ///< 0 selects the encoder's image_size
    double pattern_scale = 3.0;  ///< pixel amplitude of a class pattern
    double jitter = 0.3;         ///< per-patch deviation of a pattern from its class direction
};

struct SynthDataset {
    std::vector<Tensor> images;                  ///< H×W×3 each
    std::vector<std::vector<std::size_t>> labels;  ///< positive classes per image
    std::vector<Tensor> patterns;                ///< the base pattern of each class

    /// Multi-hot matrix, count×N.
    std::vector<std::vector<int>> multi_hot(std::size_t classes) const;
};

/// Each class owns a fixed pattern whose patches project onto that class
/// name's embedding direction. A sample is the [-1, 1]-clipped sum of the
/// patterns of its classes plus Gaussian noise. The first N samples are the
/// singletons {0}, ..., {N−1}; the rest draw 1–3 classes uniformly.
SynthDataset synth_dataset(std::span<const std::string> classes, const FrozenEncoderPair& encoders,
                           const SynthConfig& config);

}  // namespace pvp
