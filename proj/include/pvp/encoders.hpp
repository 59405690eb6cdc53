#pragma once

// Frozen toy dual encoder standing in for a pretrained vision-language pair.
//
// Text path:   tokens → embedding rows (+ positions) → one single-head causal
//              self-attention mix → read the last position → shared projection
//              → L2 normalise.
// Image path:  H×W×3 pixels → non-overlapping p×p patches → patch projection
//              (+ bias) → attention pooling with one frozen query → shared
//              projection → L2 normalise.
//
// The attention value/output map and the final projection are the same
// matrices on both sides, so a class-name token embedding and an image whose
// patch features resemble that embedding land close together. That shared
// structure is what makes the two spaces aligned.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pvp/autodiff.hpp"
#include "pvp/tensor.hpp"

namespace pvp {

using TokenId = std::uint32_t;

class Vocabulary {
public:
    static constexpr TokenId kUnk = 0;
    static constexpr TokenId kEos = 1;

    /// `<unk>` and `<eos>` are always ids 0 and 1; remaining words keep first-seen order.
    /// Each group lists words that denote one concept (synonyms); the encoder
    /// gives them a shared embedding component. Group words are added if missing.
    explicit Vocabulary(std::span<const std::string> words = {},
                        std::span<const std::vector<std::string>> groups = {});

    TokenId id(std::string_view word) const;
    bool contains(std::string_view word) const { return index_.contains(std::string(word)); }
    const std::string& word(TokenId id) const { return words_.at(id); }
    std::size_t size() const noexcept { return words_.size(); }
    const std::vector<std::string>& words() const noexcept { return words_; }
    const std::vector<std::vector<std::string>>& groups() const noexcept { return groups_; }

    /// Lemmatised words of `sentence` followed by EOS, truncated to `max_length`
    /// tokens. Unknown words map to `<unk>` and are reported through the log.
    std::vector<TokenId> encode(std::string_view sentence, std::size_t max_length, std::size_t* unknown = nullptr) const;

private:
    std::vector<std::string> words_;
    std::vector<std::vector<std::string>> groups_;
    std::unordered_map<std::string, TokenId> index_;
};

struct EncoderConfig {
    std::size_t embed_dim = 64;
    std::size_t patch_size = 4;
    std::size_t max_text_length = 77;
    /// Default pixel extent (H = W) for prompts and synthetic images.
    std::size_t image_size = 16;
    std::uint64_t seed = 0;
};

class FrozenEncoderPair {
public:
    struct ImageFeatures {
        ad::Var global;   ///< 1×D, unit norm
        ad::Var patches;  ///< (H/p·W/p)×D projected per-patch features
    };
    struct ImageEncoding {
        Tensor global;
        Tensor patches;
    };

    FrozenEncoderPair(EncoderConfig config, Vocabulary vocab);

    const EncoderConfig& config() const noexcept { return config_; }
    const Vocabulary& vocab() const noexcept { return vocab_; }
    std::size_t dim() const noexcept { return config_.embed_dim; }

    /// Frozen embedding row of one token, 1×D.
    Tensor token_embedding(TokenId id) const;
    /// Embedding rows of a token sequence, L×D.
    Tensor token_rows(std::span<const TokenId> tokens) const;
    /// Mean of the token embeddings of a (possibly multi-word) name, 1×D.
    Tensor name_embedding(std::string_view name) const;

    /// Text path after the lookup stage. `sequence` is L×D with L ≤ max_text_length.
    ad::Var encode_text_embeddings(ad::Tape& tape, const ad::Var& sequence) const;
    Tensor encode_text_embeddings(const Tensor& sequence) const;
    /// InputError when the sequence is empty, too long or does not end in EOS.
    Tensor encode_text_tokens(std::span<const TokenId> tokens) const;
    /// Encodes many token sequences into a B×D matrix; rows are independent of `threads`.
    Tensor encode_texts(std::span<const std::vector<TokenId>> sequences, std::size_t threads = 1) const;

    /// ShapeError unless pixels are H×W×3 with H = W divisible by the patch size.
    ImageFeatures encode_image(ad::Tape& tape, const ad::Var& pixels) const;
    ImageEncoding encode_image(const Tensor& pixels) const;
    Tensor encode_images(std::span<const Tensor> images, std::size_t threads = 1) const;

    /// SHA-256 over configuration, vocabulary and every frozen weight.
    const std::string& digest() const noexcept { return digest_; }
    /// Recomputes the digest from the live weights (used to verify frozenness).
    std::string compute_digest() const;

    // Read-only weight access for the synthetic data generator and tests.
    const Tensor& patch_projection() const noexcept { return patch_projection_; }
    const Tensor& patch_bias() const noexcept { return patch_bias_; }

private:
    Tensor image_positions(std::size_t patches) const;

    EncoderConfig config_;
    Vocabulary vocab_;
    Tensor token_table_;       // |V|×D
    Tensor text_positions_;    // max_len×D
    Tensor query_proj_;        // D×D
    Tensor key_proj_;          // D×D
    Tensor value_proj_;        // D×D
    Tensor output_proj_;       // D×D
    Tensor value_output_;      // value_proj_·output_proj_, shared with the image pool
    Tensor shared_proj_;       // D×D final projection, shared
    Tensor patch_projection_;  // (p·p·3)×D
    Tensor patch_bias_;        // D
    Tensor pool_query_;        // 1×D
    Tensor pool_key_;          // D×D
    std::string digest_;
};

}  // namespace pvp
