#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvp/autodiff.hpp"
#include "pvp/encoders.hpp"
#include "pvp/tensor.hpp"

namespace pvp {

inline constexpr double kPromptInitStd = 0.02;

/// One learnable pseudo-image per target class, stored as [N, H, W, 3].
/// In encoder-bypass mode the prompts live directly in embedding space as [N, D].
struct PseudoVisualPrompt {
    Tensor values;
    bool embedding_space = false;

    std::size_t classes() const { return values.dim(0); }
    /// Pixel extent H (= W); zero in embedding space.
    std::size_t extent() const { return embedding_space ? 0 : values.dim(1); }
};

/// ParameterError unless N ≥ 1 and H = W ≥ min_extent.
PseudoVisualPrompt init_pvp(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed, std::size_t min_extent = 1);
PseudoVisualPrompt init_pvp_embedding(std::size_t n, std::size_t dim, std::uint64_t seed);

/// Shared learnable context r_1..r_M plus frozen per-class name embeddings.
/// Class i is encoded from the sequence [r_1, ..., r_M, name_i].
struct TextPromptSet {
    Tensor context;      ///< M×D, learnable
    Tensor class_names;  ///< N×D, frozen

    std::size_t length() const { return context.rows(); }
    std::size_t classes() const { return class_names.rows(); }
};

TextPromptSet init_text_prompts(std::size_t context_length, std::span<const std::string> class_names,
                                const FrozenEncoderPair& encoders, std::uint64_t seed);

/// Two-layer residual bottleneck: a(x) = W2ᵀ·relu(W1ᵀ·x + b1) + b2.
struct AdapterWeights {
    Tensor w1;  ///< D×h
    Tensor b1;  ///< h
    Tensor w2;  ///< h×D
    Tensor b2;  ///< D
};

enum class AdapterSide { image, text };

/// Image-side g(·) and text-side h(·) adapters mixed with the encoder output:
/// out = (1−λ)·a(x) + λ·x, optionally re-normalised to unit rows.
/// The text side is a single parameter set shared by prompts and global texts.
struct DualAdapter {
    AdapterWeights image;
    AdapterWeights text;
    double lambda = 0.5;
    bool normalize = true;

    const AdapterWeights& side(AdapterSide s) const { return s == AdapterSide::image ? image : text; }
};

/// Weights ~ Gaussian(0, 0.02), biases zero. hidden = 0 selects D/4.
DualAdapter init_dual_adapter(std::size_t dim, std::size_t hidden, double lambda, std::uint64_t seed);

struct AdapterVars {
    ad::Var w1, b1, w2, b2;
};
AdapterVars adapter_parameters(ad::Tape& tape, const AdapterWeights& w);
AdapterVars adapter_constants(ad::Tape& tape, const AdapterWeights& w);

ad::Var adapter_apply(const ad::Var& x, const AdapterVars& weights, double lambda, bool normalize);
/// Plain evaluation. ParameterError unless λ ∈ [0, 1]; ShapeError when x is not R×D.
Tensor adapter_apply(const Tensor& x, AdapterSide side, const DualAdapter& adapter);

void check_lambda(double lambda);

}  // namespace pvp
