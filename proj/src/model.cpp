#include "pvp/model.hpp"

#include "pvp/error.hpp"
#include "pvp/random.hpp"

namespace pvp {

PseudoVisualPrompt init_pvp(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed, std::size_t min_extent) {
    if (n == 0) throw ParameterError("pseudo-visual prompt needs at least one class");
    if (h != w) throw ParameterError("pseudo-visual prompt must be square (H = W)");
    if (h < min_extent || h == 0) {
        throw ParameterError("pseudo-visual prompt extent " + std::to_string(h) + " smaller than " +
                             std::to_string(min_extent));
    }
    return {gaussian_init({n, h, w, 3}, 0.0, kPromptInitStd, seed, fnv1a64("pvp")), false};
}

PseudoVisualPrompt init_pvp_embedding(std::size_t n, std::size_t dim, std::uint64_t seed) {
    if (n == 0 || dim == 0) throw ParameterError("pseudo-visual prompt needs N ≥ 1 and D ≥ 1");
    return {gaussian_init({n, dim}, 0.0, kPromptInitStd, seed, fnv1a64("pvp_embedding")), true};
}

TextPromptSet init_text_prompts(std::size_t context_length, std::span<const std::string> class_names,
                                const FrozenEncoderPair& encoders, std::uint64_t seed) {
    if (context_length == 0) throw ParameterError("text prompt length must be at least 1");
    if (class_names.empty()) throw ParameterError("text prompts need at least one class");
    if (context_length + 1 > encoders.config().max_text_length) {
        throw ParameterError("text prompt length exceeds the encoder's maximum sequence length");
    }
    const auto d = encoders.dim();
    TextPromptSet set;
    set.context = gaussian_init({context_length, d}, 0.0, kPromptInitStd, seed, fnv1a64("context"));
    set.class_names = Tensor(Shape{class_names.size(), d});
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        const auto row = encoders.name_embedding(class_names[i]);
        for (std::size_t j = 0; j < d; ++j) set.class_names.at(i, j) = row[j];
    }
    return set;
}

void check_lambda(double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("adapter λ must lie in [0, 1]");
}

DualAdapter init_dual_adapter(std::size_t dim, std::size_t hidden, double lambda, std::uint64_t seed) {
    check_lambda(lambda);
    if (hidden == 0) hidden = std::max<std::size_t>(1, dim / 4);
    auto make = [&](std::string_view side) {
        const auto base = fnv1a64(side);
        return AdapterWeights{
            gaussian_init({dim, hidden}, 0.0, kPromptInitStd, seed, substream(base, 1)),
            Tensor(Shape{hidden}),
            gaussian_init({hidden, dim}, 0.0, kPromptInitStd, seed, substream(base, 2)),
            Tensor(Shape{dim}),
        };
    };
    return DualAdapter{make("adapter.image"), make("adapter.text"), lambda, true};
}

AdapterVars adapter_parameters(ad::Tape& tape, const AdapterWeights& w) {
    return {tape.parameter(w.w1), tape.parameter(w.b1), tape.parameter(w.w2), tape.parameter(w.b2)};
}

AdapterVars adapter_constants(ad::Tape& tape, const AdapterWeights& w) {
    return {tape.constant(w.w1), tape.constant(w.b1), tape.constant(w.w2), tape.constant(w.b2)};
}

ad::Var adapter_apply(const ad::Var& x, const AdapterVars& weights, double lambda, bool normalize) {
    check_lambda(lambda);
    const auto& xv = x.value();
    if (xv.rank() != 2 || xv.cols() != weights.w1.value().rows()) {
        throw ShapeError("adapter input must be R×" + std::to_string(weights.w1.value().rows()) + ", got " +
                         shape_string(xv.shape()));
    }
    using namespace ad;
    const Var hidden = relu(add_bias(matmul(x, weights.w1), weights.b1));
    const Var adapted = add_bias(matmul(hidden, weights.w2), weights.b2);
    const std::vector<Var> terms{adapted, x};
    const std::vector<double> mix{1.0 - lambda, lambda};
    const Var out = linear_combination(terms, mix);
    return normalize ? normalize_rows(out) : out;
}

Tensor adapter_apply(const Tensor& x, AdapterSide side, const DualAdapter& adapter) {
    ad::Tape tape;
    const auto w = adapter_constants(tape, adapter.side(side));
    return adapter_apply(tape.constant(x), w, adapter.lambda, adapter.normalize).value();
}

}  // namespace pvp
