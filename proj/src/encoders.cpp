#include "pvp/encoders.hpp"

#include <cmath>
#include <thread>

#include "pvp/error.hpp"
#include "pvp/io.hpp"
#include "pvp/log.hpp"
#include "pvp/random.hpp"
#include "pvp/text.hpp"

namespace pvp {
namespace {

constexpr double kPositionStd = 0.01;
constexpr double kImagePositionStd = 0.1;
constexpr double kPatchBiasStd = 0.02;
constexpr double kValuePerturbation = 0.1;
constexpr double kSynonymShare = 0.8;

std::uint64_t stream(std::string_view name) { return fnv1a64(name); }

Tensor identity_plus_noise(std::size_t d, double std, std::uint64_t seed, std::string_view name) {
    Tensor t = gaussian_init({d, d}, 0.0, std, seed, stream(name));
    for (std::size_t i = 0; i < d; ++i) t.at(i, i) += 1.0;
    return t;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    ad::Tape tape;
    return ad::matmul(tape.constant(a), tape.constant(b)).value();
}

// Runs body(i) for i in [0, n) over `threads` workers with contiguous chunks.
template <class Body>
void parallel_for(std::size_t n, std::size_t threads, Body body) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk, end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([=, &body] {
            for (std::size_t i = begin; i < end; ++i) body(i);
        });
    }
}

}  // namespace

Vocabulary::Vocabulary(std::span<const std::string> words, std::span<const std::vector<std::string>> groups) {
    auto add = [&](const std::string& w) {
        if (w.empty() || index_.contains(w)) return;
        index_.emplace(w, static_cast<TokenId>(words_.size()));
        words_.push_back(w);
    };
    for (std::string w : {"<unk>", "<eos>"}) add(w);
    for (const auto& w : words) add(w);
    std::unordered_map<std::string, std::size_t> owner;
    for (const auto& g : groups) {
        if (g.size() < 2) continue;
        for (const auto& w : g) {
            if (w == "<unk>" || w == "<eos>") throw ParameterError("special tokens cannot join a synonym group");
            if (!owner.emplace(w, groups_.size()).second) {
                throw ParameterError("word '" + w + "' appears in two synonym groups");
            }
            add(w);
        }
        groups_.push_back(g);
    }
}

TokenId Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnk : it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view sentence, std::size_t max_length, std::size_t* unknown) const {
    if (max_length < 1) throw ParameterError("max_length must allow at least the EOS token");
    std::vector<TokenId> ids;
    std::size_t unk = 0;
    for (const auto& lemma : text::lemmas(sentence)) {
        if (ids.size() + 1 >= max_length) break;
        const auto id = this->id(lemma);
        if (id == kUnk) {
            ++unk;
            log::info("unknown token '" + lemma + "' mapped to <unk>");
        }
        ids.push_back(id);
    }
    ids.push_back(kEos);
    if (unknown) *unknown = unk;
    return ids;
}

FrozenEncoderPair::FrozenEncoderPair(EncoderConfig config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
    const auto d = config_.embed_dim;
    const auto p = config_.patch_size;
    if (d == 0 || p == 0 || config_.max_text_length == 0) throw ParameterError("encoder dims must be positive");
    if (config_.image_size % p != 0) throw ParameterError("image_size must be divisible by patch_size");
    const auto seed = config_.seed;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    // Token rows are keyed by the word itself so adding words never shifts existing rows.
    token_table_ = Tensor(Shape{vocab_.size(), d});
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        const auto row = gaussian_init({d}, 0.0, inv_sqrt_d, seed, substream(stream("token"), fnv1a64(vocab_.word(i))));
        for (std::size_t j = 0; j < d; ++j) token_table_.at(i, j) = row[j];
    }
    // Synonyms share a concept row keyed by the group's first word, as a
    // pretrained encoder would place them close together.
    const double own = std::sqrt(1.0 - kSynonymShare);
    const double shared = std::sqrt(kSynonymShare);
    for (const auto& group : vocab_.groups()) {
        const auto concept_row =
            gaussian_init({d}, 0.0, inv_sqrt_d, seed, substream(stream("concept"), fnv1a64(group.front())));
        for (const auto& w : group) {
            const auto id = vocab_.id(w);
            for (std::size_t j = 0; j < d; ++j) {
                token_table_.at(id, j) = own * token_table_.at(id, j) + shared * concept_row[j];
            }
        }
    }
    text_positions_ = gaussian_init({config_.max_text_length, d}, 0.0, kPositionStd, seed, stream("text_position"));
    query_proj_ = gaussian_init({d, d}, 0.0, inv_sqrt_d, seed, stream("query"));
    key_proj_ = gaussian_init({d, d}, 0.0, inv_sqrt_d, seed, stream("key"));
    value_proj_ = identity_plus_noise(d, kValuePerturbation * inv_sqrt_d, seed, "value");
    output_proj_ = identity_plus_noise(d, kValuePerturbation * inv_sqrt_d, seed, "output");
    value_output_ = matmul_plain(value_proj_, output_proj_);
    shared_proj_ = gaussian_init({d, d}, 0.0, inv_sqrt_d, seed, stream("shared_projection"));

    const auto patch_dim = p * p * 3;
    patch_projection_ =
        gaussian_init({patch_dim, d}, 0.0, 1.0 / std::sqrt(static_cast<double>(patch_dim)), seed, stream("patch"));
    patch_bias_ = gaussian_init({d}, 0.0, kPatchBiasStd, seed, stream("patch_bias"));
    pool_query_ = gaussian_init({1, d}, 0.0, 1.0, seed, stream("pool_query"));
    pool_key_ = gaussian_init({d, d}, 0.0, inv_sqrt_d, seed, stream("pool_key"));

    digest_ = compute_digest();
}

std::string FrozenEncoderPair::compute_digest() const {
    io::ByteWriter w;
    w.bytes("pvp-encoder-v1");
    w.u64(config_.embed_dim);
    w.u64(config_.patch_size);
    w.u64(config_.max_text_length);
    w.u64(config_.image_size);
    w.u64(config_.seed);
    w.u64(vocab_.size());
    for (const auto& word : vocab_.words()) {
        w.u64(word.size());
        w.bytes(word);
    }
    w.u64(vocab_.groups().size());
    for (const auto& g : vocab_.groups()) {
        w.u64(g.size());
        for (const auto& word : g) {
            w.u64(word.size());
            w.bytes(word);
        }
    }
    for (const Tensor* t : {&token_table_, &text_positions_, &query_proj_, &key_proj_, &value_proj_, &output_proj_,
                            &value_output_, &shared_proj_, &patch_projection_, &patch_bias_, &pool_query_, &pool_key_}) {
        for (double v : t->data()) w.f64(v);
    }
    return io::sha256_hex(w.buffer());
}

Tensor FrozenEncoderPair::token_embedding(TokenId id) const {
    if (id >= vocab_.size()) throw InputError("token id out of range");
    return token_table_.row(id);
}

Tensor FrozenEncoderPair::token_rows(std::span<const TokenId> tokens) const {
    const auto d = dim();
    Tensor out(Shape{tokens.size(), d});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= vocab_.size()) throw InputError("token id out of range");
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = token_table_.at(tokens[i], j);
    }
    return out;
}

Tensor FrozenEncoderPair::name_embedding(std::string_view name) const {
    const auto words = text::lemmas(name);
    if (words.empty()) throw InputError("class name '" + std::string(name) + "' has no tokens");
    Tensor out(Shape{1, dim()});
    for (const auto& w : words) {
        const auto id = vocab_.id(w);
        if (id == Vocabulary::kUnk) throw InputError("class name token '" + w + "' is not in the vocabulary");
        for (std::size_t j = 0; j < dim(); ++j) out[j] += token_table_.at(id, j);
    }
    for (auto& v : out.data()) v /= static_cast<double>(words.size());
    return out;
}

ad::Var FrozenEncoderPair::encode_text_embeddings(ad::Tape& tape, const ad::Var& sequence) const {
    const auto& seq = sequence.value();
    if (seq.rank() != 2 || seq.cols() != dim()) {
        throw ShapeError("text sequence must be L×" + std::to_string(dim()) + ", got " + shape_string(seq.shape()));
    }
    const auto len = seq.rows();
    if (len == 0 || len > config_.max_text_length) {
        throw ShapeError("text sequence length " + std::to_string(len) + " outside [1, " +
                         std::to_string(config_.max_text_length) + "]");
    }
    using namespace ad;
    Tensor pos(Shape{len, dim()});
    std::copy_n(text_positions_.data().begin(), len * dim(), pos.data().begin());
    const Var x = add(sequence, tape.constant(std::move(pos)));
    // Causal attention: the last position attends to the whole sequence, and
    // only the last position is read out.
    const Var last = slice_rows(x, len - 1, 1);
    const Var q = matmul(last, tape.constant(query_proj_));
    const Var k = matmul(x, tape.constant(key_proj_));
    const Var attn = softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dim()))));
    const Var values = matmul(x, tape.constant(value_output_));
    const Var mixed = add(last, matmul(attn, values));
    return normalize_rows(matmul(mixed, tape.constant(shared_proj_)));
}

Tensor FrozenEncoderPair::encode_text_embeddings(const Tensor& sequence) const {
    ad::Tape tape;
    return encode_text_embeddings(tape, tape.constant(sequence)).value();
}

Tensor FrozenEncoderPair::encode_text_tokens(std::span<const TokenId> tokens) const {
    if (tokens.empty()) throw InputError("empty token sequence");
    if (tokens.back() != Vocabulary::kEos) throw InputError("token sequence must end with <eos>");
    if (tokens.size() > config_.max_text_length) {
        throw InputError("token sequence longer than " + std::to_string(config_.max_text_length));
    }
    return encode_text_embeddings(token_rows(tokens));
}

Tensor FrozenEncoderPair::encode_texts(std::span<const std::vector<TokenId>> sequences, std::size_t threads) const {
    Tensor out(Shape{sequences.size(), dim()});
    parallel_for(sequences.size(), threads, [&](std::size_t i) {
        const auto row = encode_text_tokens(sequences[i]);
        std::copy(row.data().begin(), row.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * dim()));
    });
    return out;
}

Tensor FrozenEncoderPair::image_positions(std::size_t patches) const {
    Tensor out(Shape{patches, dim()});
    for (std::size_t i = 0; i < patches; ++i) {
        const auto row = gaussian_init({dim()}, 0.0, kImagePositionStd, config_.seed, substream(stream("image_position"), i));
        std::copy(row.data().begin(), row.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * dim()));
    }
    return out;
}

FrozenEncoderPair::ImageFeatures FrozenEncoderPair::encode_image(ad::Tape& tape, const ad::Var& pixels) const {
    const auto& img = pixels.value();
    if (img.rank() != 3 || img.dim(2) != 3) throw ShapeError("image must be H×W×3, got " + shape_string(img.shape()));
    if (img.dim(0) != img.dim(1)) throw ShapeError("image must be square, got " + shape_string(img.shape()));
    using namespace ad;
    const Var patches = patchify(pixels, config_.patch_size);
    const Var features = add_bias(matmul(patches, tape.constant(patch_projection_)), tape.constant(patch_bias_));
    const auto count = patches.value().rows();
    // Positions enter the pooling keys only, so identical patches keep identical features.
    const Var keys = matmul(add(features, tape.constant(image_positions(count))), tape.constant(pool_key_));
    const Var weights =
        softmax_rows(scale(matmul_nt(tape.constant(pool_query_), keys), 1.0 / std::sqrt(static_cast<double>(dim()))));
    const Var values = matmul(features, tape.constant(value_output_));
    const Var proj = tape.constant(shared_proj_);
    const Var global = normalize_rows(matmul(matmul(weights, values), proj));
    return {global, matmul(values, proj)};
}

FrozenEncoderPair::ImageEncoding FrozenEncoderPair::encode_image(const Tensor& pixels) const {
    ad::Tape tape;
    const auto f = encode_image(tape, tape.constant(pixels));
    return {f.global.value(), f.patches.value()};
}

Tensor FrozenEncoderPair::encode_images(std::span<const Tensor> images, std::size_t threads) const {
    Tensor out(Shape{images.size(), dim()});
    parallel_for(images.size(), threads, [&](std::size_t i) {
        const auto g = encode_image(images[i]).global;
        std::copy(g.data().begin(), g.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * dim()));
    });
    return out;
}

}  // namespace pvp
