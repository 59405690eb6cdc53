#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "pvp/checkpoint.hpp"
#include "pvp/error.hpp"
#include "pvp/io.hpp"
#include "pvp/model.hpp"
#include "pvp/random.hpp"

using namespace pvp;

namespace {

FrozenEncoderPair pair(std::uint64_t seed = 0) {
    const std::vector<std::string> w{"dog", "cat", "traffic", "light"};
    EncoderConfig cfg;
    cfg.embed_dim = 16;
    cfg.seed = seed;
    return FrozenEncoderPair(cfg, Vocabulary(w));
}

Tensor unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
    auto t = gaussian_init({n, d}, 0.0, 1.0, seed);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += t.at(r, c) * t.at(r, c);
        for (std::size_t c = 0; c < d; ++c) t.at(r, c) /= std::sqrt(s);
    }
    return t;
}

}  // namespace

TEST_CASE("init_pvp shape, determinism and spread") {
    const auto p = init_pvp(3, 16, 16, 5);
    CHECK(p.values.shape() == Shape{3, 16, 16, 3});
    CHECK(p.values.slice(0).size() == 768);
    CHECK(p.values == init_pvp(3, 16, 16, 5).values);

    const auto big = init_pvp(45, 28, 28, 1);  // 105840 values
    const double n = static_cast<double>(big.values.size());
    double m = 0.0, v = 0.0;
    for (double x : big.values.data()) m += x;
    m /= n;
    for (double x : big.values.data()) v += (x - m) * (x - m);
    CHECK(std::abs(std::sqrt(v / (n - 1)) - 0.02) <= 0.001);

    CHECK_THROWS_AS(init_pvp(3, 16, 8, 1), ParameterError);
    CHECK_THROWS_AS(init_pvp(0, 16, 16, 1), ParameterError);
    CHECK_THROWS_AS(init_pvp(2, 2, 2, 1, 4), ParameterError);
}

TEST_CASE("init_text_prompts") {
    const auto enc = pair();
    const std::vector<std::string> names{"dog", "traffic light"};
    const auto set = init_text_prompts(16, names, enc, 1);
    CHECK(set.length() == 16);
    CHECK(set.classes() == 2);
    CHECK(set.class_names.row(0) == enc.token_embedding(enc.vocab().id("dog")));
    CHECK(set.class_names.row(1) == enc.name_embedding("traffic light"));
    for (std::size_t m : {8, 12, 16, 20, 24}) CHECK(init_text_prompts(m, names, enc, 1).length() == m);
    CHECK_THROWS_AS(init_text_prompts(4, std::vector<std::string>{}, enc, 1), ParameterError);
    CHECK_THROWS_AS(init_text_prompts(0, names, enc, 1), ParameterError);
}

TEST_CASE("adapter: λ=1 is the identity on unit rows") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto adapter = init_dual_adapter(16, 0, 1.0, seed);
        // Weights far from init must not matter either.
        adapter.image.w1 = gaussian_init({16, 4}, 0.0, 3.0, seed + 100);
        adapter.image.b2 = gaussian_init({16}, 0.0, 3.0, seed + 200);
        const auto x = unit_rows(5, 16, seed);
        const auto y = adapter_apply(x, AdapterSide::image, adapter);
        for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(std::abs(y[i] - x[i]) <= 1e-9);
    }
}

TEST_CASE("adapter: λ=0 is the normalised bottleneck alone, outputs unit norm") {
    auto adapter = init_dual_adapter(16, 0, 0.0, 3);
    CHECK(adapter.text.w1.shape() == Shape{16, 4});
    CHECK(adapter.text.b1 == Tensor(Shape{4}));
    const auto x = unit_rows(4, 16, 8);
    const auto y = adapter_apply(x, AdapterSide::text, adapter);

    ad::Tape tape;
    const auto xv = tape.constant(x);
    const auto w = adapter_constants(tape, adapter.text);
    const auto raw =
        ad::normalize_rows(ad::add_bias(ad::matmul(ad::relu(ad::add_bias(ad::matmul(xv, w.w1), w.b1)), w.w2), w.b2));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == Catch::Approx(raw.value()[i]).margin(1e-15));

    adapter.lambda = 0.5;
    const auto half = adapter_apply(x, AdapterSide::text, adapter);
    for (std::size_t r = 0; r < 4; ++r) CHECK(l2_norm(half.row(r).data()) == Catch::Approx(1.0).margin(1e-9));

    adapter.lambda = 1.5;
    CHECK_THROWS_AS(adapter_apply(x, AdapterSide::text, adapter), ParameterError);
    CHECK_THROWS_AS(init_dual_adapter(16, 0, -0.1, 1), ParameterError);
    adapter.lambda = 0.5;
    CHECK_THROWS_AS(adapter_apply(unit_rows(2, 8, 1), AdapterSide::text, adapter), ShapeError);
}

TEST_CASE("checkpoint save → load → save is byte-identical") {
    const auto enc = pair(2);
    const std::vector<std::string> names{"dog", "cat"};
    Checkpoint ck;
    ck.stage = 2;
    ck.seed = 77;
    ck.class_names = names;
    ck.encoder = enc.config();
    ck.encoder_digest = enc.digest();
    ck.hyperparameters = {{"tau", 0.02}, {"margin", 1.0}, {"epochs", 20}};
    ck.pvp = init_pvp(2, 16, 16, 1);
    ck.prompts = init_text_prompts(4, names, enc, 1);
    ck.adapter = init_dual_adapter(16, 0, 0.5, 1);

    const auto dir = std::filesystem::temp_directory_path() / "pvp_test_ckpt";
    std::filesystem::remove_all(dir);
    save_checkpoint(ck, dir / "a.ckpt");
    const auto loaded = load_checkpoint(dir / "a.ckpt", &enc);
    save_checkpoint(loaded, dir / "b.ckpt");
    CHECK(io::read_file(dir / "a.ckpt") == io::read_file(dir / "b.ckpt"));
    CHECK(loaded.pvp.values == ck.pvp.values);
    CHECK(loaded.prompts->context == ck.prompts->context);
    CHECK(loaded.adapter->text.w2 == ck.adapter->text.w2);
    CHECK(loaded.hyperparameters == ck.hyperparameters);

    SECTION("digest mismatch is rejected") {
        const auto other = pair(3);
        CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", &other), IncompatibleError);
    }
    SECTION("stage-1 schema has no text prompts") {
        Checkpoint s1 = ck;
        s1.stage = 1;
        s1.prompts.reset();
        s1.adapter.reset();
        const auto back = decode_checkpoint(encode_checkpoint(s1));
        CHECK(back.stage == 1);
        CHECK_FALSE(back.prompts.has_value());
        CHECK_FALSE(back.adapter.has_value());
    }
    SECTION("corruption raises FormatError") {
        const auto bytes = encode_checkpoint(ck);
        CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
        auto bad = bytes;
        bad[1] = 'X';
        CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
        CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError);
    }
    std::filesystem::remove_all(dir);
}
