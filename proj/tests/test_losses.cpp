#include <catch_amalgamated.hpp>

#include <cmath>

#include "pvp/error.hpp"
#include "pvp/losses.hpp"
#include "pvp/model.hpp"
#include "pvp/optim.hpp"
#include "pvp/random.hpp"

using namespace pvp;

namespace {

// Oracles written straight from the formulas, no shared code with the library.
double ranking_oracle(const Tensor& s, const std::vector<std::vector<int>>& multi_hot, double m) {
    double total = 0.0;
    for (std::size_t k = 0; k < s.rows(); ++k) {
        for (std::size_t i = 0; i < s.cols(); ++i) {
            for (std::size_t j = 0; j < s.cols(); ++j) {
                if (multi_hot[k][i] == 1 && multi_hot[k][j] == 0) total += std::max(0.0, m - s.at(k, i) + s.at(k, j));
            }
        }
    }
    return total / static_cast<double>(s.rows());
}

double bce_oracle(const Tensor& s, const std::vector<std::vector<int>>& multi_hot, double tau) {
    double total = 0.0;
    for (std::size_t k = 0; k < s.rows(); ++k) {
        for (std::size_t j = 0; j < s.cols(); ++j) {
            const double p = 1.0 / (1.0 + std::exp(-s.at(k, j) / tau));
            total -= multi_hot[k][j] ? std::log(p) : std::log(1.0 - p);
        }
    }
    return total / static_cast<double>(s.size());
}

double vtc_oracle(const Tensor& s, double tau) {
    const std::size_t n = s.rows();
    double rows = 0.0, cols = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double zr = 0.0, zc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            zr += std::exp(s.at(i, j) / tau);
            zc += std::exp(s.at(j, i) / tau);
        }
        rows -= std::log(std::exp(s.at(i, i) / tau) / zr);
        cols -= std::log(std::exp(s.at(i, i) / tau) / zc);
    }
    return 0.5 * (rows / n + cols / n);
}

struct Instance {
    Tensor s;
    std::vector<LabelSets> labels;
    std::vector<std::vector<int>> multi_hot;
};

Instance random_instance(std::uint64_t seed, std::size_t max_b = 6, std::size_t max_n = 6) {
    CounterRng rng(seed, "instance");
    const std::size_t b = 1 + rng.uniform_index(max_b);
    const std::size_t n = 2 + rng.uniform_index(max_n - 1);
    Instance out;
    out.s = Tensor(Shape{b, n});
    for (auto& v : out.s.data()) v = 2.0 * rng.uniform() - 1.0;
    for (std::size_t k = 0; k < b; ++k) {
        std::vector<int> hot(n, 0);
        std::vector<std::size_t> pos;
        const std::size_t count = 1 + rng.uniform_index(n - 1);
        while (pos.size() < count) {
            const auto c = rng.uniform_index(n);
            if (!hot[c]) {
                hot[c] = 1;
                pos.push_back(c);
            }
        }
        out.labels.push_back(LabelSets::from_positive(pos, n));
        out.multi_hot.push_back(hot);
    }
    return out;
}

Tensor unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
    auto t = gaussian_init({n, d}, 0.0, 1.0, seed);
    for (std::size_t r = 0; r < n; ++r) {
        const double norm = l2_norm(t.row(r).data());
        for (std::size_t c = 0; c < d; ++c) t.at(r, c) /= norm;
    }
    return t;
}

}  // namespace

TEST_CASE("ranking loss worked examples") {
    const auto labels = std::vector<LabelSets>{LabelSets::from_positive({0}, 2)};
    CHECK(ranking_loss(Tensor::matrix(1, 2, {0.9, 0.1}), labels, 1.0) == Catch::Approx(0.2).margin(1e-15));
    CHECK(ranking_loss(Tensor::matrix(1, 2, {0.9, -0.2}), labels, 1.0) == 0.0);
    CHECK(ranking_loss(Tensor::matrix(1, 2, {0.3, 0.3}), labels, 1.0) == 1.0);
}

TEST_CASE("ranking loss matches brute force and its properties hold") {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto inst = random_instance(seed);
        const double m = seed % 2 ? 1.0 : 0.3;
        const double l = ranking_loss(inst.s, inst.labels, m);
        REQUIRE(l >= 0.0);
        REQUIRE(std::abs(l - ranking_oracle(inst.s, inst.multi_hot, m)) <= 1e-12);

        bool separated = true;
        for (std::size_t k = 0; k < inst.s.rows(); ++k) {
            for (auto i : inst.labels[k].positive) {
                for (auto j : inst.labels[k].negative) separated &= inst.s.at(k, i) - inst.s.at(k, j) >= m;
            }
        }
        REQUIRE((l == 0.0) == separated);

        // Shift every row by its own constant.
        Tensor shifted = inst.s;
        CounterRng rng(seed, "shift");
        for (std::size_t k = 0; k < shifted.rows(); ++k) {
            const double c = 4.0 * rng.uniform() - 2.0;
            for (std::size_t j = 0; j < shifted.cols(); ++j) shifted.at(k, j) += c;
        }
        REQUIRE(std::abs(ranking_loss(shifted, inst.labels, m) - l) <= 1e-12);
    }
}

TEST_CASE("ranking loss is zero iff separated: constructed separated instances") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto inst = random_instance(seed + 5000);
        for (std::size_t k = 0; k < inst.s.rows(); ++k) {
            for (auto i : inst.labels[k].positive) inst.s.at(k, i) = 1.0;
            for (auto j : inst.labels[k].negative) inst.s.at(k, j) = -0.05 * static_cast<double>(j % 3);
        }
        REQUIRE(ranking_loss(inst.s, inst.labels, 1.0) == 0.0);
    }
}

TEST_CASE("ranking loss label contract") {
    CHECK_THROWS_AS(LabelSets::from_positive({}, 3), ContractError);
    CHECK_THROWS_AS(LabelSets::from_positive({3}, 3), ContractError);
    const std::vector<LabelSets> all{LabelSets::from_positive({0, 1}, 2)};
    CHECK_THROWS_AS(ranking_loss(Tensor::matrix(1, 2, {0.1, 0.2}), all, 1.0), ContractError);
    std::vector<LabelSets> overlap{LabelSets{{0}, {0, 1}}};
    CHECK_THROWS_AS(ranking_loss(Tensor::matrix(1, 2, {0.1, 0.2}), overlap, 1.0), ContractError);
}

TEST_CASE("contrastive vtc closed form and symmetry") {
    const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    CHECK(std::abs(contrastive_vtc(eye, eye, 1.0) - 0.31326168751822286) <= 1e-6);
    CHECK(std::abs(contrastive_vtc(eye, eye, 1.0) - std::log1p(std::exp(-1.0))) <= 1e-15);

    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        CounterRng rng(seed, "vtc");
        const std::size_t n = 2 + rng.uniform_index(6);
        const auto u = unit_rows(n, 8, seed * 2);
        const auto e = unit_rows(n, 8, seed * 2 + 1);
        const double tau = seed % 3 == 0 ? 0.02 : 0.5;
        const double a = contrastive_vtc(u, e, tau);
        REQUIRE(a >= 0.0);
        REQUIRE(std::abs(a - contrastive_vtc(e, u, tau)) <= 1e-12);
        ad::Tape tape;
        const auto s = ad::matmul_nt(tape.constant(u), tape.constant(e)).value();
        if (tau > 0.1) REQUIRE(std::abs(a - vtc_oracle(s, tau)) <= 1e-12);
    }
    CHECK_THROWS_AS(contrastive_vtc(unit_rows(3, 4, 1), unit_rows(2, 4, 1), 0.02), ShapeError);
}

TEST_CASE("contrastive vtc decreases with the diagonal scale") {
    double previous = INFINITY;
    for (double c = 0.0; c <= 20.0; c += 0.25) {
        Tensor u = Tensor::matrix(3, 3, {c, 0, 0, 0, c, 0, 0, 0, c});
        const Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        const double l = contrastive_vtc(u, eye, 1.0);
        REQUIRE(l < previous);
        previous = l;
    }
    CHECK(previous < 1e-8);
}

TEST_CASE("visual_text_ranking equals ranking loss on G·targetᵀ") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto g = unit_rows(3, 8, seed);
        const auto t = unit_rows(4, 8, seed + 99);
        std::vector<LabelSets> labels;
        for (std::size_t k = 0; k < 3; ++k) labels.push_back(LabelSets::from_positive({k}, 4));
        ad::Tape tape;
        const auto s = ad::matmul_nt(tape.constant(g), tape.constant(t)).value();
        std::vector<std::vector<int>> hot(3, std::vector<int>(4, 0));
        for (std::size_t k = 0; k < 3; ++k) hot[k][k] = 1;
        REQUIRE(std::abs(visual_text_ranking(g, t, labels, 1.0) - ranking_oracle(s, hot, 1.0)) <= 1e-12);
    }
    // Orthogonal rows: every pair contributes exactly m.
    const Tensor g = Tensor::matrix(1, 4, {0, 0, 0, 1});
    const Tensor t = Tensor::matrix(3, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
    const std::vector<LabelSets> labels{LabelSets::from_positive({0}, 3)};
    CHECK(visual_text_ranking(g, t, labels, 1.0) == 2.0);
}

TEST_CASE("CE variant") {
    const std::vector<LabelSets> labels{LabelSets::from_positive({1}, 3)};
    CHECK(ce_variant(Tensor(Shape{1, 3}), labels) == Catch::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(ce_variant(Tensor::matrix(1, 3, {-800, 800, -800}), labels) < 1e-300);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto inst = random_instance(seed + 777);
        REQUIRE(std::abs(ce_variant(inst.s, inst.labels, 1.0) - bce_oracle(inst.s, inst.multi_hot, 1.0)) <= 1e-12);
    }
}

TEST_CASE("total loss weighting") {
    LossConfig cfg;
    CHECK(total_loss(0.3, 0.2, 0.1, cfg).total == Catch::Approx(0.6).epsilon(1e-15));
    cfg.gamma = 2;
    cfg.eta = 3;
    cfg.nu = 1;
    CHECK(total_loss(0.3, 0.2, 0.1, cfg).total == Catch::Approx(1.3).epsilon(1e-15));
    cfg.eta = -1;
    CHECK_THROWS_AS(total_loss(0.3, 0.2, 0.1, cfg), ParameterError);
    CHECK_THROWS_AS(total_loss(NAN, 0.2, 0.1, LossConfig{}), ContractError);
    const LossConfig defaults;
    CHECK(defaults.margin == 1.0);
    CHECK(defaults.tau == 0.02);
    CHECK(defaults.vtc == LossVariant::cross_entropy);
    CHECK(defaults.visual == LossVariant::ranking);
    CHECK(defaults.text == LossVariant::ranking);
}

TEST_CASE("loss gradients match finite differences away from kinks") {
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto inst = random_instance(seed + 12345, 4, 5);
        // Resample instances with a hinge within 1e-3 of its kink.
        bool near_kink = false;
        for (std::size_t k = 0; k < inst.s.rows(); ++k) {
            for (auto i : inst.labels[k].positive) {
                for (auto j : inst.labels[k].negative) {
                    near_kink |= std::abs(1.0 - inst.s.at(k, i) + inst.s.at(k, j)) < 1e-3;
                }
            }
        }
        if (near_kink) continue;
        const std::vector<Tensor> params{inst.s};
        const LossFn rank = [&](ad::Tape&, std::span<const ad::Var> p) { return ranking_loss(p[0], inst.labels, 1.0); };
        const LossFn ce = [&](ad::Tape&, std::span<const ad::Var> p) { return ce_variant(p[0], inst.labels, 1.0); };
        REQUIRE(finite_diff_check(rank, params, 1e-5) <= 1e-6);
        REQUIRE(finite_diff_check(ce, params, 1e-5) <= 1e-6);
        ++checked;
    }
    CHECK(checked >= 30);

    const std::vector<Tensor> ue{unit_rows(4, 6, 1), unit_rows(4, 6, 2)};
    for (double tau : {1.0, 0.1}) {
        const LossFn vtc = [&](ad::Tape&, std::span<const ad::Var> p) { return contrastive_vtc(p[0], p[1], tau); };
        CHECK(finite_diff_check(vtc, ue, 1e-5) <= 1e-6);
    }
}

TEST_CASE("hinge subgradient is zero at exact equality") {
    const std::vector<LabelSets> labels{LabelSets::from_positive({0}, 2)};
    const auto r = grad([&](ad::Tape&, std::span<const ad::Var> p) { return ranking_loss(p[0], labels, 1.0); },
                        std::vector<Tensor>{Tensor::matrix(1, 2, {0.5, -0.5})});
    CHECK(r.value == 0.0);
    CHECK(r.grads[0] == Tensor(Shape{1, 2}));
}

TEST_CASE("zero loss weight removes that term's gradient") {
    const auto g = unit_rows(3, 6, 7);
    std::vector<LabelSets> labels;
    for (std::size_t k = 0; k < 3; ++k) labels.push_back(LabelSets::from_positive({k}, 3));
    const std::vector<Tensor> params{unit_rows(3, 6, 8), unit_rows(3, 6, 9)};
    LossConfig cfg;
    cfg.tau = 0.5;
    cfg.gamma = 0.0;
    cfg.nu = 0.0;
    // With γ = ν = 0 only L_visual remains, and it does not depend on E.
    const auto r = grad(
        [&](ad::Tape& tape, std::span<const ad::Var> p) {
            return stage2_objective(p[0], p[1], tape.constant(g), labels, cfg).total;
        },
        params);
    CHECK(r.grads[1] == Tensor(Shape{3, 6}));
    CHECK_FALSE(r.grads[0] == Tensor(Shape{3, 6}));
}

TEST_CASE("stage-2 objective asserts an N×N similarity") {
    ad::Tape tape;
    const auto u = tape.constant(unit_rows(3, 6, 1));
    const auto e = tape.constant(unit_rows(4, 6, 2));
    const auto g = tape.constant(unit_rows(2, 6, 3));
    const std::vector<LabelSets> labels(2, LabelSets::from_positive({0}, 3));
    CHECK_THROWS_AS(stage2_objective(u, e, g, labels, LossConfig{}), ContractError);
}

TEST_CASE("text-side adapter gradients accumulate from both text paths") {
    // Shared h(·) applied to text prompts and global texts versus a two-copy control.
    const std::size_t d = 8;
    const auto adapter = init_dual_adapter(d, 2, 0.5, 4);
    const auto prompts = unit_rows(3, d, 11);
    const auto globals = unit_rows(4, d, 12);
    const auto u = unit_rows(3, d, 13);
    std::vector<LabelSets> labels;
    for (std::size_t k = 0; k < 4; ++k) labels.push_back(LabelSets::from_positive({k % 3}, 3));
    LossConfig cfg;
    cfg.tau = 0.5;

    const std::vector<Tensor> once{adapter.text.w1, adapter.text.b1, adapter.text.w2, adapter.text.b2};
    std::vector<Tensor> twice = once;
    twice.insert(twice.end(), once.begin(), once.end());

    const auto shared = grad(
        [&](ad::Tape& tape, std::span<const ad::Var> p) {
            const AdapterVars h{p[0], p[1], p[2], p[3]};
            const auto e = adapter_apply(tape.constant(prompts), h, 0.5, true);
            const auto g = adapter_apply(tape.constant(globals), h, 0.5, true);
            return stage2_objective(tape.constant(u), e, g, labels, cfg).total;
        },
        once);
    const auto split = grad(
        [&](ad::Tape& tape, std::span<const ad::Var> p) {
            const AdapterVars h_prompt{p[0], p[1], p[2], p[3]};
            const AdapterVars h_global{p[4], p[5], p[6], p[7]};
            const auto e = adapter_apply(tape.constant(prompts), h_prompt, 0.5, true);
            const auto g = adapter_apply(tape.constant(globals), h_global, 0.5, true);
            return stage2_objective(tape.constant(u), e, g, labels, cfg).total;
        },
        twice);
    REQUIRE(shared.value == split.value);
    for (std::size_t i = 0; i < 4; ++i) {
        bool both_paths_contribute = false;
        for (std::size_t k = 0; k < once[i].size(); ++k) {
            const double sum = split.grads[i][k] + split.grads[i + 4][k];
            REQUIRE(std::abs(shared.grads[i][k] - sum) <= 1e-12);
            both_paths_contribute |= split.grads[i][k] != 0.0 && split.grads[i + 4][k] != 0.0;
        }
        CHECK(both_paths_contribute);
    }
}
