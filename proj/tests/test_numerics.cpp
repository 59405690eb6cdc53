#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "pvp/autodiff.hpp"
#include "pvp/error.hpp"
#include "pvp/optim.hpp"
#include "pvp/random.hpp"

using namespace pvp;
using Catch::Approx;

TEST_CASE("gaussian_init with zero std is constant") {
    const auto t = gaussian_init({4}, 0.25, 0.0, 1);
    for (double v : t.data()) REQUIRE(v == 0.25);
}

TEST_CASE("gaussian_init is deterministic per seed and stream") {
    const auto a = gaussian_init({3, 5}, 0.0, 0.02, 7);
    const auto b = gaussian_init({3, 5}, 0.0, 0.02, 7);
    REQUIRE(a == b);
    REQUIRE_FALSE(a == gaussian_init({3, 5}, 0.0, 0.02, 8));
    REQUIRE_FALSE(a == gaussian_init({3, 5}, 0.0, 0.02, 7, 1));
}

TEST_CASE("gaussian_init empirical moments") {
    const auto t = gaussian_init({100000}, 0.0, 0.02, 7);
    const double n = static_cast<double>(t.size());
    const double m = std::accumulate(t.data().begin(), t.data().end(), 0.0) / n;
    double var = 0.0;
    for (double v : t.data()) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / (n - 1));
    CHECK(std::abs(m) < 3.0 * 0.02 / std::sqrt(n));
    CHECK(sd >= 0.0199);
    CHECK(sd <= 0.0201);
}

TEST_CASE("gaussian_init rejects negative std and empty shape") {
    REQUIRE_THROWS_AS(gaussian_init({2}, 0.0, -1.0, 1), ParameterError);
    REQUIRE_THROWS_AS(gaussian_init({}, 0.0, 1.0, 1), ParameterError);
}

TEST_CASE("counter rng uniform_index stays in range") {
    CounterRng rng(3, "x");
    for (int i = 0; i < 1000; ++i) REQUIRE(rng.uniform_index(7) < 7);
}

TEST_CASE("grad of half squared norm") {
    const LossFn f = [](ad::Tape&, std::span<const ad::Var> p) { return ad::scale(ad::sum(ad::mul(p[0], p[0])), 0.5); };
    const std::vector<Tensor> params{Tensor::vector({1.0, 2.0})};
    const auto r = grad(f, params);
    REQUIRE(r.value == Approx(2.5));
    REQUIRE(r.grads[0][0] == 1.0);
    REQUIRE(r.grads[0][1] == 2.0);
    REQUIRE(finite_diff_check(f, params, 1e-5) <= 1e-9);
}

TEST_CASE("grad of a constant loss is zero") {
    const LossFn f = [](ad::Tape& t, std::span<const ad::Var>) { return t.constant(Tensor::scalar(3.0)); };
    const std::vector<Tensor> params{Tensor::vector({1.0, 2.0, 3.0})};
    const auto r = grad(f, params);
    REQUIRE(r.grads[0] == Tensor::vector({0.0, 0.0, 0.0}));
}

TEST_CASE("grad rejects non-scalar losses") {
    const LossFn f = [](ad::Tape&, std::span<const ad::Var> p) { return p[0]; };
    const std::vector<Tensor> params{Tensor::vector({1.0, 2.0})};
    REQUIRE_THROWS_AS(grad(f, params), ContractError);
}

TEST_CASE("every differentiable op passes the finite-difference check") {
    // A composite that routes through each op once; random points keep ReLU away from 0.
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::vector<Tensor> params{
            gaussian_init({3, 4}, 0.0, 1.0, seed, 1),
            gaussian_init({4, 5}, 0.0, 1.0, seed, 2),
            gaussian_init({5}, 0.0, 1.0, seed, 3),
            gaussian_init({4, 4, 2}, 0.0, 1.0, seed, 4),
        };
        const LossFn f = [](ad::Tape& t, std::span<const ad::Var> p) {
            using namespace ad;
            auto h = add_bias(matmul(p[0], p[1]), p[2]);                // 3×5
            auto r = relu(h);
            auto n = normalize_rows(add(r, scale(h, 0.3)));            // 3×5
            auto s = softmax_rows(matmul_nt(n, transpose(transpose(n))));  // 3×3
            auto patches = patchify(p[3], 2);                           // 4×8
            auto sel = reshape(select(p[3], 1), {4, 2});
            auto mixed = concat_rows(std::vector<Var>{slice_rows(patches, 1, 2), slice_rows(patches, 0, 1)});  // 3×8
            auto prod = mul(mixed, mixed);
            std::vector<Var> terms{sum(mul(s, s)), mean(prod), sum(sub(sel, sel)), sum(mul(sel, sel))};
            std::vector<double> weights{1.0, 0.5, 2.0, -0.25};
            (void)t;
            return linear_combination(terms, weights);
        };
        REQUIRE(finite_diff_check(f, params, 1e-5) <= 1e-6);
    }
}

TEST_CASE("sgd_step examples") {
    Tensor theta = Tensor::vector({1.0});
    sgd_step(theta, Tensor::vector({2.0}), 0.5);
    REQUIRE(theta[0] == 0.0);

    Tensor unchanged = Tensor::vector({1.0, -2.0});
    sgd_step(unchanged, Tensor::vector({5.0, 5.0}), 0.0);
    REQUIRE(unchanged == Tensor::vector({1.0, -2.0}));

    Tensor bad = Tensor::vector({1.0});
    REQUIRE_THROWS_AS(sgd_step(bad, Tensor::vector({1.0, 2.0}), 0.1), ContractError);
}

TEST_CASE("cosine schedule endpoints and monotonicity") {
    const Schedule s(0.1, 40);
    REQUIRE(s.lr(0) == 0.1);
    REQUIRE(s.lr(40) == 0.0);
    REQUIRE(s.lr(20) == Approx(0.05).margin(1e-15));
    for (double e = 0.0; e < 40.0; e += 0.25) REQUIRE(s.lr(e + 0.25) <= s.lr(e));

    // Second step at the end of the schedule is a no-op.
    Tensor theta = Tensor::vector({1.0});
    sgd_step(theta, Tensor::vector({1.0}), s.lr(0));
    const Tensor after_first = theta;
    sgd_step(theta, Tensor::vector({1.0}), s.lr(40));
    REQUIRE(theta == after_first);
}
