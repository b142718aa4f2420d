// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor arithmetic, reverse-mode gradients, stop-gradient and cosine similarity.

#include <cmath>
#include <limits>

#include "catch_amalgamated.hpp"
#include "op_catalog.hpp"
#include "test_support.hpp"

using namespace hemalign;
using hemalign::testing::random_tensor;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

TEST_CASE("tensor construction checks data length") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.all_finite());
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("param store keeps one zeroed gradient slot per parameter") {
    ParamStore ps;
    ps.add("w", Tensor({3, 2}, 0.5));
    ps.add("b", Tensor({1, 2}, -1.0));
    CHECK_THROWS_AS(ps.add("w", Tensor({1, 1})), ConfigError);
    CHECK_THROWS_AS(ps.value("missing"), ConfigError);
    for (const auto& n : ps.names()) {
        CHECK(ps.grad(n).shape() == ps.value(n).shape());
        for (double g : ps.grad(n).values()) CHECK(g == 0.0);
    }
    forward_backward(ps, [&](Graph& g) { return sum(mul(g.param(ps, "w"), g.param(ps, "w"))); });
    CHECK(ps.grad("w")[0] == 1.0);
    ps.zero_grads();
    for (const auto& n : ps.names())
        for (double g : ps.grad(n).values()) CHECK(g == 0.0);
    CHECK(ps.parameter_count() == 8);
}

TEST_CASE("gradient of sum is all ones") {
    ParamStore ps;
    ps.add("p", Tensor({3, 4}, 0.25));
    const double loss = forward_backward(ps, [&](Graph& g) { return sum(g.param(ps, "p")); });
    CHECK(loss == 3.0);
    for (double g : ps.grad("p").values()) CHECK(g == 1.0);
}

TEST_CASE("stop-gradient kills one branch of a product") {
    ParamStore ps;
    ps.add("p", Tensor::row({2.0}));
    const double loss = forward_backward(ps, [&](Graph& g) {
        Var p = g.param(ps, "p");
        return sum(mul(stop_gradient(p), p));
    });
    CHECK(loss == 4.0);
    CHECK(ps.grad("p")[0] == 2.0);
}

TEST_CASE("stop-gradient forward is identity and backward is zero") {
    ParamStore ps;
    ps.add("x", Tensor::row({1.0, 2.0, 3.0}));
    Graph g;
    Var x = g.param(ps, "x");
    Var s = stop_gradient(x);
    CHECK(s.value() == x.value());

    forward_backward(ps, [&](Graph& g2) { return sum(square(stop_gradient(g2.param(ps, "x")))); });
    for (double v : ps.grad("x").values()) CHECK(v == 0.0);

    const double loss = forward_backward(ps, [&](Graph& g2) {
        Var x2 = g2.param(ps, "x");
        return sum(square(sub(x2, stop_gradient(x2))));
    });
    CHECK(loss == 0.0);
    // d/dx (x - c)^2 = 2(x - c) = 0 at c = x
    for (double v : ps.grad("x").values()) CHECK(v == 0.0);
}

TEST_CASE("straight-through forwards the quantized value and passes the gradient") {
    ParamStore ps;
    ps.add("h", Tensor::row({0.2, -0.7}));
    Tensor q = Tensor::row({0.0, -1.0});
    const double loss = forward_backward(ps, [&](Graph& g) {
        Var z = g.straight_through(g.param(ps, "h"), q);
        CHECK(z.value() == q);
        return sum(mul_const(z, Tensor::row({3.0, 5.0})));
    });
    CHECK(loss == -5.0);
    CHECK(ps.grad("h")[0] == 3.0);
    CHECK(ps.grad("h")[1] == 5.0);
}

TEST_CASE("cosine similarity examples") {
    CHECK(cosine_similarity(Tensor::row({1, 0}), Tensor::row({1, 0})) == Catch::Approx(1.0).margin(1e-8));
    CHECK(cosine_similarity(Tensor::row({1, 0}), Tensor::row({0, 1})) == 0.0);
    CHECK(cosine_similarity(Tensor::row({3, 4}), Tensor::row({6, 8})) == Catch::Approx(1.0).margin(1e-8));
    CHECK_THROWS_AS(cosine_similarity(std::span<const double>{}, std::span<const double>{}), ShapeError);
    CHECK_THROWS_MATCHES(cosine_similarity(Tensor::row({1, 2}), Tensor::row({1, 2, 3})), ShapeError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("operand a") &&
                                                         ContainsSubstring("operand b")));
    // zero vector is guarded by the epsilon, not an error
    CHECK(cosine_similarity(Tensor::row({0, 0}), Tensor::row({1, 1})) == 0.0);
}

TEST_CASE("cosine similarity is invariant to positive scaling") {
    Rng rng = make_rng(11, "test.cosine");
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + uniform_index(rng, 8);
        Tensor a = random_tensor(1, n, rng);
        const double c = std::exp(random_tensor(1, 1, rng, -8.0, 8.0)[0]);
        Tensor b = a;
        for (auto& v : b.storage()) v *= c;
        double na = 0.0;
        for (double v : a.values()) na += v * v;
        const double p = std::sqrt(na) * std::sqrt(na * c * c);
        // exact value under the epsilon guard: p / (p + eps)
        CHECK_THAT(cosine_similarity(a, b), WithinAbs(p / (p + kCosineEpsilon), 1e-12));
        if (p >= 10.0) CHECK_THAT(cosine_similarity(a, b), WithinAbs(1.0, 1e-9));
        const double r = cosine_similarity(a, random_tensor(1, n, rng));
        CHECK(r >= -1.0);
        CHECK(r <= 1.0);
    }
}

TEST_CASE("cosine matrix agrees with pairwise cosine similarity") {
    Rng rng = make_rng(12, "test.cosine_matrix");
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor(3, 5, rng), b = random_tensor(4, 5, rng);
        Graph g;
        Tensor m = cosine_matrix(g.constant(a), g.constant(b)).value();
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                CHECK_THAT(m(i, j), WithinAbs(cosine_similarity(a.row_span(i), b.row_span(j)), 1e-15));
    }
}

TEST_CASE("softmax and logsumexp forward values") {
    Rng rng = make_rng(13, "test.softmax");
    Tensor x = random_tensor(3, 4, rng, -3.0, 3.0);
    Graph g;
    Tensor s = softmax_rows(g.constant(x)).value();
    Tensor l = logsumexp_rows(g.constant(x)).value();
    for (std::size_t r = 0; r < 3; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < 4; ++c) z += std::exp(x(r, c));
        double total = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK_THAT(s(r, c), WithinAbs(std::exp(x(r, c)) / z, 1e-14));
            total += s(r, c);
        }
        CHECK_THAT(total, WithinAbs(1.0, 1e-14));
        CHECK_THAT(l[r], WithinAbs(std::log(z), 1e-13));
    }
    // large logits stay finite
    Tensor big = Tensor::row({1000.0, 999.0});
    CHECK(softmax_rows(g.constant(big)).value().all_finite());
    CHECK_THAT(logsumexp_rows(g.constant(big)).value()[0], WithinAbs(1000.0 + std::log1p(std::exp(-1.0)), 1e-12));
}

TEST_CASE("structural ops forward values") {
    Graph g;
    Tensor x = Tensor::matrix(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
    Var v = g.constant(x);
    CHECK(mean_segments(v, 2).value() == Tensor::matrix(2, 2, {2, 3, 6, 7}));
    CHECK(sum_rows(v).value() == Tensor::row({16, 20}));
    CHECK(time_shift(v, 2, 1).value() == Tensor::matrix(4, 2, {0, 0, 1, 2, 0, 0, 5, 6}));
    CHECK(gather_rows(v, {3, 0}).value() == Tensor::matrix(2, 2, {7, 8, 1, 2}));
    CHECK(tile_rows(g.constant(Tensor::row({1, 2})), 2).value() == Tensor::matrix(2, 2, {1, 2, 1, 2}));
    CHECK(element(v, 2, 1).value().item() == 6.0);
    CHECK(diag(g.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}))).value() == Tensor::matrix(2, 1, {1, 4}));
    CHECK(concat_rows({v, g.constant(Tensor::row({9, 9}))}).value().rows() == 5);
    CHECK_THROWS_AS(mean_segments(v, 3), ShapeError);
    CHECK_THROWS_AS(time_shift(v, 3, 1), ShapeError);
    CHECK_THROWS_AS(tile_rows(v, 0), ShapeError);
}

TEST_CASE("causal attention matches a direct evaluation") {
    Rng rng = make_rng(14, "test.attention");
    const std::size_t T = 4, S = 2, heads = 2, dh = 3, d = heads * dh;
    Tensor q = random_tensor(S * T, d, rng), k = random_tensor(S * T, d, rng), v = random_tensor(S * T, d, rng);
    Graph g;
    Tensor out = causal_attention(g.constant(q), g.constant(k), g.constant(v), T, heads).value();
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < T; ++t) {
                std::vector<double> w(t + 1);
                double z = 0.0;
                for (std::size_t j = 0; j <= t; ++j) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) dot += q(s * T + t, h * dh + c) * k(s * T + j, h * dh + c);
                    z += (w[j] = std::exp(dot / std::sqrt(double(dh))));
                }
                for (std::size_t c = 0; c < dh; ++c) {
                    double expect = 0.0;
                    for (std::size_t j = 0; j <= t; ++j) expect += w[j] / z * v(s * T + j, h * dh + c);
                    CHECK_THAT(out(s * T + t, h * dh + c), WithinAbs(expect, 1e-13));
                }
            }
}

TEST_CASE("future steps do not influence causal attention") {
    Rng rng = make_rng(15, "test.attention.mask");
    const std::size_t T = 5, d = 4;
    Tensor q = random_tensor(T, d, rng), k = random_tensor(T, d, rng), v = random_tensor(T, d, rng);
    Graph g;
    Tensor before = causal_attention(g.constant(q), g.constant(k), g.constant(v), T, 2).value();
    for (std::size_t c = 0; c < d; ++c) {
        k(T - 1, c) += 3.0;
        v(T - 1, c) -= 2.0;
    }
    Tensor after = causal_attention(g.constant(q), g.constant(k), g.constant(v), T, 2).value();
    for (std::size_t r = 0; r + 1 < T; ++r)
        for (std::size_t c = 0; c < d; ++c) CHECK(before(r, c) == after(r, c));
}

TEST_CASE("every differentiable op matches central differences") {
    Rng rng = make_rng(2026, "test.gradcheck");
    const auto catalog = hemalign::testing::op_catalog();
    std::size_t instances = 0;
    for (int round = 0; round < 5; ++round) {
        for (const auto& factory : catalog) {
            auto c = factory(rng);
            auto res = check_gradients(c.params, [&](Graph& g) { return c.build(g, c.params); });
            INFO(c.name << " worst " << res.worst << " rel " << res.max_rel_error);
            CHECK(res.checked > 0);
            CHECK(res.passed(1e-4));
            ++instances;
        }
    }
    CHECK(instances >= 100);
}

TEST_CASE("random three-layer compositions match central differences") {
    Rng rng = make_rng(2027, "test.gradcheck.composition");
    for (int i = 0; i < 100; ++i) {
        auto c = hemalign::testing::random_composition(rng);
        auto res = check_gradients(c.params, [&](Graph& g) { return c.build(g, c.params); });
        INFO("instance " << i << " worst " << res.worst << " rel " << res.max_rel_error);
        CHECK(res.passed(1e-4));
    }
}

TEST_CASE("forward_backward is bit-reproducible") {
    Rng rng = make_rng(7, "test.determinism");
    auto c = hemalign::testing::random_composition(rng);
    const double first = forward_backward(c.params, [&](Graph& g) { return c.build(g, c.params); });
    const Tensor grad = c.params.grad("w1");
    for (int i = 0; i < 5; ++i) {
        const double again = forward_backward(c.params, [&](Graph& g) { return c.build(g, c.params); });
        CHECK(again == first);
        CHECK(c.params.grad("w1") == grad);
    }
}

TEST_CASE("shape mismatches name both operands") {
    Graph g;
    Var a = g.constant(Tensor::zeros(2, 3));
    Var b = g.constant(Tensor::zeros(3, 2));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(mul(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(matmul_nt(a, b), ShapeError);
    CHECK_THROWS_AS(cosine_matrix(a, b), ShapeError);
    try {
        (void)sub(a, b);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK_THAT(msg, ContainsSubstring("[2, 3]") || ContainsSubstring("2x3") || ContainsSubstring("(2, 3)"));
        CHECK_THAT(msg, ContainsSubstring("[3, 2]") || ContainsSubstring("3x2") || ContainsSubstring("(3, 2)"));
        CHECK(e.category() == "shape");
    }
    ParamStore ps;
    ps.add("p", Tensor::zeros(2, 2));
    CHECK_THROWS_AS(forward_backward(ps, [&](Graph& g2) { return g2.param(ps, "p"); }), ShapeError);
}

TEST_CASE("operations on finite inputs give finite outputs") {
    Rng rng = make_rng(16, "test.finite");
    const auto catalog = hemalign::testing::op_catalog();
    for (const auto& factory : catalog) {
        auto c = factory(rng);
        Graph g;
        Var loss = c.build(g, c.params);
        INFO(c.name);
        CHECK(loss.value().all_finite());
        g.backward(loss);
        for (const auto& n : c.params.names()) CHECK(c.params.grad(n).all_finite());
    }
}
