// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// InfoNCE over predicted and actual future features, in both prediction directions.

#include <cmath>
#include <numeric>

#include "catch_amalgamated.hpp"
#include "test_support.hpp"

using namespace hemalign;
using hemalign::testing::random_tensor;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// -(1/B) sum_i log(exp(s_ii / tau) / sum_j exp(s_ij / tau)), without stabilization.
double infonce_oracle(const Tensor& p, const Tensor& t, double tau) {
    const std::size_t B = p.rows();
    double loss = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < B; ++j) denom += std::exp(cosine_similarity(p.row_span(i), t.row_span(j)) / tau);
        loss -= std::log(std::exp(cosine_similarity(p.row_span(i), t.row_span(i)) / tau) / denom);
    }
    return loss / double(B);
}

double loss_of(const Tensor& p, const Tensor& t, const NtclConfig& cfg = {}) {
    Graph g;
    return ntcl_loss(g.constant(p), g.constant(t), cfg).value().item();
}

EncoderConfig ctx_config() {
    EncoderConfig c;
    c.hidden = 4;
    c.heads = 2;
    c.ffn_width = 5;
    c.max_seq_len = 8;
    return c;
}

// Mean InfoNCE of one direction, recomputed position by position with single-sequence predictions.
double direction_oracle(ParamStore& ps, const std::string& prefix, const Tensor& source, const Tensor& target,
                        std::size_t T, std::size_t heads, const NtclConfig& cfg) {
    const std::size_t B = source.rows() / T, D = source.cols();
    double total = 0.0;
    for (std::size_t t = 0; t + cfg.offset < T; ++t) {
        Tensor preds = Tensor::zeros(B, D), futures = Tensor::zeros(B, D);
        for (std::size_t b = 0; b < B; ++b) {
            Tensor seq = Tensor::zeros(T, D);
            for (std::size_t r = 0; r < T; ++r)
                for (std::size_t c = 0; c < D; ++c) seq(r, c) = source(b * T + r, c);
            Graph g;
            Tensor p = context_predict(g, ps, prefix, g.constant(seq), t, cfg.offset, heads).value();
            for (std::size_t c = 0; c < D; ++c) {
                preds(b, c) = p[c];
                futures(b, c) = target(b * T + t + cfg.offset, c);
            }
        }
        total += infonce_oracle(preds, futures, cfg.temperature);
    }
    return total / double(T - cfg.offset);
}

} // namespace

TEST_CASE("a single candidate gives zero loss") {
    Rng rng = make_rng(1, "test.ntcl.b1");
    for (int i = 0; i < 20; ++i) CHECK(loss_of(random_tensor(1, 5, rng), random_tensor(1, 5, rng)) == 0.0);
}

TEST_CASE("uniform similarities give ln B") {
    Rng rng = make_rng(2, "test.ntcl.uniform");
    for (std::size_t B : {2u, 3u, 8u, 32u}) {
        Tensor p = Tensor::zeros(B, 4), t = Tensor::zeros(B, 4);
        Tensor v = random_tensor(1, 4, rng), w = random_tensor(1, 4, rng);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t c = 0; c < 4; ++c) p(i, c) = v[c], t(i, c) = w[c];
        CHECK_THAT(loss_of(p, t), WithinAbs(std::log(double(B)), 1e-9));
    }
}

TEST_CASE("two orthogonal pairs match the hand evaluation") {
    Tensor p = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const double loss = loss_of(p, p);
    CHECK_THAT(loss, WithinRel(std::log1p(std::exp(-1.0 / 0.07)), 1e-6));
    CHECK_THAT(loss, WithinAbs(infonce_oracle(p, p, 0.07), 1e-12));
    CHECK(loss == Catch::Approx(6.2e-7).epsilon(0.01));
}

TEST_CASE("infonce matches the direct formula") {
    Rng rng = make_rng(3, "test.ntcl.oracle");
    for (int i = 0; i < 50; ++i) {
        const std::size_t B = 1 + uniform_index(rng, 8), D = 1 + uniform_index(rng, 6);
        NtclConfig cfg;
        cfg.temperature = random_tensor(1, 1, rng, 0.05, 2.0)[0];
        Tensor p = random_tensor(B, D, rng), t = random_tensor(B, D, rng);
        const double loss = loss_of(p, t, cfg);
        CHECK_THAT(loss, WithinAbs(infonce_oracle(p, t, cfg.temperature), 1e-12 * std::max(1.0, loss)));
        CHECK(loss >= 0.0);
    }
}

TEST_CASE("loss is invariant under a common row permutation") {
    Rng rng = make_rng(4, "test.ntcl.perm");
    for (int i = 0; i < 20; ++i) {
        const std::size_t B = 2 + uniform_index(rng, 6);
        Tensor p = random_tensor(B, 4, rng), t = random_tensor(B, 4, rng);
        std::vector<std::size_t> perm(B);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Graph g;
        const double a = ntcl_loss(g.constant(p), g.constant(t), {}).value().item();
        const double b = ntcl_loss(gather_rows(g.constant(p), perm), gather_rows(g.constant(t), perm), {}).value().item();
        CHECK_THAT(a, WithinAbs(b, 1e-12));
    }
}

TEST_CASE("infonce gradients match central differences") {
    Rng rng = make_rng(5, "test.ntcl.grad");
    for (int i = 0; i < 20; ++i) {
        ParamStore ps;
        ps.add("p", random_tensor(4, 5, rng));
        ps.add("t", random_tensor(4, 5, rng));
        NtclConfig cfg;
        cfg.temperature = 0.5;
        auto res = check_gradients(ps, [&](Graph& g) { return ntcl_loss(g.param(ps, "p"), g.param(ps, "t"), cfg); });
        INFO(res.worst << " " << res.max_rel_error);
        CHECK(res.passed(1e-4));
    }
    // the default temperature sharpens the softmax; check it as well
    for (int i = 0; i < 10; ++i) {
        ParamStore ps;
        ps.add("p", random_tensor(4, 5, rng));
        ps.add("t", random_tensor(4, 5, rng));
        auto res = check_gradients(ps, [&](Graph& g) { return ntcl_loss(g.param(ps, "p"), g.param(ps, "t"), {}); });
        INFO(res.worst << " " << res.max_rel_error);
        CHECK(res.passed(1e-4));
    }
}

TEST_CASE("raising a positive similarity never raises the loss") {
    Rng rng = make_rng(6, "test.ntcl.monotone");
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t B = 1 + uniform_index(rng, 6);
        Tensor s = random_tensor(B, B, rng);
        const std::size_t i = uniform_index(rng, B);
        double prev = 0.0;
        for (int step = 0; step <= 10; ++step) {
            Tensor si = s;
            si(i, i) = -1.0 + 0.2 * step;
            Graph g;
            const double l = ntcl_loss_from_similarity(g.constant(si), {}).value().item();
            if (step > 0) CHECK(l <= prev);
            prev = l;
        }
    }
}

TEST_CASE("empty and mismatched batches are rejected") {
    CHECK_THROWS_AS(Tensor({0, 4}), ShapeError);
    Graph g;
    CHECK_THROWS_AS(ntcl_loss(g.constant(Tensor::zeros(2, 3)), g.constant(Tensor::zeros(3, 3)), {}), ShapeError);
    NtclConfig bad;
    bad.temperature = 0.0;
    CHECK_THROWS_AS(ntcl_loss(g.constant(Tensor::zeros(2, 3)), g.constant(Tensor::zeros(2, 3)), bad), ConfigError);
}

TEST_CASE("bidirectional loss averages the enabled directions") {
    Rng rng = make_rng(7, "test.ntcl.bidir");
    const EncoderConfig ec = ctx_config();
    const std::size_t T = 6, B = 3;
    for (int trial = 0; trial < 5; ++trial) {
        ParamStore ps;
        init_context_net(ps, kFmriToVideo, ec, rng);
        init_context_net(ps, kVideoToFmri, ec, rng);
        Tensor f = random_tensor(B * T, ec.hidden, rng), v = random_tensor(B * T, ec.hidden, rng);
        NtclConfig cfg;
        const double fv = direction_oracle(ps, kFmriToVideo, f, v, T, ec.heads, cfg);
        const double vf = direction_oracle(ps, kVideoToFmri, v, f, T, ec.heads, cfg);

        auto run = [&](const NtclConfig& c) {
            Graph g;
            return ntcl_bidirectional(g, ps, g.constant(f), g.constant(v), T, ec.heads, c).value().item();
        };
        CHECK_THAT(run(cfg), WithinAbs(0.5 * (fv + vf), 1e-12));
        NtclConfig only_fv = cfg;
        only_fv.video_to_fmri = false;
        CHECK_THAT(run(only_fv), WithinAbs(fv, 1e-12));
        NtclConfig only_vf = cfg;
        only_vf.fmri_to_video = false;
        CHECK_THAT(run(only_vf), WithinAbs(vf, 1e-12));

        // reusing precomputed fMRI -> video predictions gives the same value
        Graph g;
        Var fs = g.constant(f);
        Var preds = context_predict_all(g, ps, kFmriToVideo, fs, T, ec.heads);
        CHECK_THAT(ntcl_bidirectional(g, ps, fs, g.constant(v), T, ec.heads, cfg, preds).value().item(),
                   WithinAbs(0.5 * (fv + vf), 1e-12));
    }
}

TEST_CASE("bidirectional loss rejects empty objectives and short sequences") {
    Rng rng = make_rng(8, "test.ntcl.errors");
    const EncoderConfig ec = ctx_config();
    ParamStore ps;
    init_context_net(ps, kFmriToVideo, ec, rng);
    init_context_net(ps, kVideoToFmri, ec, rng);
    Graph g;
    Var f = g.constant(random_tensor(8, ec.hidden, rng)), v = g.constant(random_tensor(8, ec.hidden, rng));
    NtclConfig off;
    off.fmri_to_video = off.video_to_fmri = false;
    CHECK_THROWS_AS(ntcl_bidirectional(g, ps, f, v, 4, ec.heads, off), ConfigError);
    NtclConfig far;
    far.offset = 4;
    CHECK_THROWS_AS(ntcl_bidirectional(g, ps, f, v, 4, ec.heads, far), ConfigError);
    far.offset = 0;
    CHECK_THROWS_AS(ntcl_bidirectional(g, ps, f, v, 4, ec.heads, far), ConfigError);
    CHECK_NOTHROW(ntcl_bidirectional(g, ps, f, v, 4, ec.heads, NtclConfig{}));
}

TEST_CASE("bidirectional loss gradients match central differences") {
    Rng rng = make_rng(9, "test.ntcl.bidir.grad");
    EncoderConfig ec = ctx_config();
    ec.hidden = 2;
    ec.heads = 1;
    ec.ffn_width = 3;
    for (int trial = 0; trial < 3; ++trial) {
        ParamStore ps;
        init_context_net(ps, kFmriToVideo, ec, rng);
        init_context_net(ps, kVideoToFmri, ec, rng);
        ps.add("f", random_tensor(8, ec.hidden, rng));
        ps.add("v", random_tensor(8, ec.hidden, rng));
        NtclConfig cfg;
        cfg.temperature = 0.5;
        auto res = check_gradients(ps, [&](Graph& g) {
            return ntcl_bidirectional(g, ps, g.param(ps, "f"), g.param(ps, "v"), 4, ec.heads, cfg);
        });
        INFO(res.worst << " " << res.max_rel_error);
        CHECK(res.passed(1e-4));
    }
}
