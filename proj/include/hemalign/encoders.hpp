// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Trainable encoders into the shared width D_h.
//
// Sequences are processed in batches: B sequences of T timesteps are stacked
// row-wise into a (B * T) x D matrix, timestep t of sequence b at row b * T + t.
// Every parameter lives in one ParamStore under a dotted prefix.

#ifndef HEMALIGN_ENCODERS_HPP
#define HEMALIGN_ENCODERS_HPP

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "hemalign/autodiff.hpp"
#include "hemalign/config.hpp"
#include "hemalign/error.hpp"
#include "hemalign/rng.hpp"

namespace hemalign {

struct EncoderConfig {
    std::size_t hidden = 32;       // D_h
    std::size_t heads = 2;
    std::size_t scales = 3;        // L, dilations 1, 2, 4, ...
    std::size_t kernel_size = 3;
    std::size_t ffn_width = 64;
    std::size_t max_seq_len = 64;  // positional encodings

    void read(const KeyValues& kv) {
        kv.read("model.hidden", hidden);
        kv.read("model.heads", heads);
        kv.read("model.scales", scales);
        kv.read("model.kernel_size", kernel_size);
        kv.read("model.ffn_width", ffn_width);
        kv.read("model.max_seq_len", max_seq_len);
    }
    void write(KeyValues& kv) const {
        kv.set("model.hidden", std::uint64_t{hidden});
        kv.set("model.heads", std::uint64_t{heads});
        kv.set("model.scales", std::uint64_t{scales});
        kv.set("model.kernel_size", std::uint64_t{kernel_size});
        kv.set("model.ffn_width", std::uint64_t{ffn_width});
        kv.set("model.max_seq_len", std::uint64_t{max_seq_len});
    }
    void validate() const {
        if (hidden == 0 || scales == 0 || kernel_size == 0 || ffn_width == 0 || max_seq_len == 0)
            throw ConfigError("model: widths, scales and kernel size must be at least 1");
        if (heads == 0 || hidden % heads != 0) throw ConfigError("model: hidden width must be divisible by heads");
    }
};

inline std::size_t scale_dilation(std::size_t l) { return std::size_t{1} << l; }

// --- parameter initialization ----------------------------------------------------------

namespace init {

inline Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<double> n(0.0, stddev);
    Tensor t = Tensor::zeros(rows, cols);
    for (auto& v : t.storage()) v = n(rng);
    return t;
}

/// Variance-preserving weight for an `in` -> `out` linear map.
inline Tensor linear(std::size_t in, std::size_t out, Rng& rng) {
    return gaussian(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

} // namespace init

inline void init_mlp(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
                     Rng& rng) {
    ps.add(prefix + ".w1", init::linear(in, hidden, rng));
    ps.add(prefix + ".b1", Tensor::zeros(1, hidden));
    ps.add(prefix + ".w2", init::linear(hidden, out, rng));
    ps.add(prefix + ".b2", Tensor::zeros(1, out));
}

/// Two-layer perceptron applied row-wise: tanh(x W1 + b1) W2 + b2.
inline Var mlp(Graph& g, ParamStore& ps, const std::string& prefix, Var x) {
    Var h = tanh(add_row(matmul(x, g.param(ps, prefix + ".w1")), g.param(ps, prefix + ".b1")));
    return add_row(matmul(h, g.param(ps, prefix + ".w2")), g.param(ps, prefix + ".b2"));
}

// --- video / text --------------------------------------------------------------------------

inline void init_video_encoder(ParamStore& ps, std::size_t video_dim, const EncoderConfig& cfg, Rng& rng) {
    init_mlp(ps, "video", video_dim, cfg.hidden, cfg.hidden, rng);
}

inline void init_text_encoder(ParamStore& ps, std::size_t caption_dim, const EncoderConfig& cfg, Rng& rng) {
    init_mlp(ps, "text", caption_dim, cfg.hidden, cfg.hidden, rng);
}

/// Per-timestep encoding of stacked video frames: (B * T_v) x D_v -> (B * T_v) x D_h.
inline Var encode_video(Graph& g, ParamStore& ps, Var frames) { return mlp(g, ps, "video", frames); }

/// Caption features B x D_c -> B x D_h.
inline Var encode_text(Graph& g, ParamStore& ps, Var captions) { return mlp(g, ps, "text", captions); }

// --- fMRI temporal adaptation ------------------------------------------------------------

inline void init_temporal_adapt(ParamStore& ps, const std::string& prefix, std::size_t window, std::size_t in_dim,
                                std::size_t hidden, Rng& rng) {
    for (std::size_t t = 0; t < window; ++t) ps.add(prefix + ".w" + std::to_string(t), init::linear(in_dim, hidden, rng));
    ps.add(prefix + ".logits", Tensor::zeros(1, window));
}

inline std::size_t temporal_window(const ParamStore& ps, const std::string& prefix) {
    return ps.value(prefix + ".logits").cols();
}

/// sum_t softmax(a)_t * (h[t] W_t) for each of the B stacked windows: (B * T') x D_f -> B x D_h.
inline Var fmri_temporal_adapt(Graph& g, ParamStore& ps, Var seq, const std::string& prefix = "fmri.adapt") {
    const std::size_t window = temporal_window(ps, prefix);
    if (seq.rows() % window != 0)
        throw ShapeError("fmri_temporal_adapt: " + std::to_string(seq.rows()) + " rows do not tile a window of " +
                         std::to_string(window));
    const std::size_t batch = seq.rows() / window;
    Var alpha = softmax_rows(g.param(ps, prefix + ".logits"));
    Var out{};
    for (std::size_t t = 0; t < window; ++t) {
        std::vector<std::size_t> rows(batch);
        for (std::size_t b = 0; b < batch; ++b) rows[b] = b * window + t;
        Var term = scale_by(matmul(gather_rows(seq, std::move(rows)), g.param(ps, prefix + ".w" + std::to_string(t))),
                            element(alpha, 0, t));
        out = t == 0 ? term : add(out, term);
    }
    return out;
}

// --- dilated causal convolution ----------------------------------------------------------

inline void init_causal_conv(ParamStore& ps, const std::string& prefix, std::size_t kernel_size, std::size_t in_dim,
                             std::size_t out_dim, Rng& rng) {
    // spread the fan-in over the taps
    const double sd = 1.0 / std::sqrt(static_cast<double>(in_dim * kernel_size));
    for (std::size_t j = 0; j < kernel_size; ++j)
        ps.add(prefix + ".w" + std::to_string(j), init::gaussian(in_dim, out_dim, sd, rng));
    ps.add(prefix + ".b", Tensor::zeros(1, out_dim));
}

/// y[t] = b + sum_j x[t - j * dilation] W_j over each length-`seg_len` segment, zero left padding.
inline Var dilated_causal_conv(Graph& g, ParamStore& ps, const std::string& prefix, Var x, std::size_t seg_len,
                               std::size_t kernel_size, std::size_t dilation) {
    if (kernel_size == 0 || dilation == 0) throw ConfigError("dilated_causal_conv: kernel_size and dilation must be >= 1");
    Var out{};
    for (std::size_t j = 0; j < kernel_size; ++j) {
        const std::size_t shift = j * dilation;
        Var w = g.param(ps, prefix + ".w" + std::to_string(j));
        Var term = shift == 0 ? matmul(x, w) : matmul(time_shift(x, seg_len, shift), w);
        out = j == 0 ? term : add(out, term);
    }
    return add_row(out, g.param(ps, prefix + ".b"));
}

inline std::size_t receptive_field(std::size_t kernel_size, std::size_t dilation) {
    return (kernel_size - 1) * dilation + 1;
}

// --- multi-scale aggregation ---------------------------------------------------------------

inline void init_multiscale(ParamStore& ps, const std::string& prefix, std::size_t in_dim, const EncoderConfig& cfg,
                            Rng& rng) {
    for (std::size_t l = 0; l < cfg.scales; ++l)
        init_causal_conv(ps, prefix + ".s" + std::to_string(l), cfg.kernel_size, in_dim, cfg.hidden, rng);
    ps.add(prefix + ".logits", Tensor::zeros(1, cfg.scales));
}

struct MultiScale {
    std::vector<Var> per_scale;  // B x D_h each: temporal mean of the scale's convolution
    Var aggregate;               // B x D_h: softmax-weighted sum of per_scale
    Var sequence;                // (B * T) x D_h: softmax-weighted sum of the convolution outputs
};

inline MultiScale multiscale_aggregate(Graph& g, ParamStore& ps, const std::string& prefix, Var x, std::size_t seg_len,
                                       std::size_t kernel_size) {
    Var alpha = softmax_rows(g.param(ps, prefix + ".logits"));
    const std::size_t scales = alpha.cols();
    MultiScale ms;
    for (std::size_t l = 0; l < scales; ++l) {
        Var conv = dilated_causal_conv(g, ps, prefix + ".s" + std::to_string(l), x, seg_len, kernel_size,
                                       scale_dilation(l));
        Var a = element(alpha, 0, l);
        Var pooled = mean_segments(conv, seg_len);
        ms.per_scale.push_back(pooled);
        Var weighted = scale_by(pooled, a);
        Var wseq = scale_by(conv, a);
        ms.aggregate = l == 0 ? weighted : add(ms.aggregate, weighted);
        ms.sequence = l == 0 ? wseq : add(ms.sequence, wseq);
    }
    return ms;
}

// --- causal context network and prediction head --------------------------------------------

inline void init_context_net(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg, Rng& rng) {
    const std::size_t d = cfg.hidden;
    ps.add(prefix + ".pos", init::gaussian(cfg.max_seq_len, d, 0.1, rng));
    for (const char* m : {".wq", ".wk", ".wv", ".wo"}) ps.add(prefix + m, init::linear(d, d, rng));
    init_mlp(ps, prefix + ".ffn", d, cfg.ffn_width, d, rng);
    init_mlp(ps, prefix + ".head", d, d, d, rng);
}

/// One causal attention block over stacked sequences; returns the state at every position.
/// State t depends on input positions <= t only.
inline Var context_states(Graph& g, ParamStore& ps, const std::string& prefix, Var seq, std::size_t seg_len,
                          std::size_t heads) {
    Var pos_all = g.param(ps, prefix + ".pos");
    if (seg_len > pos_all.rows())
        throw ShapeError("context network: sequence length " + std::to_string(seg_len) + " exceeds " +
                         std::to_string(pos_all.rows()) + " positional encodings");
    if (seq.rows() % seg_len != 0)
        throw ShapeError("context network: " + std::to_string(seq.rows()) + " rows do not tile segments of " +
                         std::to_string(seg_len));
    std::vector<std::size_t> first(seg_len);
    for (std::size_t t = 0; t < seg_len; ++t) first[t] = t;
    Var x = add(seq, tile_rows(gather_rows(pos_all, std::move(first)), seq.rows() / seg_len));
    Var att = causal_attention(matmul(x, g.param(ps, prefix + ".wq")), matmul(x, g.param(ps, prefix + ".wk")),
                               matmul(x, g.param(ps, prefix + ".wv")), seg_len, heads);
    Var y = add(x, matmul(att, g.param(ps, prefix + ".wo")));
    return add(y, mlp(g, ps, prefix + ".ffn", y));
}

/// Prediction head g applied to every context state: row b*T + t predicts target position t + k.
inline Var context_predict_all(Graph& g, ParamStore& ps, const std::string& prefix, Var seq, std::size_t seg_len,
                               std::size_t heads) {
    return mlp(g, ps, prefix + ".head", context_states(g, ps, prefix, seq, seg_len, heads));
}

/// Prediction for position t + k of a single T x D_h sequence from positions 0..t (0-based).
inline Var context_predict(Graph& g, ParamStore& ps, const std::string& prefix, Var seq, std::size_t t, std::size_t k,
                           std::size_t heads) {
    const std::size_t len = seq.rows();
    if (k == 0 || t + k >= len)
        throw IndexError("context_predict: t=" + std::to_string(t) + ", k=" + std::to_string(k) +
                         " outside a sequence of length " + std::to_string(len));
    return gather_rows(context_predict_all(g, ps, prefix, seq, len, heads), {t});
}

} // namespace hemalign

#endif // HEMALIGN_ENCODERS_HPP
