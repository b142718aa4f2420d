// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic {fMRI, video, caption} triplets with known correspondence.
//
// Each pair is driven by one latent stimulus trace: a Gaussian random walk
// smoothed by a 3-tap moving average. Video frames are a noisy linear view of
// the trace, fMRI volumes a noisy linear view of the HRF-convolved and delayed
// trace, and the caption a noisy view of the clip-mean latent. All feature
// values are rounded to float32 so the on-disk format round-trips exactly.

#ifndef HEMALIGN_SYNTHDATA_HPP
#define HEMALIGN_SYNTHDATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hemalign/config.hpp"
#include "hemalign/container.hpp"
#include "hemalign/error.hpp"
#include "hemalign/hrf.hpp"
#include "hemalign/rng.hpp"
#include "hemalign/tensor.hpp"

namespace hemalign {

enum class Split : std::uint8_t { train = 0, test = 1 };

struct TripletSample {
    std::uint64_t pair_id = 0;
    Tensor fmri;     // T_f x D_f
    Tensor video;    // T_v x D_v
    Tensor caption;  // D_c
    Split split = Split::train;

    friend bool operator==(const TripletSample&, const TripletSample&) = default;
};

struct SynthConfig {
    std::size_t n_train = 512;
    std::size_t n_test = 128;
    std::size_t latent_dim = 16;
    std::size_t video_dim = 24;
    std::size_t fmri_dim = 32;
    std::size_t caption_dim = 16;
    std::size_t t_video = 12;
    std::size_t t_fmri = 12;
    double tr_seconds = 1.0;
    double delay_seconds = 6.0;
    double noise_sigma = 0.3;
    /// Noise on the video and caption views.
    double aux_noise_sigma = 0.05;
    /// Standard deviation of one random-walk increment.
    double walk_step = 0.25;
    /// HRF support used for the forward model.
    double hrf_seconds = 32.0;
    /// Sample fMRI with the hemodynamic delay already removed (volume t aligned to frame t).
    bool pre_shift = false;
    std::uint64_t seed = 42;

    std::size_t delay_steps() const {
        return static_cast<std::size_t>(std::llround(delay_seconds / tr_seconds));
    }
    std::size_t applied_delay_steps() const { return pre_shift ? 0 : delay_steps(); }
    std::size_t hrf_length() const {
        return std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(hrf_seconds / tr_seconds)));
    }

    void validate() const {
        if (n_train + n_test == 0) throw ConfigError("synth: need at least one sample");
        if (latent_dim == 0 || video_dim == 0 || fmri_dim == 0 || caption_dim == 0 || t_video == 0 || t_fmri == 0)
            throw ConfigError("synth: all dimensions must be at least 1");
        if (!(tr_seconds > 0.0)) throw ConfigError("synth: tr_seconds must be positive");
        if (delay_seconds < 0.0) throw ConfigError("synth: delay_seconds must be non-negative");
        if (noise_sigma < 0.0 || aux_noise_sigma < 0.0 || walk_step < 0.0)
            throw ConfigError("synth: noise levels must be non-negative");
    }

    void read(const KeyValues& kv) {
        kv.read("synth.n_train", n_train);
        kv.read("synth.n_test", n_test);
        kv.read("synth.latent_dim", latent_dim);
        kv.read("synth.video_dim", video_dim);
        kv.read("synth.fmri_dim", fmri_dim);
        kv.read("synth.caption_dim", caption_dim);
        kv.read("synth.t_video", t_video);
        kv.read("synth.t_fmri", t_fmri);
        kv.read("synth.tr_seconds", tr_seconds);
        kv.read("synth.delay_seconds", delay_seconds);
        kv.read("synth.noise_sigma", noise_sigma);
        kv.read("synth.aux_noise_sigma", aux_noise_sigma);
        kv.read("synth.walk_step", walk_step);
        kv.read("synth.hrf_seconds", hrf_seconds);
        kv.read("synth.pre_shift", pre_shift);
        kv.read("synth.seed", seed);
    }

    void write(KeyValues& kv) const {
        kv.set("synth.n_train", std::uint64_t{n_train});
        kv.set("synth.n_test", std::uint64_t{n_test});
        kv.set("synth.latent_dim", std::uint64_t{latent_dim});
        kv.set("synth.video_dim", std::uint64_t{video_dim});
        kv.set("synth.fmri_dim", std::uint64_t{fmri_dim});
        kv.set("synth.caption_dim", std::uint64_t{caption_dim});
        kv.set("synth.t_video", std::uint64_t{t_video});
        kv.set("synth.t_fmri", std::uint64_t{t_fmri});
        kv.set("synth.tr_seconds", tr_seconds);
        kv.set("synth.delay_seconds", delay_seconds);
        kv.set("synth.noise_sigma", noise_sigma);
        kv.set("synth.aux_noise_sigma", aux_noise_sigma);
        kv.set("synth.walk_step", walk_step);
        kv.set("synth.hrf_seconds", hrf_seconds);
        kv.set("synth.pre_shift", pre_shift);
        kv.set("synth.seed", seed);
    }
};

/// Fixed random linear views of the latent space, one per modality.
struct Projections {
    Tensor video;    // D_v x latent
    Tensor fmri;     // D_f x latent
    Tensor caption;  // D_c x latent
};

inline Projections make_projections(const SynthConfig& cfg) {
    cfg.validate();
    auto draw = [&](std::size_t rows, const char* stream) {
        Rng rng = make_rng(cfg.seed, stream);
        std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim)));
        Tensor t = Tensor::zeros(rows, cfg.latent_dim);
        for (auto& v : t.storage()) v = n(rng);
        return t;
    };
    return {draw(cfg.video_dim, "projection.video"), draw(cfg.fmri_dim, "projection.fmri"),
            draw(cfg.caption_dim, "projection.caption")};
}

/// Latent trace of one pair. Row i holds L at time (i - history) in TR units.
struct LatentTrace {
    Tensor values;  // (history + horizon) x latent
    std::size_t history = 0;

    std::span<const double> at(long t) const {
        return values.row_span(static_cast<std::size_t>(t + static_cast<long>(history)));
    }
};

inline LatentTrace latent_trace(const SynthConfig& cfg, std::uint64_t pair_id) {
    const std::size_t history = cfg.delay_steps() + cfg.hrf_length();
    const std::size_t horizon = std::max(cfg.t_video, cfg.t_fmri);
    const std::size_t len = history + horizon;
    const std::size_t d = cfg.latent_dim;
    Rng rng = make_rng(cfg.seed, "latent", pair_id);
    std::normal_distribution<double> unit(0.0, 1.0);
    // raw walk with two extra leading steps for the causal 3-tap average
    std::vector<double> walk((len + 2) * d);
    for (std::size_t c = 0; c < d; ++c) walk[c] = unit(rng);
    for (std::size_t i = 1; i < len + 2; ++i)
        for (std::size_t c = 0; c < d; ++c) walk[i * d + c] = walk[(i - 1) * d + c] + cfg.walk_step * unit(rng);
    LatentTrace tr;
    tr.history = history;
    tr.values = Tensor::zeros(len, d);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t c = 0; c < d; ++c)
            tr.values(i, c) = (walk[i * d + c] + walk[(i + 1) * d + c] + walk[(i + 2) * d + c]) / 3.0;
    return tr;
}

namespace detail {

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void project_into(const Tensor& proj, std::span<const double> x, double* out) {
    for (std::size_t r = 0; r < proj.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < proj.cols(); ++c) acc += proj(r, c) * x[c];
        out[r] = acc;
    }
}

} // namespace detail

inline TripletSample generate_sample(const SynthConfig& cfg, const Projections& proj, const HrfKernel& hrf,
                                     std::uint64_t pair_id, Split split) {
    const LatentTrace tr = latent_trace(cfg, pair_id);
    const std::size_t d = cfg.latent_dim;
    Rng rng = make_rng(cfg.seed, "noise", pair_id);
    std::normal_distribution<double> unit(0.0, 1.0);

    TripletSample s;
    s.pair_id = pair_id;
    s.split = split;

    s.video = Tensor::zeros(cfg.t_video, cfg.video_dim);
    for (std::size_t t = 0; t < cfg.t_video; ++t) {
        detail::project_into(proj.video, tr.at(static_cast<long>(t)), s.video.data() + t * cfg.video_dim);
    }
    for (auto& v : s.video.storage()) v = detail::to_f32(v + cfg.aux_noise_sigma * unit(rng));

    const long delay = static_cast<long>(cfg.applied_delay_steps());
    s.fmri = Tensor::zeros(cfg.t_fmri, cfg.fmri_dim);
    std::vector<double> conv(d);
    for (std::size_t t = 0; t < cfg.t_fmri; ++t) {
        std::fill(conv.begin(), conv.end(), 0.0);
        for (std::size_t j = 0; j < hrf.length; ++j) {
            auto l = tr.at(static_cast<long>(t) - delay - static_cast<long>(j));
            for (std::size_t c = 0; c < d; ++c) conv[c] += hrf.tap(j) * l[c];
        }
        detail::project_into(proj.fmri, conv, s.fmri.data() + t * cfg.fmri_dim);
    }
    for (auto& v : s.fmri.storage()) v = detail::to_f32(v + cfg.noise_sigma * unit(rng));

    std::vector<double> clip_mean(d, 0.0);
    for (std::size_t t = 0; t < cfg.t_video; ++t) {
        auto l = tr.at(static_cast<long>(t));
        for (std::size_t c = 0; c < d; ++c) clip_mean[c] += l[c] / static_cast<double>(cfg.t_video);
    }
    s.caption = Tensor({cfg.caption_dim});
    detail::project_into(proj.caption, clip_mean, s.caption.data());
    for (auto& v : s.caption.storage()) v = detail::to_f32(v + cfg.aux_noise_sigma * unit(rng));
    return s;
}

/// Train samples get pair ids [0, n_train), test samples [n_train, n_train + n_test).
inline std::vector<TripletSample> generate_dataset(const SynthConfig& cfg, const Projections& proj) {
    cfg.validate();
    const HrfKernel hrf = hrf_kernel(cfg.tr_seconds, cfg.hrf_length());
    std::vector<TripletSample> out;
    out.reserve(cfg.n_train + cfg.n_test);
    for (std::uint64_t i = 0; i < cfg.n_train + cfg.n_test; ++i)
        out.push_back(generate_sample(cfg, proj, hrf, i, i < cfg.n_train ? Split::train : Split::test));
    return out;
}

inline std::vector<TripletSample> generate_dataset(const SynthConfig& cfg) {
    return generate_dataset(cfg, make_projections(cfg));
}

inline std::vector<TripletSample> select_split(const std::vector<TripletSample>& all, Split split) {
    std::vector<TripletSample> out;
    for (const auto& s : all)
        if (s.split == split) out.push_back(s);
    return out;
}

// --- dataset file ------------------------------------------------------------------------

inline constexpr std::string_view kDatasetMagic = "NALIGN01";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(const std::vector<TripletSample>& samples, const std::string& path) {
    ByteWriter w(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u64(samples.size());
    for (const auto& s : samples) {
        w.u64(s.pair_id);
        w.u8(static_cast<std::uint8_t>(s.split));
        for (const Tensor* t : {&s.fmri, &s.video, &s.caption}) {
            w.shape(t->shape());
            for (double v : t->values()) w.f32(static_cast<float>(v));
        }
    }
    w.finish(path);
}

/// Writes the dataset and a `<path>.manifest` sidecar recording the generating config.
inline void write_dataset(const std::vector<TripletSample>& samples, const std::string& path, const SynthConfig& cfg) {
    write_dataset(samples, path);
    KeyValues kv;
    cfg.write(kv);
    std::ofstream m(path + ".manifest");
    if (!m) throw IoError("cannot write manifest for '" + path + "'");
    m << "# synthetic dataset manifest\n" << kv.to_string();
}

inline std::vector<TripletSample> read_dataset(const std::string& path) {
    ByteReader r(path, kDatasetMagic);
    const std::size_t vat = r.offset();
    if (const auto v = r.u32(); v != kDatasetVersion)
        throw FormatError("unsupported dataset version " + std::to_string(v), vat);
    const std::uint64_t count = r.u64();
    std::vector<TripletSample> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        TripletSample s;
        s.pair_id = r.u64();
        const std::size_t sat = r.offset();
        const std::uint8_t split = r.u8();
        if (split > 1) throw FormatError("bad split tag " + std::to_string(split), sat);
        s.split = static_cast<Split>(split);
        for (Tensor* t : {&s.fmri, &s.video, &s.caption}) {
            Shape shape = r.shape();
            std::vector<double> data(shape_size(shape));
            for (auto& v : data) v = static_cast<double>(r.f32());
            *t = Tensor(std::move(shape), std::move(data));
        }
        out.push_back(std::move(s));
    }
    r.expect_end();
    return out;
}

} // namespace hemalign

#endif // HEMALIGN_SYNTHDATA_HPP
