// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model assembly, the weighted total objective, the training step and
// checkpointing.
//
// One training step: forward and backward through the weighted total loss,
// one adaptive-moment update at the cosine-annealed learning rate, then exactly
// one codebook EMA update from the statistics gathered in that forward pass.

#ifndef HEMALIGN_TRAINER_HPP
#define HEMALIGN_TRAINER_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hemalign/autodiff.hpp"
#include "hemalign/codebook.hpp"
#include "hemalign/config.hpp"
#include "hemalign/container.hpp"
#include "hemalign/encoders.hpp"
#include "hemalign/hrf.hpp"
#include "hemalign/matching.hpp"
#include "hemalign/ntcl.hpp"
#include "hemalign/rng.hpp"
#include "hemalign/synthdata.hpp"

namespace hemalign {

struct TrainConfig {
    double alpha_ntcl = 0.5;
    double alpha_match = 0.3;
    double alpha_commit = 0.2;
    std::size_t batch_size = 32;
    double lr_max = 3e-5;
    double lr_min = 1e-6;
    std::size_t total_steps = 2000;
    std::uint64_t seed = 42;
    std::size_t eval_every = 0;
    std::string checkpoint_path;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    // ablation switches
    bool use_ntcl = true;
    bool use_matching = true;
    bool use_sync_ema = true;

    void validate() const {
        if (alpha_ntcl < 0.0 || alpha_match < 0.0 || alpha_commit < 0.0)
            throw ConfigError("train: loss weights must be non-negative");
        if (batch_size < 2) throw ConfigError("train: batch_size must be at least 2");
        if (!(lr_max >= lr_min && lr_min >= 0.0)) throw ConfigError("train: need lr_max >= lr_min >= 0");
        if (total_steps == 0) throw ConfigError("train: total_steps must be at least 1");
    }

    void read(const KeyValues& kv) {
        kv.read("train.alpha_ntcl", alpha_ntcl);
        kv.read("train.alpha_match", alpha_match);
        kv.read("train.alpha_commit", alpha_commit);
        kv.read("train.batch_size", batch_size);
        kv.read("train.lr_max", lr_max);
        kv.read("train.lr_min", lr_min);
        kv.read("train.total_steps", total_steps);
        kv.read("train.seed", seed);
        kv.read("train.eval_every", eval_every);
        kv.read("train.checkpoint_path", checkpoint_path);
        kv.read("train.adam_beta1", adam_beta1);
        kv.read("train.adam_beta2", adam_beta2);
        kv.read("train.adam_eps", adam_eps);
        kv.read("train.use_ntcl", use_ntcl);
        kv.read("train.use_matching", use_matching);
        kv.read("train.use_sync_ema", use_sync_ema);
    }
    void write(KeyValues& kv) const {
        kv.set("train.alpha_ntcl", alpha_ntcl);
        kv.set("train.alpha_match", alpha_match);
        kv.set("train.alpha_commit", alpha_commit);
        kv.set("train.batch_size", std::uint64_t{batch_size});
        kv.set("train.lr_max", lr_max);
        kv.set("train.lr_min", lr_min);
        kv.set("train.total_steps", std::uint64_t{total_steps});
        kv.set("train.seed", seed);
        kv.set("train.eval_every", std::uint64_t{eval_every});
        kv.set("train.checkpoint_path", checkpoint_path);
        kv.set("train.adam_beta1", adam_beta1);
        kv.set("train.adam_beta2", adam_beta2);
        kv.set("train.adam_eps", adam_eps);
        kv.set("train.use_ntcl", use_ntcl);
        kv.set("train.use_matching", use_matching);
        kv.set("train.use_sync_ema", use_sync_ema);
    }
};

/// Every tunable of the pipeline, loadable from one key = value file.
struct Config {
    SynthConfig synth;
    EncoderConfig model;
    NtclConfig ntcl;
    MatchConfig match;
    CodebookConfig codebook;
    TrainConfig train;

    void validate() const {
        synth.validate();
        model.validate();
        ntcl.validate();
        match.validate();
        codebook.validate();
        train.validate();
        if (synth.t_fmri != synth.t_video)
            throw ConfigError("fMRI and video sequences must have equal length for temporal prediction");
        if (synth.t_fmri <= ntcl.offset)
            throw ConfigError("sequence length " + std::to_string(synth.t_fmri) + " must exceed the prediction offset");
        if (synth.t_video > model.max_seq_len) throw ConfigError("sequence longer than model.max_seq_len");
    }

    KeyValues to_kv() const {
        KeyValues kv;
        synth.write(kv);
        model.write(kv);
        ntcl.write(kv);
        match.write(kv);
        codebook.write(kv);
        train.write(kv);
        return kv;
    }

    std::string to_text() const { return to_kv().to_string(); }

    static Config from_kv(const KeyValues& kv) {
        const std::set<std::string> known = [] {
            std::set<std::string> s;
            const KeyValues defaults = Config{}.to_kv();
            for (const auto& [k, _] : defaults.entries()) s.insert(k);
            return s;
        }();
        if (auto unknown = kv.unknown_keys(known); !unknown.empty())
            throw ConfigError("unknown configuration key '" + *unknown.begin() + "'");
        Config c;
        c.synth.read(kv);
        c.model.read(kv);
        c.ntcl.read(kv);
        c.match.read(kv);
        c.codebook.read(kv);
        c.train.read(kv);
        c.validate();
        return c;
    }

    static Config load(const std::string& path) { return from_kv(KeyValues::load(path)); }

    /// Hex FNV-1a hash of the canonical serialization.
    std::string fingerprint() const {
        const std::uint64_t h = fnv1a64(to_text());
        static const char* hex = "0123456789abcdef";
        std::string s(16, '0');
        for (int i = 0; i < 16; ++i) s[15 - i] = hex[(h >> (4 * i)) & 0xf];
        return s;
    }
};

// --- model ------------------------------------------------------------------------------

inline ParamStore init_model(const Config& cfg, std::uint64_t seed) {
    ParamStore ps;
    Rng rng = make_rng(seed, "model.init");
    init_video_encoder(ps, cfg.synth.video_dim, cfg.model, rng);
    init_text_encoder(ps, cfg.synth.caption_dim, cfg.model, rng);
    init_multiscale(ps, "fmri.ms", cfg.synth.fmri_dim, cfg.model, rng);
    init_multiscale(ps, "video.ms", cfg.model.hidden, cfg.model, rng);
    init_context_net(ps, kFmriToVideo, cfg.model, rng);
    init_context_net(ps, kVideoToFmri, cfg.model, rng);
    return ps;
}

/// B samples stacked row-wise.
struct Batch {
    Tensor fmri;      // (B * T_f) x D_f
    Tensor video;     // (B * T_v) x D_v
    Tensor captions;  // B x D_c
    std::vector<std::uint64_t> pair_ids;

    std::size_t size() const { return pair_ids.size(); }
};

inline Batch make_batch(const std::vector<TripletSample>& samples, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ConfigError("make_batch: empty batch");
    const TripletSample& first = samples.at(indices[0]);
    Batch b;
    b.fmri = Tensor::zeros(indices.size() * first.fmri.rows(), first.fmri.cols());
    b.video = Tensor::zeros(indices.size() * first.video.rows(), first.video.cols());
    b.captions = Tensor::zeros(indices.size(), first.caption.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const TripletSample& s = samples.at(indices[i]);
        if (s.fmri.shape() != first.fmri.shape() || s.video.shape() != first.video.shape() ||
            s.caption.shape() != first.caption.shape())
            throw ShapeError("make_batch: sample " + std::to_string(s.pair_id) + " has inconsistent shapes");
        std::copy_n(s.fmri.data(), s.fmri.size(), b.fmri.data() + i * s.fmri.size());
        std::copy_n(s.video.data(), s.video.size(), b.video.data() + i * s.video.size());
        std::copy_n(s.caption.data(), s.caption.size(), b.captions.data() + i * s.caption.size());
        b.pair_ids.push_back(s.pair_id);
    }
    return b;
}

inline Batch make_batch(const std::vector<TripletSample>& samples) {
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return make_batch(samples, idx);
}

/// Shared-space views of a batch.
struct Encoded {
    Var fmri;       // B x D_h: temporal mean of the fMRI -> video predictive readout
    Var video;      // B x D_h: temporal mean of per-frame encodings
    Var text;       // B x D_h
    Var fmri_seq;   // (B * T) x D_h
    Var video_seq;  // (B * T) x D_h
    Var fmri_pred;  // (B * T) x D_h: fMRI -> video head at every position
    MultiScale fmri_scales;
    MultiScale video_scales;
};

inline Encoded encode_batch(Graph& g, ParamStore& ps, const Batch& batch, const Config& cfg) {
    const std::size_t t = cfg.synth.t_fmri;
    Encoded e;
    Var fmri = g.constant(batch.fmri);
    e.video_seq = encode_video(g, ps, g.constant(batch.video));
    e.video = mean_segments(e.video_seq, cfg.synth.t_video);
    e.text = encode_text(g, ps, g.constant(batch.captions));
    e.fmri_scales = multiscale_aggregate(g, ps, "fmri.ms", fmri, t, cfg.model.kernel_size);
    e.fmri_seq = e.fmri_scales.sequence;
    e.fmri_pred = context_predict_all(g, ps, kFmriToVideo, e.fmri_seq, t, cfg.model.heads);
    e.fmri = mean_segments(e.fmri_pred, t);
    e.video_scales = multiscale_aggregate(g, ps, "video.ms", e.video_seq, cfg.synth.t_video, cfg.model.kernel_size);
    return e;
}

inline HrfKernel matching_hrf(const Config& cfg) { return hrf_kernel(cfg.synth.tr_seconds, cfg.synth.hrf_length()); }

struct LossBreakdown {
    double total = 0.0;
    double ntcl = 0.0;
    double match = 0.0;
    double commit = 0.0;
};

struct Forward {
    Var total, ntcl, match, commit;
    std::array<Tensor, 3> features;  // pre-quantization sample embeddings, fmri / video / text
    std::array<Assignment, 3> assignments;

    LossBreakdown breakdown() const {
        return {total.value().item(), ntcl.value().item(), match.value().item(), commit.value().item()};
    }
};

/// Effective loss weights after the ablation switches.
inline std::array<double, 3> effective_weights(const TrainConfig& t) {
    return {t.use_ntcl ? t.alpha_ntcl : 0.0, t.use_matching ? t.alpha_match : 0.0, t.alpha_commit};
}

inline Forward forward(Graph& g, ParamStore& ps, const Codebook& book, const Batch& batch, const Config& cfg,
                       const HrfKernel& hrf) {
    if (batch.size() < 2) throw ConfigError("forward: batch size must be at least 2");
    const std::size_t t = cfg.synth.t_fmri;
    Encoded e = encode_batch(g, ps, batch, cfg);
    Forward f;

    f.ntcl = ntcl_bidirectional(g, ps, e.fmri_seq, e.video_seq, t, cfg.model.heads, cfg.ntcl, e.fmri_pred);

    // temporal consistency on straight-through quantized frame sequences
    Assignment qf = quantize(e.fmri_seq.value(), book);
    Assignment qv = quantize(e.video_seq.value(), book);
    Var temporal = temporal_loss({straight_through(e.fmri_seq, qf), straight_through(e.video_seq, qv)}, t, hrf,
                                 cfg.match.temporal_mode);

    const std::array<Var, 3> phi{e.fmri, e.video, e.text};
    std::vector<CommitView> views;
    for (std::size_t m = 0; m < 3; ++m) {
        f.features[m] = phi[m].value();
        f.assignments[m] = quantize(f.features[m], book);
        views.push_back({phi[m], f.assignments[m].quantized});
    }

    Var structural;
    if (cfg.match.structure_level == StructureLevel::scales) {
        structural = structural_loss(e.fmri_scales.per_scale, e.video_scales.per_scale);
        if (cfg.match.include_text) {
            const double l = static_cast<double>(e.fmri_scales.per_scale.size());
            structural = scale(add(scale(structural, l), structural_loss({e.fmri}, {e.text})), 1.0 / (l + 1.0));
        }
    } else {
        std::array<Var, 3> z;
        for (std::size_t m = 0; m < 3; ++m) z[m] = straight_through(phi[m], f.assignments[m]);
        structural = structural_loss({z[0]}, {z[1]});
        if (cfg.match.include_text) structural = scale(add(structural, structural_loss({z[0]}, {z[2]})), 0.5);
    }
    f.match = match_loss(temporal, structural, cfg.match);
    f.commit = commitment_loss(views, book.cfg.commitment);

    const auto w = effective_weights(cfg.train);
    f.total = scale(f.commit, w[2]);
    if (w[0] != 0.0) f.total = add(scale(f.ntcl, w[0]), f.total);
    if (w[1] != 0.0) f.total = add(f.total, scale(f.match, w[1]));
    return f;
}

// --- state --------------------------------------------------------------------------------

struct TrainState {
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    ParamStore params;
    std::map<std::string, Tensor> adam_m;
    std::map<std::string, Tensor> adam_v;
    Codebook codebook;

    friend bool operator==(const TrainState& a, const TrainState& b) {
        return a.step == b.step && a.seed == b.seed && a.params == b.params && a.adam_m == b.adam_m &&
               a.adam_v == b.adam_v && a.codebook == b.codebook;
    }
};

inline TrainState init_train_state(const Config& cfg) {
    cfg.validate();
    TrainState s;
    s.seed = cfg.train.seed;
    s.params = init_model(cfg, cfg.train.seed);
    for (const auto& [name, v] : s.params.all_values()) {
        s.adam_m.emplace(name, Tensor(v.shape()));
        s.adam_v.emplace(name, Tensor(v.shape()));
    }
    s.codebook = make_codebook(cfg.model.hidden, cfg.codebook, cfg.train.seed);
    return s;
}

/// lr_min + (lr_max - lr_min) (1 + cos(pi * step / total)) / 2, held at lr_min past the end.
inline double learning_rate(const TrainConfig& t, std::uint64_t step) {
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(t.total_steps));
    return t.lr_min + 0.5 * (t.lr_max - t.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

/// Training-set indices for `step`: consecutive slices of per-epoch shuffles of [0, n).
inline std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t step) {
    if (n == 0) throw ConfigError("batch_indices: empty training set");
    std::vector<std::size_t> out;
    out.reserve(batch_size);
    std::uint64_t cached_epoch = ~std::uint64_t{0};
    std::vector<std::size_t> perm;
    for (std::uint64_t p = step * batch_size; p < (step + 1) * batch_size; ++p) {
        const std::uint64_t epoch = p / n;
        if (epoch != cached_epoch) {
            perm.resize(n);
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
            Rng rng = make_rng(seed, "data.order", epoch);
            for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
            cached_epoch = epoch;
        }
        out.push_back(perm[p % n]);
    }
    return out;
}

inline LossBreakdown total_loss(TrainState& state, const Batch& batch, const Config& cfg) {
    Graph g;
    return forward(g, state.params, state.codebook, batch, cfg, matching_hrf(cfg)).breakdown();
}

struct StepMetrics {
    std::uint64_t step = 0;
    double lr = 0.0;
    LossBreakdown loss;
    double beta_dyn = 1.0;
    CodebookHealth health;
    std::size_t reseeded = 0;
};

inline void adam_update(TrainState& s, const TrainConfig& t, double lr) {
    const double t1 = static_cast<double>(s.step + 1);
    const double c1 = 1.0 - std::pow(t.adam_beta1, t1);
    const double c2 = 1.0 - std::pow(t.adam_beta2, t1);
    for (const auto& name : s.params.names()) {
        Tensor& w = s.params.value(name);
        const Tensor& g = s.params.grad(name);
        Tensor& m = s.adam_m.at(name);
        Tensor& v = s.adam_v.at(name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = t.adam_beta1 * m[i] + (1.0 - t.adam_beta1) * g[i];
            v[i] = t.adam_beta2 * v[i] + (1.0 - t.adam_beta2) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + t.adam_eps);
        }
    }
}

/// Codebook update from one step's sample embeddings and assignments.
inline double update_codebook(Codebook& book, const std::array<Tensor, 3>& features,
                              const std::array<Assignment, 3>& assignments, bool synchronized) {
    std::array<ModalityBatch, 3> views;
    for (std::size_t m = 0; m < 3; ++m) views[m] = {&assignments[m], &features[m]};
    if (!synchronized) {
        // sequential unimodal baseline, fixed order fMRI -> video -> text
        const double one = 1.0;
        std::vector<std::pair<Modality, BatchStats>> seq;
        for (Modality m : kModalities)
            seq.emplace_back(m, modality_stats(m, views, std::span<const double>(&one, 1), 1.0));
        ema_update_sequential(book, seq);
        return 1.0;
    }
    const Tensor* vt[2] = {&features[1], &features[2]};
    const double beta = beta_dyn(mean_feature_variance(features[0]), mean_feature_variance(vt), book.cfg.variance_eps);
    ema_update(book, sufficient_stats(views, beta, book.cfg.self_weight));
    return beta;
}

inline StepMetrics train_step(TrainState& state, const Batch& batch, const Config& cfg) {
    StepMetrics out;
    out.step = state.step;
    out.lr = learning_rate(cfg.train, state.step);

    Graph g;
    Forward f = forward(g, state.params, state.codebook, batch, cfg, matching_hrf(cfg));
    out.loss = f.breakdown();
    const std::pair<const char*, double> parts[] = {
        {"ntcl", out.loss.ntcl}, {"match", out.loss.match}, {"commit", out.loss.commit}, {"total", out.loss.total}};
    for (const auto& [name, v] : parts)
        if (!std::isfinite(v))
            throw NumericError("non-finite " + std::string(name) + " loss at step " + std::to_string(state.step));

    state.params.zero_grads();
    g.backward(f.total);
    adam_update(state, cfg.train, out.lr);

    out.beta_dyn = update_codebook(state.codebook, f.features, f.assignments, cfg.train.use_sync_ema);
    Tensor candidates = Tensor::zeros(3 * batch.size(), state.codebook.dim());
    std::vector<std::size_t> codes;
    for (std::size_t m = 0; m < 3; ++m) {
        std::copy_n(f.features[m].data(), f.features[m].size(), candidates.data() + m * f.features[m].size());
        codes.insert(codes.end(), f.assignments[m].indices.begin(), f.assignments[m].indices.end());
    }
    Rng rng = make_rng(state.seed, "codebook.reseed", state.step);
    out.reseeded = reseed_dead_codes(state.codebook, candidates, rng);
    out.health = codebook_stats(codes, state.codebook.size());
    ++state.step;
    return out;
}

/// Writes one CSV line per step: step, lr, total, ntcl, match, commit, perplexity, usage.
class MetricsLog {
public:
    explicit MetricsLog(const std::string& path) : out_(path) {
        if (!out_) throw IoError("cannot open metrics log '" + path + "'");
        out_ << "step,lr,total,ntcl,match,commit,perplexity,usage\n";
        out_.precision(10);
    }
    void write(const StepMetrics& m) {
        out_ << m.step << ',' << m.lr << ',' << m.loss.total << ',' << m.loss.ntcl << ',' << m.loss.match << ','
             << m.loss.commit << ',' << m.health.perplexity << ',' << m.health.usage << '\n';
    }

private:
    std::ofstream out_;
};

/// Runs `steps` training steps drawing batches from `train`.
inline void train(TrainState& state, const std::vector<TripletSample>& train_set, const Config& cfg,
                  std::size_t steps, const std::function<void(const StepMetrics&)>& on_step = {}) {
    for (std::size_t i = 0; i < steps; ++i) {
        const auto idx = batch_indices(train_set.size(), cfg.train.batch_size, cfg.train.seed, state.step);
        StepMetrics m = train_step(state, make_batch(train_set, idx), cfg);
        if (on_step) on_step(m);
    }
}

// --- checkpoints ----------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "NALCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

enum class RecordKind : std::uint8_t { tensor = 0, text = 1, integer = 2 };

inline void put_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
    w.u8(static_cast<std::uint8_t>(RecordKind::tensor));
    w.str(name);
    w.shape(t.shape());
    for (double v : t.values()) w.f64(v);
}

inline void put_integer(ByteWriter& w, const std::string& name, std::uint64_t v) {
    w.u8(static_cast<std::uint8_t>(RecordKind::integer));
    w.str(name);
    w.u64(v);
}

} // namespace detail

inline void save_checkpoint(const TrainState& s, const Config& cfg, const std::string& path) {
    ByteWriter w(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    const std::size_t n_params = s.params.size();
    w.u64(4 + 4 + 3 * n_params);
    w.u8(static_cast<std::uint8_t>(detail::RecordKind::text));
    w.str("config");
    w.str(cfg.to_text());
    detail::put_integer(w, "step", s.step);
    detail::put_integer(w, "seed", s.seed);
    detail::put_integer(w, "codebook.updates", s.codebook.updates);
    for (const auto& [name, v] : s.params.all_values()) detail::put_tensor(w, "param/" + name, v);
    for (const auto& [name, v] : s.adam_m) detail::put_tensor(w, "adam.m/" + name, v);
    for (const auto& [name, v] : s.adam_v) detail::put_tensor(w, "adam.v/" + name, v);
    detail::put_tensor(w, "codebook.entries", s.codebook.entries);
    detail::put_tensor(w, "codebook.counts", s.codebook.counts);
    detail::put_tensor(w, "codebook.sums", s.codebook.sums);
    Tensor streak({s.codebook.dead_streak.size()});
    for (std::size_t i = 0; i < streak.size(); ++i) streak[i] = s.codebook.dead_streak[i];
    detail::put_tensor(w, "codebook.dead_streak", streak);
    w.finish(path);
}

struct Checkpoint {
    TrainState state;
    Config config;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    ByteReader r(path, kCheckpointMagic);
    const std::size_t vat = r.offset();
    if (const auto v = r.u32(); v != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(v), vat);
    const std::uint64_t count = r.u64();
    std::optional<Config> cfg;
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::uint64_t> ints;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        const auto kind = static_cast<detail::RecordKind>(r.u8());
        std::string name = r.str();
        switch (kind) {
        case detail::RecordKind::text: cfg = Config::from_kv(KeyValues::parse(r.str())); break;
        case detail::RecordKind::integer: ints[name] = r.u64(); break;
        case detail::RecordKind::tensor: {
            Shape shape = r.shape();
            std::vector<double> data(shape_size(shape));
            for (auto& v : data) v = r.f64();
            tensors[name] = Tensor(std::move(shape), std::move(data));
            break;
        }
        default: throw FormatError("unknown record kind", at);
        }
    }
    r.expect_end();
    if (!cfg) throw FormatError("checkpoint has no config record", r.offset());

    auto take = [&](const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("checkpoint is missing '" + name + "'", r.offset());
        return it->second;
    };
    auto take_int = [&](const std::string& name) {
        auto it = ints.find(name);
        if (it == ints.end()) throw FormatError("checkpoint is missing '" + name + "'", r.offset());
        return it->second;
    };

    Checkpoint ck{init_train_state(*cfg), *cfg};
    TrainState& s = ck.state;
    s.step = take_int("step");
    s.seed = take_int("seed");
    for (const auto& name : s.params.names()) {
        Tensor v = take("param/" + name);
        require_same_shape(s.params.value(name), v, "model parameter", "checkpoint tensor");
        s.params.value(name) = std::move(v);
        s.adam_m.at(name) = take("adam.m/" + name);
        s.adam_v.at(name) = take("adam.v/" + name);
    }
    s.codebook.entries = take("codebook.entries");
    s.codebook.counts = take("codebook.counts");
    s.codebook.sums = take("codebook.sums");
    const Tensor streak = take("codebook.dead_streak");
    s.codebook.dead_streak.assign(streak.size(), 0);
    for (std::size_t i = 0; i < streak.size(); ++i) s.codebook.dead_streak[i] = static_cast<std::uint32_t>(streak[i]);
    s.codebook.updates = take_int("codebook.updates");
    return ck;
}

} // namespace hemalign

#endif // HEMALIGN_TRAINER_HPP
