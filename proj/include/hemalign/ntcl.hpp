// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Predictive temporal contrastive objective: InfoNCE between predicted and
// actual future features with in-batch negatives, in both modality directions.

#ifndef HEMALIGN_NTCL_HPP
#define HEMALIGN_NTCL_HPP

#include <optional>
#include <string>
#include <vector>

#include "hemalign/autodiff.hpp"
#include "hemalign/config.hpp"
#include "hemalign/encoders.hpp"
#include "hemalign/error.hpp"

namespace hemalign {

struct NtclConfig {
    double temperature = 0.07;
    std::size_t offset = 2;  // k
    bool fmri_to_video = true;
    bool video_to_fmri = true;

    void validate() const {
        if (!(temperature > 0.0)) throw ConfigError("ntcl: temperature must be positive");
        if (offset == 0) throw ConfigError("ntcl: prediction offset must be at least 1");
    }

    void read(const KeyValues& kv) {
        kv.read("ntcl.temperature", temperature);
        kv.read("ntcl.offset", offset);
        kv.read("ntcl.fmri_to_video", fmri_to_video);
        kv.read("ntcl.video_to_fmri", video_to_fmri);
    }
    void write(KeyValues& kv) const {
        kv.set("ntcl.temperature", temperature);
        kv.set("ntcl.offset", std::uint64_t{offset});
        kv.set("ntcl.fmri_to_video", fmri_to_video);
        kv.set("ntcl.video_to_fmri", video_to_fmri);
    }
};

/// InfoNCE on a B x B similarity matrix whose diagonal holds the positive pairs.
inline Var ntcl_loss_from_similarity(Var similarity, const NtclConfig& cfg) {
    if (similarity.rows() == 0) throw ConfigError("ntcl_loss: empty batch");
    if (similarity.rows() != similarity.cols())
        throw ShapeError("ntcl_loss: similarity matrix " + shape_string(similarity.value().shape()) + " is not square");
    cfg.validate();
    Var logits = scale(similarity, 1.0 / cfg.temperature);
    return mean(sub(logsumexp_rows(logits), diag(logits)));
}

/// -(1/B) sum_i log softmax_j(s(p_i, t_j) / tau)[i], s = cosine similarity.
inline Var ntcl_loss(Var predictions, Var targets, const NtclConfig& cfg) {
    if (predictions.rows() == 0) throw ConfigError("ntcl_loss: empty batch");
    if (predictions.rows() != targets.rows())
        throw ShapeError("ntcl_loss: predictions " + shape_string(predictions.value().shape()) + " vs targets " +
                         shape_string(targets.value().shape()));
    return ntcl_loss_from_similarity(cosine_matrix(predictions, targets), cfg);
}

/// Mean InfoNCE over every valid prediction position t in [0, T - k): row t of each stacked
/// prediction sequence is scored against row t + k of the target sequence.
inline Var ntcl_from_predictions(Var predictions, Var target, std::size_t seg_len, const NtclConfig& cfg) {
    if (seg_len <= cfg.offset)
        throw ConfigError("ntcl: sequence length " + std::to_string(seg_len) + " must exceed offset " +
                          std::to_string(cfg.offset));
    require_same_shape(predictions.value(), target.value(), "ntcl predictions", "ntcl target");
    if (predictions.rows() % seg_len != 0)
        throw ShapeError("ntcl: " + std::to_string(predictions.rows()) + " rows do not tile sequences of " +
                         std::to_string(seg_len));
    const std::size_t batch = predictions.rows() / seg_len;
    const std::size_t positions = seg_len - cfg.offset;
    Var total{};
    for (std::size_t t = 0; t < positions; ++t) {
        std::vector<std::size_t> at(batch), ahead(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            at[b] = b * seg_len + t;
            ahead[b] = b * seg_len + t + cfg.offset;
        }
        Var l = ntcl_loss(gather_rows(predictions, std::move(at)), gather_rows(target, std::move(ahead)), cfg);
        total = t == 0 ? l : add(total, l);
    }
    return scale(total, 1.0 / static_cast<double>(positions));
}

/// One direction: the context network `prefix` reads `source` and predicts `target` k steps ahead.
inline Var ntcl_direction(Graph& g, ParamStore& ps, const std::string& prefix, Var source, Var target,
                          std::size_t seg_len, std::size_t heads, const NtclConfig& cfg) {
    if (seg_len <= cfg.offset)
        throw ConfigError("ntcl: sequence length " + std::to_string(seg_len) + " must exceed offset " +
                          std::to_string(cfg.offset));
    require_same_shape(source.value(), target.value(), "ntcl source", "ntcl target");
    return ntcl_from_predictions(context_predict_all(g, ps, prefix, source, seg_len, heads), target, seg_len, cfg);
}

inline constexpr const char* kFmriToVideo = "ctx_fv";
inline constexpr const char* kVideoToFmri = "ctx_vf";

/// Average of the enabled directions: fMRI context -> future video, video context -> future fMRI.
/// `fv_predictions`, when given, are the already computed fMRI -> video head outputs.
inline Var ntcl_bidirectional(Graph& g, ParamStore& ps, Var fmri_seq, Var video_seq, std::size_t seg_len,
                              std::size_t heads, const NtclConfig& cfg, std::optional<Var> fv_predictions = {}) {
    if (!cfg.fmri_to_video && !cfg.video_to_fmri) throw ConfigError("ntcl: both prediction directions are disabled");
    std::vector<Var> parts;
    if (cfg.fmri_to_video)
        parts.push_back(fv_predictions ? ntcl_from_predictions(*fv_predictions, video_seq, seg_len, cfg)
                                       : ntcl_direction(g, ps, kFmriToVideo, fmri_seq, video_seq, seg_len, heads, cfg));
    if (cfg.video_to_fmri) parts.push_back(ntcl_direction(g, ps, kVideoToFmri, video_seq, fmri_seq, seg_len, heads, cfg));
    if (parts.size() == 1) return parts.front();
    return scale(add(parts[0], parts[1]), 0.5);
}

} // namespace hemalign

#endif // HEMALIGN_NTCL_HPP
