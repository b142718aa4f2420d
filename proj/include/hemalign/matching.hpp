// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pattern-matching objective: HRF-aware temporal consistency of code sequences
// plus agreement of within-modality similarity structure across scales.

#ifndef HEMALIGN_MATCHING_HPP
#define HEMALIGN_MATCHING_HPP

#include <string>
#include <vector>

#include "hemalign/autodiff.hpp"
#include "hemalign/config.hpp"
#include "hemalign/error.hpp"
#include "hemalign/hrf.hpp"

namespace hemalign {

enum class TemporalMode {
    /// Compare z_t with the causally HRF-filtered sequence evaluated at t - 1.
    filtered_history,
    /// Compare z_t with the steady-state response to z_{t-1} alone (sum of taps times z_{t-1}).
    one_step,
};

enum class StructureLevel {
    /// Per-scale pre-quantization features of the multi-scale adapters.
    scales,
    /// Single scale: straight-through quantized sample embeddings.
    codes,
};

struct MatchConfig {
    double structure_weight = 0.5;  // beta in L_temporal + beta * L_structure
    TemporalMode temporal_mode = TemporalMode::filtered_history;
    StructureLevel structure_level = StructureLevel::scales;
    /// Add the fMRI-vs-text structure term (single scale: text has no temporal scales).
    bool include_text = false;

    void validate() const {
        if (structure_weight < 0.0) throw ConfigError("match: structure_weight must be non-negative");
    }

    void read(const KeyValues& kv) {
        kv.read("match.structure_weight", structure_weight);
        std::string mode = temporal_mode == TemporalMode::one_step ? "one_step" : "filtered_history";
        kv.read("match.temporal_mode", mode);
        if (mode == "filtered_history") temporal_mode = TemporalMode::filtered_history;
        else if (mode == "one_step") temporal_mode = TemporalMode::one_step;
        else throw ConfigError("match.temporal_mode: expected filtered_history or one_step, got '" + mode + "'");
        kv.read("match.include_text", include_text);
        std::string level = structure_level == StructureLevel::codes ? "codes" : "scales";
        kv.read("match.structure_level", level);
        if (level == "scales") structure_level = StructureLevel::scales;
        else if (level == "codes") structure_level = StructureLevel::codes;
        else throw ConfigError("match.structure_level: expected scales or codes, got '" + level + "'");
    }
    void write(KeyValues& kv) const {
        kv.set("match.structure_weight", structure_weight);
        kv.set("match.temporal_mode",
               std::string(temporal_mode == TemporalMode::one_step ? "one_step" : "filtered_history"));
        kv.set("match.include_text", include_text);
        kv.set("match.structure_level", std::string(structure_level == StructureLevel::codes ? "codes" : "scales"));
    }
};

/// HRF(z)_t = sum_j taps[j] * z_{t-j} over each stacked length-`seg_len` sequence, zero history.
inline Var hrf_operator(Var z, std::size_t seg_len, const HrfKernel& hrf) {
    const std::size_t taps = std::min(hrf.length, seg_len);
    Var out{};
    bool first = true;
    for (std::size_t j = 0; j < taps; ++j) {
        const double w = hrf.tap(j);
        if (w == 0.0) continue;
        Var term = scale(j == 0 ? z : time_shift(z, seg_len, j), w);
        out = first ? term : add(out, term);
        first = false;
    }
    if (first) return scale(z, 0.0);
    return out;
}

/// Mean over sequences, over t = 1..T-1 and over the given modalities of
/// |z_t - HRF(z)_{t-1}|^2 (or the one-step reading).
inline Var temporal_loss(const std::vector<Var>& code_seqs, std::size_t seg_len, const HrfKernel& hrf,
                         TemporalMode mode = TemporalMode::filtered_history) {
    if (seg_len < 2) throw ConfigError("temporal_loss: sequences need at least 2 timesteps");
    if (code_seqs.empty()) throw ConfigError("temporal_loss: no modalities");
    Var total{};
    for (std::size_t m = 0; m < code_seqs.size(); ++m) {
        Var z = code_seqs[m];
        if (z.rows() % seg_len != 0)
            throw ShapeError("temporal_loss: " + std::to_string(z.rows()) + " rows do not tile sequences of " +
                             std::to_string(seg_len));
        Var response;
        if (mode == TemporalMode::filtered_history) {
            response = hrf_operator(z, seg_len, hrf);
        } else {
            double total_taps = 0.0;
            for (std::size_t j = 0; j < hrf.length; ++j) total_taps += hrf.tap(j);
            response = scale(z, total_taps);
        }
        // row t of the shifted response holds the response at t - 1; row 0 of each sequence is masked
        Tensor mask(z.value().shape(), 1.0);
        const std::size_t d = mask.cols();
        for (std::size_t r = 0; r < mask.rows(); r += seg_len)
            for (std::size_t c = 0; c < d; ++c) mask(r, c) = 0.0;
        Var diff = mul_const(sub(z, time_shift(response, seg_len, 1)), mask);
        const double terms = static_cast<double>(z.rows() / seg_len * (seg_len - 1));
        Var l = scale(sum(square(diff)), 1.0 / terms);
        total = m == 0 ? l : add(total, l);
    }
    return scale(total, 1.0 / static_cast<double>(code_seqs.size()));
}

/// Mean over scales of the mean squared off-diagonal difference between the B x B cosine
/// similarity matrices of the two modalities' per-scale features.
inline Var structural_loss(const std::vector<Var>& fmri_scales, const std::vector<Var>& video_scales) {
    if (fmri_scales.empty() || fmri_scales.size() != video_scales.size())
        throw ConfigError("structural_loss: need the same non-zero number of scales on both sides (got " +
                          std::to_string(fmri_scales.size()) + " and " + std::to_string(video_scales.size()) + ")");
    const std::size_t b = fmri_scales.front().rows();
    if (b < 2) throw ConfigError("structural_loss: batch size must be at least 2");
    Tensor off_diag = Tensor::filled(b, b, 1.0);
    for (std::size_t i = 0; i < b; ++i) off_diag(i, i) = 0.0;
    Var total{};
    for (std::size_t l = 0; l < fmri_scales.size(); ++l) {
        Var f = fmri_scales[l], v = video_scales[l];
        if (f.rows() != b || v.rows() != b)
            throw ShapeError("structural_loss: scale " + std::to_string(l) + " has " + std::to_string(f.rows()) +
                             " and " + std::to_string(v.rows()) + " rows, expected " + std::to_string(b));
        Var diff = mul_const(sub(cosine_matrix(f, f), cosine_matrix(v, v)), off_diag);
        Var term = scale(sum(square(diff)), 1.0 / static_cast<double>(b * (b - 1)));
        total = l == 0 ? term : add(total, term);
    }
    return scale(total, 1.0 / static_cast<double>(fmri_scales.size()));
}

inline Var match_loss(Var temporal, Var structural, const MatchConfig& cfg) {
    cfg.validate();
    return add(temporal, scale(structural, cfg.structure_weight));
}

} // namespace hemalign

#endif // HEMALIGN_MATCHING_HPP
