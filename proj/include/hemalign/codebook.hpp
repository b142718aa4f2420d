// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared vector-quantization codebook for the fMRI, video and text views.
//
// Entries are never trained by gradient descent. They follow exponential
// moving averages of per-code assignment counts N and feature sums W, with
// e[k] = W[k] / max(N[k], 1e-8). In the synchronized update every modality's
// batch statistics are summed in a fixed modality order and folded into the
// averages with a single decay step, so the result cannot depend on which
// modality was processed first.

#ifndef HEMALIGN_CODEBOOK_HPP
#define HEMALIGN_CODEBOOK_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hemalign/autodiff.hpp"
#include "hemalign/config.hpp"
#include "hemalign/error.hpp"
#include "hemalign/rng.hpp"
#include "hemalign/tensor.hpp"

namespace hemalign {

enum class Modality : std::uint8_t { fmri = 0, video = 1, text = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::fmri, Modality::video, Modality::text};

inline const char* modality_name(Modality m) {
    switch (m) {
    case Modality::fmri: return "fmri";
    case Modality::video: return "video";
    case Modality::text: return "text";
    }
    return "?";
}

inline std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

struct CodebookConfig {
    std::size_t size = 64;          // K
    double decay = 0.99;            // gamma
    double self_weight = 0.8;       // lambda
    double variance_eps = 1e-5;     // epsilon in beta_dyn
    double commitment = 0.25;       // beta in the commitment loss
    double count_eps = 1e-8;
    bool reseed_dead = true;
    std::size_t dead_patience = 50;
    double dead_threshold = 1e-3;

    void validate() const {
        if (size < 2) throw ConfigError("codebook: need at least 2 entries");
        if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("codebook: decay must lie in [0, 1)");
        if (!(self_weight >= 0.0 && self_weight <= 1.0)) throw ConfigError("codebook: self_weight must lie in [0, 1]");
        if (!(variance_eps > 0.0)) throw ConfigError("codebook: variance_eps must be positive");
        if (commitment < 0.0) throw ConfigError("codebook: commitment must be non-negative");
    }

    void read(const KeyValues& kv) {
        kv.read("codebook.size", size);
        kv.read("codebook.decay", decay);
        kv.read("codebook.self_weight", self_weight);
        kv.read("codebook.variance_eps", variance_eps);
        kv.read("codebook.commitment", commitment);
        kv.read("codebook.reseed_dead", reseed_dead);
        kv.read("codebook.dead_patience", dead_patience);
        kv.read("codebook.dead_threshold", dead_threshold);
    }
    void write(KeyValues& kv) const {
        kv.set("codebook.size", std::uint64_t{size});
        kv.set("codebook.decay", decay);
        kv.set("codebook.self_weight", self_weight);
        kv.set("codebook.variance_eps", variance_eps);
        kv.set("codebook.commitment", commitment);
        kv.set("codebook.reseed_dead", reseed_dead);
        kv.set("codebook.dead_patience", std::uint64_t{dead_patience});
        kv.set("codebook.dead_threshold", dead_threshold);
    }
};

struct Codebook {
    Tensor entries;  // K x D
    Tensor counts;   // K    (N)
    Tensor sums;     // K x D (W)
    CodebookConfig cfg;
    std::vector<std::uint32_t> dead_streak;
    std::uint64_t updates = 0;

    std::size_t size() const { return entries.rows(); }
    std::size_t dim() const { return entries.cols(); }

    friend bool operator==(const Codebook& a, const Codebook& b) {
        return a.entries == b.entries && a.counts == b.counts && a.sums == b.sums &&
               a.dead_streak == b.dead_streak && a.updates == b.updates;
    }
};

/// Entries uniform in [-1/K, 1/K]; accumulators zero.
inline Codebook make_codebook(std::size_t dim, const CodebookConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (dim == 0) throw ConfigError("codebook: dimension must be at least 1");
    Codebook book;
    book.cfg = cfg;
    book.entries = Tensor::zeros(cfg.size, dim);
    Rng rng = make_rng(seed, "codebook.init");
    const double r = 1.0 / static_cast<double>(cfg.size);
    for (auto& v : book.entries.storage()) v = -r + 2.0 * r * uniform01(rng);
    book.counts = Tensor({cfg.size});
    book.sums = Tensor::zeros(cfg.size, dim);
    book.dead_streak.assign(cfg.size, 0);
    return book;
}

// --- assignment ------------------------------------------------------------------------------

struct Assignment {
    std::vector<std::size_t> indices;
    Tensor one_hot;    // B x K
    Tensor quantized;  // B x D, row i = entries[indices[i]]
};

inline Assignment assign_to(const Tensor& entries, std::vector<std::size_t> indices) {
    const std::size_t k = entries.rows(), d = entries.cols();
    Assignment a;
    a.one_hot = Tensor::zeros(indices.size(), k);
    a.quantized = Tensor::zeros(indices.size(), d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        a.one_hot(i, indices[i]) = 1.0;
        std::copy_n(entries.data() + indices[i] * d, d, a.quantized.data() + i * d);
    }
    a.indices = std::move(indices);
    return a;
}

/// Nearest entry by squared Euclidean distance; ties go to the smaller index.
inline Assignment quantize(const Tensor& h, const Codebook& book) {
    const std::size_t k = book.size(), d = book.dim();
    if (h.cols() != d)
        throw ShapeError("quantize: features " + shape_string(h.shape()) + " vs codebook " +
                         shape_string(book.entries.shape()));
    std::vector<std::size_t> idx(h.rows());
    for (std::size_t i = 0; i < h.rows(); ++i) {
        const double* x = h.data() + i * d;
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const double* e = book.entries.data() + j * d;
            double dist = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = x[c] - e[c];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = j;
            }
        }
        idx[i] = arg;
    }
    return assign_to(book.entries, std::move(idx));
}

/// Forward value equals the quantized rows; gradient passes to `h` unchanged and
/// never reaches the codebook.
inline Var straight_through(Var h, const Assignment& a) { return h.graph->straight_through(h, a.quantized); }

// --- variance-aware weighting ------------------------------------------------------------

/// 1 + tanh(log((var_vt + eps) / (var_f + eps))), strictly inside (0, 2).
inline double beta_dyn(double var_f, double var_vt, double eps) {
    if (!(eps > 0.0)) throw ConfigError("beta_dyn: eps must be positive");
    return 1.0 + std::tanh(std::log((var_vt + eps) / (var_f + eps)));
}

/// Mean over feature dimensions of the per-dimension (population) variance across all rows.
inline double mean_feature_variance(std::span<const Tensor* const> blocks) {
    std::size_t rows = 0, d = 0;
    for (const Tensor* t : blocks) {
        if (d == 0) d = t->cols();
        if (t->cols() != d) throw ShapeError("mean_feature_variance: inconsistent widths");
        rows += t->rows();
    }
    if (rows == 0) return 0.0;
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (const Tensor* t : blocks)
            for (std::size_t r = 0; r < t->rows(); ++r) mean += (*t)(r, c);
        mean /= static_cast<double>(rows);
        double var = 0.0;
        for (const Tensor* t : blocks)
            for (std::size_t r = 0; r < t->rows(); ++r) {
                const double x = (*t)(r, c) - mean;
                var += x * x;
            }
        total += var / static_cast<double>(rows);
    }
    return total / static_cast<double>(d);
}

inline double mean_feature_variance(const Tensor& t) {
    const Tensor* p = &t;
    return mean_feature_variance(std::span<const Tensor* const>(&p, 1));
}

// --- sufficient statistics ----------------------------------------------------------------

struct BatchStats {
    Tensor counts;  // K
    Tensor sums;    // K x D
};

/// Per-modality views of one step, rows aligned by pair across modalities.
struct ModalityBatch {
    const Assignment* assignment = nullptr;
    const Tensor* features = nullptr;  // pre-quantization encoder outputs, B x D
};

/// Statistics for one modality: N[k] = sum_i w_i E[i][k], W[k] = sum_i w_i E[i][k] * target_i
/// with target_i = lambda * own_i + (1 - lambda) / 2 * (sum of the other two views).
/// `row_weights` is either one scalar for every row or one weight per row.
inline BatchStats modality_stats(Modality own, const std::array<ModalityBatch, 3>& views, std::span<const double> row_weights,
                                 double lambda) {
    const ModalityBatch& self = views[index_of(own)];
    const std::size_t b = self.features->rows(), d = self.features->cols(), k = self.assignment->one_hot.cols();
    for (const auto& v : views) {
        if (v.features->rows() != b || v.assignment->indices.size() != b)
            throw ShapeError("sufficient_stats: modality batches " + shape_string(self.features->shape()) + " vs " +
                             shape_string(v.features->shape()) + " are not aligned");
        if (v.features->cols() != d) throw ShapeError("sufficient_stats: feature widths differ across modalities");
    }
    if (row_weights.size() != 1 && row_weights.size() != b)
        throw ShapeError("sufficient_stats: " + std::to_string(row_weights.size()) + " row weights for " +
                         std::to_string(b) + " rows");
    const double cross = (1.0 - lambda) / 2.0;
    BatchStats s{Tensor({k}), Tensor::zeros(k, d)};
    for (std::size_t i = 0; i < b; ++i) {
        const double w = row_weights.size() == 1 ? row_weights[0] : row_weights[i];
        const std::size_t code = self.assignment->indices[i];
        s.counts[code] += w;
        for (std::size_t c = 0; c < d; ++c) {
            double other = 0.0;
            for (Modality m : kModalities)
                if (m != own) other += (*views[index_of(m)].features)(i, c);
            s.sums(code, c) += w * (lambda * (*self.features)(i, c) + cross * other);
        }
    }
    return s;
}

/// Batch statistics for all three modalities. fMRI rows are scaled by beta_dyn; video and
/// text use unit scaling with the same self-centered mixture.
inline std::array<BatchStats, 3> sufficient_stats(const std::array<ModalityBatch, 3>& views, double beta, double lambda) {
    const double one = 1.0;
    return {modality_stats(Modality::fmri, views, std::span<const double>(&beta, 1), lambda),
            modality_stats(Modality::video, views, std::span<const double>(&one, 1), lambda),
            modality_stats(Modality::text, views, std::span<const double>(&one, 1), lambda)};
}

// --- EMA update ----------------------------------------------------------------------------

namespace detail {

inline void ema_step(Codebook& book, const Tensor& counts, const Tensor& sums) {
    const double g = book.cfg.decay;
    for (std::size_t i = 0; i < book.counts.size(); ++i) book.counts[i] = g * book.counts[i] + (1.0 - g) * counts[i];
    for (std::size_t i = 0; i < book.sums.size(); ++i) book.sums[i] = g * book.sums[i] + (1.0 - g) * sums[i];
    const std::size_t d = book.dim();
    for (std::size_t k = 0; k < book.size(); ++k) {
        if (!(book.counts[k] > 0.0)) continue;  // never touched: keep the initial entry
        const double n = std::max(book.counts[k], book.cfg.count_eps);
        for (std::size_t c = 0; c < d; ++c) book.entries(k, c) = book.sums(k, c) / n;
    }
}

inline void check_stats(const Codebook& book, const BatchStats& s) {
    if (s.counts.size() != book.size() || s.sums.rows() != book.size() || s.sums.cols() != book.dim())
        throw ShapeError("ema_update: statistics " + shape_string(s.sums.shape()) + " vs codebook " +
                         shape_string(book.entries.shape()));
}

} // namespace detail

/// Synchronized update: the statistics of all given modalities are summed in canonical
/// modality order (independent of the order passed in), then one EMA step is applied.
inline void ema_update(Codebook& book, std::vector<std::pair<Modality, BatchStats>> stats) {
    std::stable_sort(stats.begin(), stats.end(),
                     [](const auto& a, const auto& b) { return index_of(a.first) < index_of(b.first); });
    Tensor counts({book.size()});
    Tensor sums = Tensor::zeros(book.size(), book.dim());
    for (const auto& [m, s] : stats) {
        detail::check_stats(book, s);
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += s.counts[i];
        for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += s.sums[i];
    }
    detail::ema_step(book, counts, sums);
    ++book.updates;
}

inline void ema_update(Codebook& book, const std::array<BatchStats, 3>& stats) {
    ema_update(book, {{Modality::fmri, stats[0]}, {Modality::video, stats[1]}, {Modality::text, stats[2]}});
}

/// Sequential baseline: one EMA step per modality in the order given, entries refreshed
/// after each. Later modalities see (and overwrite) the effect of earlier ones.
inline void ema_update_sequential(Codebook& book, const std::vector<std::pair<Modality, BatchStats>>& stats) {
    for (const auto& [m, s] : stats) {
        detail::check_stats(book, s);
        detail::ema_step(book, s.counts, s.sums);
        ++book.updates;
    }
}

/// Dead-code bookkeeping after a step: a code whose count stays below the threshold for
/// `dead_patience` consecutive steps is reseeded to a random row of `candidates`.
/// Returns the number of reseeded codes.
inline std::size_t reseed_dead_codes(Codebook& book, const Tensor& candidates, Rng& rng) {
    std::size_t reseeded = 0;
    for (std::size_t k = 0; k < book.size(); ++k) {
        if (book.counts[k] >= book.cfg.dead_threshold) {
            book.dead_streak[k] = 0;
            continue;
        }
        if (++book.dead_streak[k] < book.cfg.dead_patience || !book.cfg.reseed_dead) continue;
        const std::size_t row = uniform_index(rng, candidates.rows());
        book.counts[k] = 1.0;
        for (std::size_t c = 0; c < book.dim(); ++c) book.sums(k, c) = book.entries(k, c) = candidates(row, c);
        book.dead_streak[k] = 0;
        ++reseeded;
    }
    return reseeded;
}

// --- commitment loss ---------------------------------------------------------------------

/// Features and (constant) quantized rows of one modality.
struct CommitView {
    Var features;       // B x D, differentiable
    Tensor quantized;   // B x D
};

/// Averaged over ordered modality pairs (a, b), a != b, of
///   beta * mean_i |phi_a,i - sg[e_a,i]|^2 + beta / 2 * mean_i |phi_a,i - sg[e_b,i]|^2.
inline Var commitment_loss(const std::vector<CommitView>& views, double beta) {
    if (views.size() < 2) throw ConfigError("commitment_loss: need at least two modalities");
    Graph& g = *views.front().features.graph;
    std::vector<Var> codes;
    for (const auto& v : views) {
        require_same_shape(v.features.value(), detail::as_matrix(v.quantized), "commitment features", "quantized");
        codes.push_back(g.stop_gradient(g.constant(v.quantized)));
    }
    const double rows = static_cast<double>(views.front().features.rows());
    Var total{};
    bool first = true;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < views.size(); ++a) {
        Var own = sum(square(sub(views[a].features, codes[a])));
        for (std::size_t b = 0; b < views.size(); ++b) {
            if (a == b) continue;
            Var cross = sum(square(sub(views[a].features, codes[b])));
            Var term = add(scale(own, beta / rows), scale(cross, 0.5 * beta / rows));
            total = first ? term : add(total, term);
            first = false;
            ++pairs;
        }
    }
    return scale(total, 1.0 / static_cast<double>(pairs));
}

// --- health -------------------------------------------------------------------------------

struct CodebookHealth {
    double usage = 0.0;       // fraction of codes used at least once
    double perplexity = 0.0;  // exp of the assignment entropy
};

inline CodebookHealth codebook_stats(std::span<const std::size_t> indices, std::size_t codebook_size) {
    if (indices.empty()) throw ConfigError("codebook_stats: no assignments");
    std::vector<std::size_t> hist(codebook_size, 0);
    for (auto i : indices) {
        if (i >= codebook_size) throw IndexError("codebook_stats: index " + std::to_string(i) + " out of range");
        ++hist[i];
    }
    const double n = static_cast<double>(indices.size());
    double entropy = 0.0;
    std::size_t used = 0;
    for (auto c : hist) {
        if (c == 0) continue;
        ++used;
        const double p = static_cast<double>(c) / n;
        entropy -= p * std::log(p);
    }
    return {static_cast<double>(used) / static_cast<double>(codebook_size), std::exp(entropy)};
}

} // namespace hemalign

#endif // HEMALIGN_CODEBOOK_HPP
