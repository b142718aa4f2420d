// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal retrieval evaluation, embedding export and the ablation runner.

#ifndef HEMALIGN_EVAL_HPP
#define HEMALIGN_EVAL_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hemalign/trainer.hpp"

namespace hemalign {

enum class EmbeddingSpace { quantized, continuous };

inline EmbeddingSpace parse_embedding_space(const std::string& s) {
    if (s == "quantized") return EmbeddingSpace::quantized;
    if (s == "continuous") return EmbeddingSpace::continuous;
    throw ConfigError("embedding space must be 'quantized' or 'continuous', got '" + s + "'");
}

/// Rows aligned across modalities: row i of each matrix belongs to pair_ids[i].
struct EmbeddingSet {
    std::array<Tensor, 3> rows;  // fmri, video, text; N x D_h
    std::array<std::vector<std::size_t>, 3> codes;
    std::vector<std::uint64_t> pair_ids;

    const Tensor& operator[](Modality m) const { return rows[index_of(m)]; }
};

inline EmbeddingSet embed_test_set(TrainState& state, const std::vector<TripletSample>& samples, const Config& cfg,
                                   EmbeddingSpace space = EmbeddingSpace::quantized) {
    if (samples.empty()) throw ConfigError("embed_test_set: empty test split");
    constexpr std::size_t kChunk = 64;
    const std::size_t n = samples.size(), d = state.codebook.dim();
    EmbeddingSet out;
    for (auto& r : out.rows) r = Tensor::zeros(n, d);
    for (std::size_t start = 0; start < n; start += kChunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(i);
        const Batch batch = make_batch(samples, idx);
        Graph g;
        const Encoded e = encode_batch(g, state.params, batch, cfg);
        const std::array<const Tensor*, 3> phi{&e.fmri.value(), &e.video.value(), &e.text.value()};
        for (std::size_t m = 0; m < 3; ++m) {
            const Assignment a = quantize(*phi[m], state.codebook);
            const Tensor& src = space == EmbeddingSpace::quantized ? a.quantized : *phi[m];
            std::copy_n(src.data(), src.size(), out.rows[m].data() + start * d);
            out.codes[m].insert(out.codes[m].end(), a.indices.begin(), a.indices.end());
        }
        out.pair_ids.insert(out.pair_ids.end(), batch.pair_ids.begin(), batch.pair_ids.end());
    }
    return out;
}

/// Percentage of queries whose aligned gallery row ranks within the top k by cosine similarity;
/// ties go to the smaller gallery index.
inline double recall_at_k(const Tensor& queries, const Tensor& gallery, std::size_t k) {
    require_same_shape(queries, gallery, "queries", "gallery");
    const std::size_t n = queries.rows(), d = queries.cols();
    if (k == 0) throw ConfigError("recall_at_k: k must be at least 1");
    if (k > n) throw ConfigError("recall_at_k: k = " + std::to_string(k) + " exceeds gallery size " + std::to_string(n));
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    auto normalized = [&](const Tensor& t) {
        RowMat m = Eigen::Map<const RowMat>(t.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) /= std::max(m.row(i).norm(), kCosineEpsilon);
        return m;
    };
    const RowMat sim = normalized(queries) * normalized(gallery).transpose();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double truth = sim(i, i);
        std::size_t rank = 0;  // gallery rows ranked strictly ahead of the true row
        for (std::size_t j = 0; j < n && rank < k; ++j)
            if (sim(i, j) > truth || (sim(i, j) == truth && j < i)) ++rank;
        if (rank < k) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

struct DirectionRecall {
    Modality query;
    Modality gallery;
    double r5 = 0.0;
    double r10 = 0.0;
};

inline std::string direction_key(Modality q, Modality g) {
    auto tag = [](Modality m) { return m == Modality::fmri ? "f" : m == Modality::video ? "v" : "t"; };
    return std::string(tag(q)) + "2" + tag(g);
}

inline constexpr double kExternalReferenceF2vR5 = 50.31;

struct RetrievalReport {
    std::vector<DirectionRecall> directions;  // F->V, F->T, V->F, V->T, T->F, T->V
    std::size_t n_queries = 0;
    CodebookHealth health;
    std::string space;
    std::string config_fingerprint;
    std::uint64_t step = 0;

    const DirectionRecall& get(Modality q, Modality g) const {
        for (const auto& d : directions)
            if (d.query == q && d.gallery == g) return d;
        throw IndexError("no direction " + direction_key(q, g));
    }

    /// max minus min R@5 over the six directions
    double r5_spread() const {
        double lo = directions.front().r5, hi = lo;
        for (const auto& d : directions) lo = std::min(lo, d.r5), hi = std::max(hi, d.r5);
        return hi - lo;
    }

    double mean_r5() const {
        double s = 0.0;
        for (const auto& d : directions) s += d.r5;
        return s / static_cast<double>(directions.size());
    }

    std::string to_text() const {
        std::ostringstream os;
        os.precision(10);
        os << "config_fingerprint = " << config_fingerprint << '\n';
        os << "step = " << step << '\n';
        os << "embedding_space = " << space << '\n';
        os << "n_queries = " << n_queries << '\n';
        for (const auto& d : directions) {
            os << "recall." << direction_key(d.query, d.gallery) << ".r5 = " << d.r5 << '\n';
            os << "recall." << direction_key(d.query, d.gallery) << ".r10 = " << d.r10 << '\n';
        }
        os << "recall.r5_spread = " << r5_spread() << '\n';
        os << "recall.mean_r5 = " << mean_r5() << '\n';
        os << "codebook.usage = " << health.usage << '\n';
        os << "codebook.perplexity = " << health.perplexity << '\n';
        os << "reference.f2v.r5.external = " << kExternalReferenceF2vR5 << '\n';
        return os.str();
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write report '" + path + "'");
        out << to_text();
        if (!out) throw IoError("failed writing report '" + path + "'");
    }
};

inline RetrievalReport report_from_embeddings(const EmbeddingSet& e, std::size_t codebook_size) {
    RetrievalReport r;
    r.n_queries = e.pair_ids.size();
    for (Modality q : kModalities)
        for (Modality g : kModalities) {
            if (q == g) continue;
            const std::size_t k10 = std::min<std::size_t>(10, r.n_queries);
            r.directions.push_back({q, g, recall_at_k(e[q], e[g], std::min<std::size_t>(5, r.n_queries)),
                                    recall_at_k(e[q], e[g], k10)});
        }
    std::vector<std::size_t> codes;
    for (const auto& c : e.codes) codes.insert(codes.end(), c.begin(), c.end());
    r.health = codebook_stats(codes, codebook_size);
    return r;
}

inline RetrievalReport full_report(TrainState& state, const std::vector<TripletSample>& test, const Config& cfg,
                                   EmbeddingSpace space = EmbeddingSpace::quantized) {
    RetrievalReport r = report_from_embeddings(embed_test_set(state, test, cfg, space), state.codebook.size());
    r.space = space == EmbeddingSpace::quantized ? "quantized" : "continuous";
    r.config_fingerprint = cfg.fingerprint();
    r.step = state.step;
    return r;
}

/// CSV: pair_id, modality, then the embedding values.
inline void export_embeddings(const EmbeddingSet& e, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write embeddings '" + path + "'");
    const std::size_t d = e.rows[0].cols();
    out << "pair_id,modality";
    for (std::size_t j = 0; j < d; ++j) out << ",e" << j;
    out << '\n';
    out.precision(9);  // enough for float32 round-trip
    for (Modality m : kModalities) {
        const Tensor& t = e[m];
        for (std::size_t i = 0; i < t.rows(); ++i) {
            out << e.pair_ids[i] << ',' << modality_name(m);
            for (std::size_t j = 0; j < d; ++j) out << ',' << static_cast<float>(t(i, j));
            out << '\n';
        }
    }
    if (!out) throw IoError("failed writing embeddings '" + path + "'");
}

// --- ablations ------------------------------------------------------------------------------

enum class Variant { full, no_ntcl, no_matching, no_sync_ema };

inline constexpr std::array<Variant, 4> kVariants{Variant::full, Variant::no_ntcl, Variant::no_matching,
                                                  Variant::no_sync_ema};

inline const char* variant_name(Variant v) {
    switch (v) {
    case Variant::full: return "full";
    case Variant::no_ntcl: return "no_ntcl";
    case Variant::no_matching: return "no_matching";
    case Variant::no_sync_ema: return "no_sync_ema";
    }
    return "?";
}

inline Config variant_config(Config cfg, Variant v, std::uint64_t seed) {
    cfg.train.seed = seed;
    cfg.train.use_ntcl = v != Variant::no_ntcl;
    cfg.train.use_matching = v != Variant::no_matching;
    cfg.train.use_sync_ema = v != Variant::no_sync_ema;
    return cfg;
}

struct VariantRun {
    Variant variant;
    std::uint64_t seed;
    RetrievalReport report;
    double seconds = 0.0;
};

/// Trains a fresh model for `cfg.train.total_steps` steps and evaluates it on `test`.
inline RetrievalReport train_and_evaluate(const Config& cfg, const std::vector<TripletSample>& train_set,
                                          const std::vector<TripletSample>& test,
                                          EmbeddingSpace space = EmbeddingSpace::quantized) {
    TrainState s = init_train_state(cfg);
    train(s, train_set, cfg, cfg.train.total_steps);
    return full_report(s, test, cfg, space);
}

inline std::string ablation_table(const std::vector<VariantRun>& runs) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed;
    os << "variant,seeds,f2v_r5,f2v_r10,mean_r5\n";
    for (Variant v : kVariants) {
        double f2v5 = 0.0, f2v10 = 0.0, mean5 = 0.0;
        std::size_t n = 0;
        for (const auto& r : runs) {
            if (r.variant != v) continue;
            const auto& d = r.report.get(Modality::fmri, Modality::video);
            f2v5 += d.r5, f2v10 += d.r10, mean5 += r.report.mean_r5();
            ++n;
        }
        if (n == 0) continue;
        os << variant_name(v) << ',' << n << ',' << f2v5 / n << ',' << f2v10 / n << ',' << mean5 / n << '\n';
    }
    return os.str();
}

} // namespace hemalign

#endif // HEMALIGN_EVAL_HPP
