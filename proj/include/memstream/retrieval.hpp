#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memstream/kv_store.hpp"
#include "memstream/numerics.hpp"
#include "memstream/stream_encoder.hpp"

namespace memstream {

/// One expert's view of the stream: raw scores per frame plus the induced
/// 1-based ranks (descending score, ties to the smaller frame index).
struct Ranking {
    std::string expert;
    std::vector<double> scores;
    std::vector<std::size_t> rank_of;  // frame index -> 1-based rank

    static Ranking from_scores(std::string expert, std::vector<double> scores) {
        Ranking r;
        r.expert = std::move(expert);
        r.rank_of.resize(scores.size());
        if (!scores.empty()) {
            const auto order = top_k_desc(scores, scores.size());
            for (std::size_t pos = 0; pos < order.size(); ++pos)
                r.rank_of[order[pos]] = pos + 1;
        }
        r.scores = std::move(scores);
        return r;
    }
};

/// Standalone-encoder embeddings: one per frame feature, one per question.
struct ExternalEmbeddings {
    std::vector<Vector> frames;
    std::map<std::string, Vector> questions;
};

/// Mean over the question's token rows at one layer.
inline Vector question_repr(const Matrix& question_tokens) {
    if (question_tokens.rows == 0)
        throw std::invalid_argument("question_repr: empty question");
    return mean_pool_rows(question_tokens);
}

/// Cosine of the question representation against every stored representative
/// vector at one layer. Requires a flushed store so all T frames are indexed.
inline std::vector<double> internal_scores(const TieredCacheStore& store, std::size_t layer,
                                           std::span<const float> qbar) {
    if (!store.flushed())
        throw std::invalid_argument("internal_scores: store must be flushed");
    const auto& reps = store.rep_vectors(layer);
    if (reps.empty())
        throw std::invalid_argument("internal_scores: no representative vectors");
    std::vector<double> scores;
    scores.reserve(reps.size());
    for (const auto& rep : reps)
        scores.push_back(cosine_sim(qbar, rep.vec));
    return scores;
}

inline std::vector<double> external_scores(const ExternalEmbeddings& emb,
                                           const std::string& question_id) {
    auto it = emb.questions.find(question_id);
    if (it == emb.questions.end())
        throw std::out_of_range("external_scores: unknown question id " + question_id);
    std::vector<double> scores;
    scores.reserve(emb.frames.size());
    for (const auto& frame : emb.frames)
        scores.push_back(cosine_sim(it->second, frame));
    return scores;
}

/// Reciprocal rank fusion: score(t) = sum_r w_r / (rrf_k + rank_r(t)).
/// Weights default to 1 per expert.
inline std::vector<double> rrf_fuse(std::span<const Ranking> rankings, double rrf_k,
                                    std::span<const double> weights = {}) {
    if (rankings.empty())
        throw std::invalid_argument("rrf_fuse: need at least one ranking");
    if (rrf_k < 0.0)
        throw std::invalid_argument("rrf_fuse: rrf_k must be >= 0");
    if (!weights.empty() && weights.size() != rankings.size())
        throw std::invalid_argument("rrf_fuse: weight count mismatch");
    const std::size_t total = rankings.front().rank_of.size();
    std::vector<double> fused(total, 0.0);
    for (std::size_t r = 0; r < rankings.size(); ++r) {
        if (rankings[r].rank_of.size() != total)
            throw std::invalid_argument("rrf_fuse: rankings cover different frame counts");
        const double w = weights.empty() ? 1.0 : weights[r];
        for (std::size_t t = 0; t < total; ++t)
            fused[t] += w / (rrf_k + double(rankings[r].rank_of[t]));
    }
    return fused;
}

/// Early-fusion baseline: l2-normalize each modality's question and frame
/// vectors, concatenate, and score by cosine of the concatenations.
inline std::vector<double> l2_concat_fuse(std::span<const float> q_internal,
                                          std::span<const Vector> frame_reps,
                                          std::span<const float> q_external,
                                          std::span<const Vector> frame_embeddings) {
    if (frame_reps.size() != frame_embeddings.size())
        throw std::invalid_argument("l2_concat_fuse: modality frame counts differ");
    auto normalized = [](std::span<const float> v) {
        double norm = 0.0;
        for (float x : v) norm += double(x) * double(x);
        norm = std::sqrt(norm);
        if (norm == 0.0)
            throw std::invalid_argument("l2_concat_fuse: zero-norm input");
        std::vector<float> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = float(double(v[i]) / norm);
        return out;
    };
    std::vector<float> q = normalized(q_internal);
    const std::vector<float> qe = normalized(q_external);
    q.insert(q.end(), qe.begin(), qe.end());

    std::vector<double> scores;
    scores.reserve(frame_reps.size());
    for (std::size_t t = 0; t < frame_reps.size(); ++t) {
        std::vector<float> f = normalized(frame_reps[t]);
        const std::vector<float> fe = normalized(frame_embeddings[t]);
        f.insert(f.end(), fe.begin(), fe.end());
        scores.push_back(cosine_sim(q, f));
    }
    return scores;
}

enum class RetrievalMode { Internal, External, MoE };
enum class FusionMethod { Rrf, L2Concat };

struct RetrievalConfig {
    RetrievalMode mode = RetrievalMode::Internal;
    FusionMethod fusion = FusionMethod::Rrf;
    std::size_t budget = 64;  // frame features per layer
    double rrf_k = 60.0;
    std::vector<double> expert_weights;  // optional, RRF only
};

/// Per-layer retrieval outcome: kept frame indices (ascending, unique) and
/// the score vector they were selected from.
struct RetrievalResult {
    std::vector<std::vector<std::size_t>> per_layer;
    std::vector<std::vector<double>> scores_per_layer;
};

struct QuestionFeatures {
    std::string id;
    std::vector<LayerQKV> layers;  // per-layer question tokens
};

namespace detail {

inline std::vector<std::size_t> budget_select(std::span<const double> scores, std::size_t budget) {
    auto kept = top_k_desc(scores, budget);
    std::sort(kept.begin(), kept.end());
    return kept;
}

}  // namespace detail

/// Top-k frame retrieval. Internal ranks per layer against the rep-vector
/// index; External applies one shared encoder ranking to all layers; MoE
/// fuses the two experts per layer (RRF by default).
inline RetrievalResult retrieve(const TieredCacheStore& store, const QuestionFeatures& question,
                                const ExternalEmbeddings* emb, const RetrievalConfig& cfg) {
    if (cfg.budget == 0)
        throw std::invalid_argument("retrieve: budget must be >= 1");
    if (!store.flushed())
        throw std::invalid_argument("retrieve: store must be flushed");
    const std::size_t layer_count = store.config().layer_count;
    // score positions, frame indices and external embedding rows are the
    // same axis; that only holds for 0-based consecutive streams
    for (std::size_t layer = 0; layer < layer_count; ++layer) {
        const auto& reps = store.rep_vectors(layer);
        for (std::size_t t = 0; t < reps.size(); ++t)
            if (reps[t].frame_index != t)
                throw std::invalid_argument(
                    "retrieve: store frames must be 0-based and consecutive");
    }
    const bool needs_external = cfg.mode != RetrievalMode::Internal;
    const bool needs_internal = cfg.mode != RetrievalMode::External;
    if (needs_external && emb == nullptr)
        throw std::invalid_argument("retrieve: mode requires external embeddings");
    if (needs_internal && question.layers.size() != layer_count)
        throw std::invalid_argument("retrieve: question layer count mismatch");

    RetrievalResult result;
    result.per_layer.resize(layer_count);
    result.scores_per_layer.resize(layer_count);

    std::vector<double> ext;
    if (needs_external) {
        ext = external_scores(*emb, question.id);
        if (ext.size() != store.rep_vectors(0).size())
            throw std::invalid_argument("retrieve: external embedding count != stored frames");
    }

    if (cfg.mode == RetrievalMode::External) {
        const auto kept = detail::budget_select(ext, cfg.budget);
        for (std::size_t layer = 0; layer < layer_count; ++layer) {
            result.per_layer[layer] = kept;
            result.scores_per_layer[layer] = ext;
        }
        return result;
    }

    for (std::size_t layer = 0; layer < layer_count; ++layer) {
        const Vector qbar = question_repr(question.layers[layer].q);
        std::vector<double> internal = internal_scores(store, layer, qbar);

        if (cfg.mode == RetrievalMode::Internal) {
            result.per_layer[layer] = detail::budget_select(internal, cfg.budget);
            result.scores_per_layer[layer] = std::move(internal);
            continue;
        }

        // MoE: that layer's internal expert + the single external expert.
        std::vector<double> fused;
        if (cfg.fusion == FusionMethod::Rrf) {
            const Ranking experts[2] = {
                Ranking::from_scores("internal", std::move(internal)),
                Ranking::from_scores("external", ext),
            };
            fused = rrf_fuse(experts, cfg.rrf_k, cfg.expert_weights);
        } else {
            std::vector<Vector> reps;
            reps.reserve(store.rep_vectors(layer).size());
            for (const auto& rep : store.rep_vectors(layer)) reps.push_back(rep.vec);
            fused = l2_concat_fuse(qbar, reps, emb->questions.at(question.id), emb->frames);
        }
        result.per_layer[layer] = detail::budget_select(fused, cfg.budget);
        result.scores_per_layer[layer] = std::move(fused);
    }
    return result;
}

/// Retrieval-augmented answering step: per layer, attend the question's
/// queries over [retrieved frames' FULL KV ; question's own KV], per head.
inline std::vector<Matrix> answer_attention(const QuestionFeatures& question,
                                            const RetrievalResult& retrieved,
                                            const TieredCacheStore& store) {
    const std::size_t layer_count = store.config().layer_count;
    if (question.layers.size() != layer_count)
        throw std::invalid_argument("answer_attention: question layer count mismatch");
    if (retrieved.per_layer.size() != layer_count)
        throw std::invalid_argument("answer_attention: retrieval layer count mismatch");

    std::vector<Matrix> outputs;
    outputs.reserve(layer_count);
    for (std::size_t layer = 0; layer < layer_count; ++layer) {
        Matrix keys, values;
        for (const FrameKV& frame : store.fetch_frames(layer, retrieved.per_layer[layer])) {
            keys = vconcat(keys, frame.keys);
            values = vconcat(values, frame.values);
        }
        const LayerQKV& qkv = question.layers[layer];
        AttentionOutput out =
            window_attention(qkv.q, keys, values, qkv.k, qkv.v, store.config().head_count);
        outputs.push_back(std::move(out.output));
    }
    return outputs;
}

}  // namespace memstream
