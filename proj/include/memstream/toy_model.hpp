#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memstream/numerics.hpp"
#include "memstream/stream_encoder.hpp"

namespace memstream {

// Seeded stand-in for the MLLM and external encoders. Every weight is drawn
// from a counter-based generator keyed by (seed, layer, role, element), so
// outputs are bit-stable across runs and platforms without storing any
// weight tensors.

struct ToyModelConfig {
    std::size_t layers = 28;
    std::size_t heads = 4;
    std::size_t head_dim = 128;
    std::size_t tokens_per_frame = 256;
    std::vector<std::size_t> token_schedule;  // optional per-frame override
    std::size_t question_tokens = 4;
    std::size_t input_dim = 64;
    std::size_t external_dim = 32;
    double token_noise = 0.05;
    std::uint64_t seed = 0;

    std::size_t feature_dim() const { return heads * head_dim; }

    std::size_t tokens_for_frame(std::size_t frame_index) const {
        if (!token_schedule.empty())
            return token_schedule[frame_index % token_schedule.size()];
        return tokens_per_frame;
    }
};

inline void validate_toy_config(const ToyModelConfig& cfg) {
    if (cfg.layers == 0 || cfg.heads == 0 || cfg.head_dim == 0 || cfg.tokens_per_frame == 0 ||
        cfg.question_tokens == 0 || cfg.input_dim == 0 || cfg.external_dim == 0)
        throw std::invalid_argument("ToyModelConfig: all sizes must be >= 1");
    for (std::size_t n : cfg.token_schedule)
        if (n == 0)
            throw std::invalid_argument("ToyModelConfig: token schedule entries must be >= 1");
}

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

inline std::uint64_t key_chain(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

/// Uniform in [-1, 1), keyed, platform-stable.
inline float keyed_uniform(std::uint64_t key) {
    const double u = double(mix64(key) >> 11) * 0x1.0p-53;  // [0, 1)
    return float(2.0 * u - 1.0);
}

enum class Role : std::uint64_t { QueryKey = 1, Value = 2, Ext = 3, Noise = 4, Base = 5, Drift = 6, Concept = 7 };

}  // namespace detail

/// Deterministic projection of a raw input feature into N token rows of
/// Q/K/V at one layer. Token rows share one linear map per (layer, role)
/// plus small per-token noise, so mean pooling approximately recovers the
/// projected input. Queries and keys share weights, which keeps question
/// representations comparable with stored key representatives.
inline LayerQKV project_frame(std::span<const float> input, std::size_t layer, std::size_t tokens,
                              const ToyModelConfig& cfg) {
    validate_toy_config(cfg);
    if (input.size() != cfg.input_dim)
        throw std::invalid_argument("project_frame: input dimension mismatch");
    if (tokens == 0)
        throw std::invalid_argument("project_frame: tokens must be >= 1");
    const std::size_t fd = cfg.feature_dim();
    const double scale = 1.0 / std::sqrt(double(cfg.input_dim));

    auto project = [&](detail::Role role) {
        const std::uint64_t role_key =
            detail::key_chain(cfg.seed, detail::key_chain(layer, std::uint64_t(role)));
        Matrix out(tokens, fd);
        std::vector<double> projected(fd);
        for (std::size_t c = 0; c < fd; ++c) {
            double acc = 0.0;
            for (std::size_t f = 0; f < cfg.input_dim; ++f)
                acc += double(input[f]) *
                       double(detail::keyed_uniform(detail::key_chain(role_key, c * cfg.input_dim + f)));
            projected[c] = acc * scale;
        }
        const std::uint64_t noise_key =
            detail::key_chain(role_key, std::uint64_t(detail::Role::Noise));
        for (std::size_t n = 0; n < tokens; ++n)
            for (std::size_t c = 0; c < fd; ++c)
                out.at(n, c) = float(projected[c] +
                                     cfg.token_noise *
                                         double(detail::keyed_uniform(
                                             detail::key_chain(noise_key, n * fd + c))));
        return out;
    };

    LayerQKV qkv;
    qkv.q = project(detail::Role::QueryKey);
    qkv.k = qkv.q;  // shared weights; rows still differ from values below
    qkv.v = project(detail::Role::Value);
    return qkv;
}

inline LayerQKV project_question(std::span<const float> input, std::size_t layer,
                                 const ToyModelConfig& cfg) {
    return project_frame(input, layer, cfg.question_tokens, cfg);
}

/// Unit-norm external embedding of a raw input feature; plays the role of a
/// standalone vision/text encoder pair over the same feature space.
inline Vector external_encode(std::span<const float> input, const ToyModelConfig& cfg) {
    validate_toy_config(cfg);
    if (input.size() != cfg.input_dim)
        throw std::invalid_argument("external_encode: input dimension mismatch");
    const std::uint64_t key = detail::key_chain(cfg.seed, std::uint64_t(detail::Role::Ext));
    Vector out(cfg.external_dim);
    double norm = 0.0;
    for (std::size_t c = 0; c < cfg.external_dim; ++c) {
        double acc = 0.0;
        for (std::size_t f = 0; f < cfg.input_dim; ++f)
            acc += double(input[f]) *
                   double(detail::keyed_uniform(detail::key_chain(key, c * cfg.input_dim + f)));
        out[c] = float(acc);
        norm += acc * acc;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0)
        throw std::invalid_argument("external_encode: zero-norm projection");
    for (auto& x : out) x = float(double(x) / norm);
    return out;
}

struct BenchmarkQuestion {
    std::string id;
    Vector concept_input;  // raw feature fed to the projections at query time
    std::vector<std::size_t> clue_features;
};

/// Desk-scale synthetic stream with planted clue frames: a slowly drifting
/// base signal with question concept vectors injected at the clue indices.
/// Margins >= 4 with the default token noise separate cleanly: internal,
/// external and fused retrieval all recover the clue set at budget >= |clue|.
struct SyntheticBenchmark {
    ToyModelConfig model;
    std::vector<Vector> frame_inputs;
    std::vector<BenchmarkQuestion> questions;
    double margin = 0.0;
    double redundancy = 0.0;
};

inline SyntheticBenchmark gen_benchmark(std::size_t frame_count,
                                        const std::vector<std::vector<std::size_t>>& clue_sets,
                                        double margin, double redundancy, std::uint64_t seed,
                                        ToyModelConfig cfg = {}) {
    if (frame_count == 0)
        throw std::invalid_argument("gen_benchmark: frame_count must be >= 1");
    if (redundancy < 0.0 || redundancy > 1.0)
        throw std::invalid_argument("gen_benchmark: redundancy must be in [0, 1]");
    for (const auto& clues : clue_sets) {
        if (clues.empty())
            throw std::invalid_argument("gen_benchmark: empty clue set");
        for (std::size_t c : clues)
            if (c >= frame_count)
                throw std::invalid_argument("gen_benchmark: clue index out of range");
    }
    cfg.seed = seed;
    validate_toy_config(cfg);

    SyntheticBenchmark bench;
    bench.model = cfg;
    bench.margin = margin;
    bench.redundancy = redundancy;

    auto unit_vec = [&](detail::Role role, std::uint64_t idx) {
        const std::uint64_t key = detail::key_chain(seed, detail::key_chain(std::uint64_t(role), idx));
        Vector v(cfg.input_dim);
        double norm = 0.0;
        for (std::size_t f = 0; f < cfg.input_dim; ++f) {
            v[f] = detail::keyed_uniform(detail::key_chain(key, f));
            norm += double(v[f]) * double(v[f]);
        }
        norm = std::sqrt(norm);
        for (auto& x : v) x = float(double(x) / norm);
        return v;
    };

    std::vector<Vector> concepts;
    for (std::size_t q = 0; q < clue_sets.size(); ++q)
        concepts.push_back(unit_vec(detail::Role::Concept, q));

    const double drift = 1.0 - redundancy;
    Vector base = unit_vec(detail::Role::Base, 0);
    for (std::size_t t = 0; t < frame_count; ++t) {
        if (t > 0 && drift > 0.0) {
            const Vector step = unit_vec(detail::Role::Drift, t);
            double norm = 0.0;
            for (std::size_t f = 0; f < cfg.input_dim; ++f) {
                base[f] = float(double(base[f]) + drift * double(step[f]));
                norm += double(base[f]) * double(base[f]);
            }
            norm = std::sqrt(norm);
            for (auto& x : base) x = float(double(x) / norm);
        }
        Vector frame = base;
        for (std::size_t q = 0; q < clue_sets.size(); ++q) {
            bool is_clue = false;
            for (std::size_t c : clue_sets[q]) is_clue |= (c == t);
            if (is_clue)
                for (std::size_t f = 0; f < cfg.input_dim; ++f)
                    frame[f] = float(double(frame[f]) + margin * double(concepts[q][f]));
        }
        bench.frame_inputs.push_back(std::move(frame));
    }

    for (std::size_t q = 0; q < clue_sets.size(); ++q) {
        BenchmarkQuestion bq;
        bq.id = "q" + std::to_string(q);
        bq.concept_input = concepts[q];
        bq.clue_features = clue_sets[q];
        std::sort(bq.clue_features.begin(), bq.clue_features.end());
        bench.questions.push_back(std::move(bq));
    }
    return bench;
}

}  // namespace memstream
