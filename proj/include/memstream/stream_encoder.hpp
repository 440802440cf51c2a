#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "memstream/compression.hpp"
#include "memstream/kv_store.hpp"
#include "memstream/numerics.hpp"

namespace memstream {

struct LayerQKV {
    Matrix q, k, v;  // each N x (H*D)
};

/// One stream frame's projected features for every layer.
struct StreamFrame {
    std::size_t frame_index = 0;
    std::size_t grid_h = 0, grid_w = 0;
    std::vector<LayerQKV> layers;
};

struct WindowRecord {
    std::size_t frame_index = 0;
    std::size_t layer = 0;
    std::optional<double> entropy;  // absent for empty or single-token windows
    std::uint64_t full_window_tokens = 0;
    std::uint64_t compressed_window_tokens = 0;
};

/// Per-(frame, layer) encoding instrumentation. Timing stays in memory only;
/// exports carry just the deterministic fields.
struct EncodeTrace {
    std::vector<WindowRecord> windows;
    double encode_seconds = 0.0;
    std::vector<std::vector<Matrix>> outputs;  // [frame][layer], filled on request
};

struct EncodeOptions {
    bool record_outputs = false;
};

/// Strategy-compressed view of a hot window: concatenated keys/values plus
/// the uncompressed token count for compression-rate accounting.
struct WindowView {
    Matrix keys, values;
    std::uint64_t full_tokens = 0;
};

/// Applies one compression strategy to one layer's sliding window.
///
/// AKS masks are computed once per frame at insertion, against the full keys
/// of the immediately preceding frame, and reused for the frame's entire
/// residence in the window. The first frame of a stream has no predecessor
/// and falls back to dilated selection at an equivalent token budget.
class WindowCompressor {
public:
    explicit WindowCompressor(CompressionStrategy strategy) : strategy_(std::move(strategy)) {
        validate_strategy(strategy_);
    }

    void note_insertion(const FrameKV& frame, const Matrix* prev_full_keys) {
        const auto* aks = std::get_if<AdaptiveKeySelect>(&strategy_);
        if (!aks) return;
        const std::size_t keep = aks_effective_keep(*aks, frame.token_count());
        SelectionMask mask;
        if (prev_full_keys) {
            mask = aks_select(frame.keys, *prev_full_keys, keep);
        } else {
            mask = dilated_select(frame, stride_for_budget(frame.grid_h, frame.grid_w, keep));
        }
        mask.frame_index = frame.frame_index;
        mask.layer = frame.layer;
        masks_[frame.frame_index] = std::move(mask);
    }

    WindowView compress(const std::deque<FrameKV>& window) const {
        WindowView view;
        for (const auto& f : window) view.full_tokens += f.token_count();
        if (window.empty()) return view;

        if (std::holds_alternative<Full>(strategy_)) {
            append_frames(view, window);
        } else if (const auto* pool = std::get_if<Pool>(&strategy_)) {
            for (const auto& f : window) {
                auto [k, v] = pool_window_tokens(f, pool->kernel);
                view.keys = vconcat(view.keys, k);
                view.values = vconcat(view.values, v);
            }
        } else if (const auto* dil = std::get_if<Dilated>(&strategy_)) {
            for (const auto& f : window) {
                auto [k, v] = apply_mask(f, dilated_select(f, dil->stride));
                view.keys = vconcat(view.keys, k);
                view.values = vconcat(view.values, v);
            }
        } else if (const auto* tm = std::get_if<TokenMerge>(&strategy_)) {
            for (const auto& f : window) {
                const std::size_t r = std::min(tm->merges, f.token_count() - 1);
                auto [k, v] = token_merge(f, r);
                view.keys = vconcat(view.keys, k);
                view.values = vconcat(view.values, v);
            }
        } else if (std::holds_alternative<AdaptiveKeySelect>(strategy_)) {
            for (const auto& f : window) {
                auto it = masks_.find(f.frame_index);
                if (it == masks_.end())
                    throw std::logic_error("WindowCompressor: missing AKS mask for window frame");
                auto [k, v] = apply_mask(f, it->second);
                view.keys = vconcat(view.keys, k);
                view.values = vconcat(view.values, v);
            }
        } else if (const auto* uf = std::get_if<UniformFrames>(&strategy_)) {
            append_selected(view, window, uniform_frame_select(window.size(), uf->keep));
        } else if (const auto* km = std::get_if<KMeansFrames>(&strategy_)) {
            std::vector<Vector> reps;
            reps.reserve(window.size());
            for (const auto& f : window) reps.push_back(mean_pool_rows(f.keys));
            append_selected(view, window, kmeans_frame_select(reps, km->centroids));
        } else if (const auto* tc = std::get_if<TemporalChange>(&strategy_)) {
            if (window.size() < 2 || tc->keep >= window.size()) {
                append_frames(view, window);
            } else {
                std::vector<const Matrix*> keys;
                keys.reserve(window.size());
                for (const auto& f : window) keys.push_back(&f.keys);
                append_selected(view, window, temporal_change_select(keys, tc->keep));
            }
        }
        return view;
    }

    void drop_masks_before(std::size_t frame_index) {
        std::erase_if(masks_, [&](const auto& kv) { return kv.first < frame_index; });
    }

private:
    static void append_frames(WindowView& view, const std::deque<FrameKV>& window) {
        for (const auto& f : window) {
            view.keys = vconcat(view.keys, f.keys);
            view.values = vconcat(view.values, f.values);
        }
    }
    static void append_selected(WindowView& view, const std::deque<FrameKV>& window,
                                const std::vector<std::size_t>& positions) {
        for (std::size_t p : positions) {
            view.keys = vconcat(view.keys, window[p].keys);
            view.values = vconcat(view.values, window[p].values);
        }
    }

    CompressionStrategy strategy_;
    std::unordered_map<std::size_t, SelectionMask> masks_;
};

struct AttentionOutput {
    Matrix output;
    std::optional<double> window_entropy;
};

/// Per-head scaled-dot attention of the current frame's queries over
/// [compressed window ; current frame] keys/values, heads concatenated back
/// into the flattened feature axis.
///
/// The entropy of the window portion of the attention mass (per query token,
/// renormalized over window tokens, then averaged over query tokens and
/// heads) quantifies how selective the sliding window attention is.
inline AttentionOutput window_attention(const Matrix& q, const Matrix& window_keys,
                                        const Matrix& window_values, const Matrix& cur_keys,
                                        const Matrix& cur_values, std::size_t head_count) {
    if (head_count == 0 || q.cols % head_count != 0)
        throw std::invalid_argument("window_attention: bad head count");
    if (q.cols != cur_keys.cols || cur_keys.rows != cur_values.rows || cur_keys.cols != cur_values.cols)
        throw std::invalid_argument("window_attention: current-frame shape mismatch");
    if (window_keys.rows != window_values.rows)
        throw std::invalid_argument("window_attention: window shape mismatch");
    if (window_keys.rows > 0 && window_keys.cols != q.cols)
        throw std::invalid_argument("window_attention: window feature dim mismatch");

    const std::size_t head_dim = q.cols / head_count;
    const std::size_t window_tokens = window_keys.rows;

    AttentionOutput out;
    out.output = Matrix(q.rows, q.cols);
    double entropy_acc = 0.0;
    std::size_t entropy_samples = 0;

    for (std::size_t h = 0; h < head_count; ++h) {
        const Matrix qh = head_slice(q, h, head_dim);
        const Matrix wkh = window_tokens > 0 ? head_slice(window_keys, h, head_dim) : Matrix();
        const Matrix wvh = window_tokens > 0 ? head_slice(window_values, h, head_dim) : Matrix();
        const Matrix kh = vconcat(wkh, head_slice(cur_keys, h, head_dim));
        const Matrix vh = vconcat(wvh, head_slice(cur_values, h, head_dim));
        const AttentionResult res = scaled_dot_attention(qh, kh, vh);

        for (std::size_t r = 0; r < q.rows; ++r)
            for (std::size_t c = 0; c < head_dim; ++c)
                out.output.at(r, h * head_dim + c) = res.output.at(r, c);

        if (window_tokens >= 2) {
            std::vector<double> p(window_tokens);
            for (std::size_t r = 0; r < q.rows; ++r) {
                double mass = 0.0;
                for (std::size_t j = 0; j < window_tokens; ++j)
                    mass += double(res.weights.at(r, j));
                if (mass <= 0.0) continue;
                for (std::size_t j = 0; j < window_tokens; ++j)
                    p[j] = double(res.weights.at(r, j)) / mass;
                entropy_acc += normalized_entropy(p);
                ++entropy_samples;
            }
        }
    }
    if (entropy_samples > 0)
        out.window_entropy = entropy_acc / double(entropy_samples);
    return out;
}

/// The streaming encode loop: for each frame and layer, attend over the
/// strategy-compressed hot window plus the frame itself, record entropy and
/// token counts, then append the FULL keys/values to the store. Flushes the
/// store at end of stream so every frame is retrievable.
inline EncodeTrace encode_stream(std::span<const StreamFrame> frames, TieredCacheStore& store,
                                 const CompressionStrategy& strategy, EncodeOptions opts = {}) {
    validate_strategy(strategy);
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t layer_count = store.config().layer_count;
    const std::size_t feature_dim = store.config().head_count * store.config().head_dim;

    std::vector<WindowCompressor> compressors(layer_count, WindowCompressor(strategy));
    std::vector<std::optional<Matrix>> last_keys(layer_count);

    EncodeTrace trace;
    for (const StreamFrame& frame : frames) {
        if (frame.layers.size() != layer_count)
            throw std::invalid_argument("encode_stream: frame layer count mismatch");
        if (opts.record_outputs) trace.outputs.emplace_back();

        for (std::size_t layer = 0; layer < layer_count; ++layer) {
            const LayerQKV& qkv = frame.layers[layer];
            if (qkv.q.rows != qkv.k.rows || qkv.q.cols != feature_dim || qkv.k.cols != feature_dim ||
                qkv.v.cols != feature_dim || qkv.k.rows != qkv.v.rows)
                throw std::invalid_argument("encode_stream: Q/K/V shape mismatch at frame " +
                                            std::to_string(frame.frame_index));

            FrameKV kv;
            kv.frame_index = frame.frame_index;
            kv.layer = layer;
            kv.keys = qkv.k;
            kv.values = qkv.v;
            kv.grid_h = frame.grid_h;
            kv.grid_w = frame.grid_w;
            kv.head_count = store.config().head_count;
            kv.head_dim = store.config().head_dim;
            validate_frame_kv(kv);

            const WindowView view = compressors[layer].compress(store.hot_window(layer));
            AttentionOutput attn =
                window_attention(qkv.q, view.keys, view.values, qkv.k, qkv.v, store.config().head_count);

            trace.windows.push_back(WindowRecord{frame.frame_index, layer, attn.window_entropy,
                                                 view.full_tokens, view.keys.rows});
            if (opts.record_outputs)
                trace.outputs.back().push_back(std::move(attn.output));

            compressors[layer].note_insertion(kv, last_keys[layer] ? &*last_keys[layer] : nullptr);
            last_keys[layer] = kv.keys;
            const EvictionReport evicted = store.append_frame(layer, std::move(kv));
            for (std::size_t gone : evicted.evicted_frames)
                compressors[layer].drop_masks_before(gone + 1);
        }
    }
    store.flush();
    trace.encode_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

/// Deterministic trace export; timing counters are not serialized.
inline nlohmann::json trace_to_json(const EncodeTrace& trace) {
    nlohmann::json windows = nlohmann::json::array();
    for (const auto& w : trace.windows) {
        nlohmann::json rec;
        rec["frame"] = w.frame_index;
        rec["layer"] = w.layer;
        if (w.entropy)
            rec["entropy"] = *w.entropy;
        else
            rec["entropy"] = nullptr;
        rec["full_window_tokens"] = w.full_window_tokens;
        rec["compressed_window_tokens"] = w.compressed_window_tokens;
        windows.push_back(std::move(rec));
    }
    std::uint64_t full = 0, compressed = 0;
    for (const auto& w : trace.windows) {
        full += w.full_window_tokens;
        compressed += w.compressed_window_tokens;
    }
    nlohmann::json j;
    j["windows"] = std::move(windows);
    j["total_full_window_tokens"] = full;
    j["total_compressed_window_tokens"] = compressed;
    j["compression_rate"] = compressed > 0 ? double(full) / double(compressed) : 0.0;
    return j;
}

inline EncodeTrace trace_from_json(const nlohmann::json& j) {
    EncodeTrace trace;
    for (const auto& rec : j.at("windows")) {
        WindowRecord w;
        w.frame_index = rec.at("frame").get<std::size_t>();
        w.layer = rec.at("layer").get<std::size_t>();
        if (!rec.at("entropy").is_null()) w.entropy = rec.at("entropy").get<double>();
        w.full_window_tokens = rec.at("full_window_tokens").get<std::uint64_t>();
        w.compressed_window_tokens = rec.at("compressed_window_tokens").get<std::uint64_t>();
        trace.windows.push_back(std::move(w));
    }
    return trace;
}

}  // namespace memstream
