#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "memstream/kv_store.hpp"
#include "memstream/numerics.hpp"

namespace memstream {

// Window compression strategies. Patch-wise strategies (Pool, Dilated,
// TokenMerge, AdaptiveKeySelect) reduce tokens within each window frame;
// frame-wise strategies (UniformFrames, KMeansFrames, TemporalChange) keep a
// subset of window frames with full tokens. All of them shape only the
// attended view -- stored KV is always full.

struct Full {};
struct Pool {
    std::size_t kernel = 2;
};
struct Dilated {
    std::size_t stride = 2;
};
struct UniformFrames {
    std::size_t keep = 8;
};
struct TokenMerge {
    std::size_t merges = 0;
};
struct KMeansFrames {
    std::size_t centroids = 8;
};
struct TemporalChange {
    std::size_t keep = 8;
};
struct AdaptiveKeySelect {
    std::size_t keep = 0;             // fixed per-frame count; 0 = derive from ratio
    double keep_ratio = 1.0 / 16.0;   // used when keep == 0: keep = ceil(N * ratio)
};

using CompressionStrategy = std::variant<Full, Pool, Dilated, UniformFrames, TokenMerge,
                                         KMeansFrames, TemporalChange, AdaptiveKeySelect>;

inline std::string strategy_name(const CompressionStrategy& s) {
    struct Namer {
        std::string operator()(const Full&) const { return "full"; }
        std::string operator()(const Pool&) const { return "pool"; }
        std::string operator()(const Dilated&) const { return "dilated"; }
        std::string operator()(const UniformFrames&) const { return "uniform_frames"; }
        std::string operator()(const TokenMerge&) const { return "token_merge"; }
        std::string operator()(const KMeansFrames&) const { return "kmeans_frames"; }
        std::string operator()(const TemporalChange&) const { return "temporal_change"; }
        std::string operator()(const AdaptiveKeySelect&) const { return "aks"; }
    };
    return std::visit(Namer{}, s);
}

inline void validate_strategy(const CompressionStrategy& s) {
    bool ok = std::visit(
        [](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Pool>) return v.kernel >= 1;
            else if constexpr (std::is_same_v<T, Dilated>) return v.stride >= 1;
            else if constexpr (std::is_same_v<T, UniformFrames>) return v.keep >= 1;
            else if constexpr (std::is_same_v<T, KMeansFrames>) return v.centroids >= 1;
            else if constexpr (std::is_same_v<T, TemporalChange>) return v.keep >= 1;
            else if constexpr (std::is_same_v<T, AdaptiveKeySelect>)
                return v.keep >= 1 || v.keep_ratio > 0.0;
            else return true;
        },
        s);
    if (!ok)
        throw std::invalid_argument("CompressionStrategy: parameters must be >= 1");
}

/// Kept token indices within one frame, ascending and duplicate-free.
/// Masks sparsify the attended window view only, never storage.
struct SelectionMask {
    std::size_t frame_index = 0;
    std::size_t layer = 0;
    std::vector<std::size_t> kept;
};

namespace detail {

// Patch-wise cosine between corresponding token rows of two frames. Tokens
// past the shared prefix (dynamic resolution) have no counterpart and score
// as maximally novel.
inline std::vector<double> paired_token_similarity(const Matrix& cur, const Matrix& prev) {
    if (cur.cols != prev.cols)
        throw std::invalid_argument("paired_token_similarity: feature dim mismatch");
    const std::size_t shared = std::min(cur.rows, prev.rows);
    std::vector<double> sim(cur.rows, -std::numeric_limits<double>::infinity());
    for (std::size_t n = 0; n < shared; ++n)
        sim[n] = cosine_sim(cur.row(n), prev.row(n));
    return sim;
}

}  // namespace detail

/// Top-k least similar tokens of the current frame vs the corresponding
/// tokens of the previous frame. Ties break by smaller index; output ascending.
inline SelectionMask aks_select(const Matrix& keys_cur, const Matrix& keys_prev, std::size_t keep) {
    if (keep == 0)
        throw std::invalid_argument("aks_select: keep must be >= 1");
    const auto sim = detail::paired_token_similarity(keys_cur, keys_prev);

    std::vector<std::size_t> idx(sim.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (sim[a] != sim[b]) return sim[a] < sim[b];
        return a < b;
    });
    idx.resize(std::min(keep, idx.size()));
    std::sort(idx.begin(), idx.end());
    return SelectionMask{0, 0, std::move(idx)};
}

/// Non-overlapping k x k average pooling over the spatial grid, applied
/// identically to keys and values. Ragged edge cells average what is there.
inline std::pair<Matrix, Matrix> pool_window_tokens(const FrameKV& frame, std::size_t kernel) {
    if (kernel == 0)
        throw std::invalid_argument("pool_window_tokens: kernel must be >= 1");
    const std::size_t h = frame.grid_h, w = frame.grid_w, d = frame.keys.cols;
    const std::size_t oh = (h + kernel - 1) / kernel;
    const std::size_t ow = (w + kernel - 1) / kernel;
    Matrix pk(oh * ow, d), pv(oh * ow, d);
    for (std::size_t br = 0; br < oh; ++br) {
        for (std::size_t bc = 0; bc < ow; ++bc) {
            const std::size_t r0 = br * kernel, c0 = bc * kernel;
            const std::size_t r1 = std::min(r0 + kernel, h), c1 = std::min(c0 + kernel, w);
            const double count = double((r1 - r0) * (c1 - c0));
            for (std::size_t f = 0; f < d; ++f) {
                double ak = 0.0, av = 0.0;
                for (std::size_t r = r0; r < r1; ++r) {
                    for (std::size_t c = c0; c < c1; ++c) {
                        ak += double(frame.keys.at(r * w + c, f));
                        av += double(frame.values.at(r * w + c, f));
                    }
                }
                pk.at(br * ow + bc, f) = float(ak / count);
                pv.at(br * ow + bc, f) = float(av / count);
            }
        }
    }
    return {std::move(pk), std::move(pv)};
}

/// Keep tokens at grid positions (r*stride, c*stride).
inline SelectionMask dilated_select(const FrameKV& frame, std::size_t stride) {
    if (stride == 0)
        throw std::invalid_argument("dilated_select: stride must be >= 1");
    std::vector<std::size_t> kept;
    for (std::size_t r = 0; r < frame.grid_h; r += stride)
        for (std::size_t c = 0; c < frame.grid_w; c += stride)
            kept.push_back(r * frame.grid_w + c);
    return SelectionMask{frame.frame_index, frame.layer, std::move(kept)};
}

/// k window positions evenly spaced over [0, window_size-1] (floor of
/// linspace), deduplicated, ascending.
inline std::vector<std::size_t> uniform_frame_select(std::size_t window_size, std::size_t keep) {
    if (keep == 0)
        throw std::invalid_argument("uniform_frame_select: keep must be >= 1");
    std::vector<std::size_t> kept;
    if (window_size == 0) return kept;
    if (keep >= window_size) {
        kept.resize(window_size);
        std::iota(kept.begin(), kept.end(), std::size_t{0});
        return kept;
    }
    if (keep == 1) return {0};
    for (std::size_t i = 0; i < keep; ++i)
        kept.push_back(i * (window_size - 1) / (keep - 1));
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
    return kept;
}

/// One bipartite token-merging pass within a frame: even-index tokens propose
/// their most key-similar odd-index token; the r highest-similarity proposals
/// merge, size-weighted, keys and values alike. Output has N - r tokens in
/// original positional order.
inline std::pair<Matrix, Matrix> token_merge(const FrameKV& frame, std::size_t merges) {
    const std::size_t n = frame.token_count();
    if (merges >= n && n > 0)
        throw std::invalid_argument("token_merge: merges must be < token count");
    std::vector<std::size_t> set_a, set_b;
    for (std::size_t i = 0; i < n; ++i)
        (i % 2 == 0 ? set_a : set_b).push_back(i);
    const std::size_t r = std::min(merges, set_a.empty() || set_b.empty() ? std::size_t{0} : set_a.size());
    if (r == 0) return {frame.keys, frame.values};

    struct Proposal {
        std::size_t a, b;
        double sim;
    };
    std::vector<Proposal> proposals;
    proposals.reserve(set_a.size());
    for (std::size_t a : set_a) {
        std::size_t best_b = set_b.front();
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t b : set_b) {
            const double s = cosine_sim(frame.keys.row(a), frame.keys.row(b));
            if (s > best) {
                best = s;
                best_b = b;
            }
        }
        proposals.push_back({a, best_b, best});
    }
    // r highest-similarity proposals; equal similarity resolves to the
    // smaller A-token index.
    std::sort(proposals.begin(), proposals.end(), [](const Proposal& x, const Proposal& y) {
        if (x.sim != y.sim) return x.sim > y.sim;
        return x.a < y.a;
    });
    proposals.resize(r);

    std::vector<double> size(n, 1.0);
    std::vector<std::vector<double>> key_acc(n), val_acc(n);
    std::vector<bool> merged_away(n, false);
    auto ensure_acc = [&](std::size_t i) {
        if (!key_acc[i].empty()) return;
        key_acc[i].assign(frame.keys.row(i).begin(), frame.keys.row(i).end());
        val_acc[i].assign(frame.values.row(i).begin(), frame.values.row(i).end());
    };
    for (const auto& p : proposals) {
        ensure_acc(p.a);
        ensure_acc(p.b);
        const double total = size[p.a] + size[p.b];
        for (std::size_t f = 0; f < frame.keys.cols; ++f) {
            key_acc[p.b][f] = (size[p.b] * key_acc[p.b][f] + size[p.a] * key_acc[p.a][f]) / total;
            val_acc[p.b][f] = (size[p.b] * val_acc[p.b][f] + size[p.a] * val_acc[p.a][f]) / total;
        }
        size[p.b] = total;
        merged_away[p.a] = true;
    }

    Matrix mk(n - r, frame.keys.cols), mv(n - r, frame.values.cols);
    std::size_t row = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (merged_away[i]) continue;
        for (std::size_t f = 0; f < frame.keys.cols; ++f) {
            mk.at(row, f) = key_acc[i].empty() ? frame.keys.at(i, f) : float(key_acc[i][f]);
            mv.at(row, f) = val_acc[i].empty() ? frame.values.at(i, f) : float(val_acc[i][f]);
        }
        ++row;
    }
    return {std::move(mk), std::move(mv)};
}

/// Frame-wise k-means over per-frame mean-pooled key vectors. Evenly spaced
/// seeding, 25-iteration cap, empty clusters re-seeded to the farthest point;
/// keeps the frame nearest each centroid. Deterministic throughout.
inline std::vector<std::size_t> kmeans_frame_select(const std::vector<Vector>& frame_reps,
                                                    std::size_t centroids) {
    if (centroids == 0)
        throw std::invalid_argument("kmeans_frame_select: centroids must be >= 1");
    if (frame_reps.empty())
        throw std::invalid_argument("kmeans_frame_select: empty window");
    const std::size_t n = frame_reps.size();
    if (centroids >= n) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    const std::size_t dim = frame_reps.front().size();
    const std::size_t k = centroids;

    auto dist2 = [&](std::span<const double> c, const Vector& p) {
        double d = 0.0;
        for (std::size_t f = 0; f < dim; ++f) {
            const double diff = c[f] - double(p[f]);
            d += diff * diff;
        }
        return d;
    };

    std::vector<std::vector<double>> centers(k, std::vector<double>(dim));
    const auto seeds = uniform_frame_select(n, k);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t f = 0; f < dim; ++f)
            centers[c][f] = double(frame_reps[seeds[c]][f]);

    std::vector<std::size_t> assign(n, 0), prev_assign;
    for (int iter = 0; iter < 25; ++iter) {
        prev_assign = assign;
        for (std::size_t p = 0; p < n; ++p) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_c = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d = dist2(centers[c], frame_reps[p]);
                if (d < best) {
                    best = d;
                    best_c = c;
                }
            }
            assign[p] = best_c;
        }
        std::vector<std::size_t> count(k, 0);
        std::vector<std::vector<double>> sum(k, std::vector<double>(dim, 0.0));
        for (std::size_t p = 0; p < n; ++p) {
            ++count[assign[p]];
            for (std::size_t f = 0; f < dim; ++f)
                sum[assign[p]][f] += double(frame_reps[p][f]);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] == 0) {
                // re-seed an empty cluster to the point farthest from its centroid
                double far_d = -1.0;
                std::size_t far_p = 0;
                for (std::size_t p = 0; p < n; ++p) {
                    const double d = dist2(centers[assign[p]], frame_reps[p]);
                    if (d > far_d) {
                        far_d = d;
                        far_p = p;
                    }
                }
                for (std::size_t f = 0; f < dim; ++f)
                    centers[c][f] = double(frame_reps[far_p][f]);
                assign[far_p] = c;
                continue;
            }
            for (std::size_t f = 0; f < dim; ++f)
                centers[c][f] = sum[c][f] / double(count[c]);
        }
        if (iter > 0 && assign == prev_assign) break;
    }

    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < k; ++c) {
        double best = std::numeric_limits<double>::infinity();
        std::optional<std::size_t> best_p;
        for (std::size_t p = 0; p < n; ++p) {
            if (assign[p] != c) continue;
            const double d = dist2(centers[c], frame_reps[p]);
            if (d < best) {
                best = d;
                best_p = p;
            }
        }
        if (best_p) kept.push_back(*best_p);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

/// Keep the k window frames with the greatest change vs their predecessor
/// (lowest mean patch-wise cosine). Frame 0 anchors the window and is always
/// kept, counted within k.
inline std::vector<std::size_t> temporal_change_select(std::span<const Matrix* const> window_keys,
                                                       std::size_t keep) {
    if (keep == 0)
        throw std::invalid_argument("temporal_change_select: keep must be >= 1");
    const std::size_t n = window_keys.size();
    if (n < 2)
        throw std::invalid_argument("temporal_change_select: window must have >= 2 frames");
    if (keep >= n) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    std::vector<double> change(n, 0.0);
    for (std::size_t t = 1; t < n; ++t) {
        const auto sim = detail::paired_token_similarity(*window_keys[t], *window_keys[t - 1]);
        const std::size_t shared = std::min(window_keys[t]->rows, window_keys[t - 1]->rows);
        double acc = 0.0;
        for (std::size_t i = 0; i < shared; ++i) acc += sim[i];
        change[t] = shared > 0 ? acc / double(shared) : 1.0;
    }
    std::vector<std::size_t> order(n - 1);
    std::iota(order.begin(), order.end(), std::size_t{1});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (change[a] != change[b]) return change[a] < change[b];
        return a < b;
    });
    std::vector<std::size_t> kept{0};
    for (std::size_t i = 0; i + 1 < keep && i < order.size(); ++i)
        kept.push_back(order[i]);
    std::sort(kept.begin(), kept.end());
    return kept;
}

/// Rows of keys/values at the mask's kept indices.
inline std::pair<Matrix, Matrix> apply_mask(const FrameKV& frame, const SelectionMask& mask) {
    return {take_rows(frame.keys, mask.kept), take_rows(frame.values, mask.kept)};
}

/// Effective AKS keep count for a frame of n tokens.
inline std::size_t aks_effective_keep(const AdaptiveKeySelect& cfg, std::size_t n) {
    if (cfg.keep > 0) return std::min(cfg.keep, n);
    const auto derived = std::size_t(std::ceil(double(n) * cfg.keep_ratio));
    return std::clamp<std::size_t>(derived, 1, n);
}

/// Dilated stride approximating a keep budget on an h x w grid; the AKS
/// fallback for the first frame of a stream, which has no predecessor.
inline std::size_t stride_for_budget(std::size_t grid_h, std::size_t grid_w, std::size_t keep) {
    const double n = double(grid_h * grid_w);
    const auto s = std::size_t(std::lround(std::sqrt(n / double(std::max<std::size_t>(keep, 1)))));
    return std::clamp<std::size_t>(s, 1, std::max(grid_h, grid_w));
}

}  // namespace memstream
