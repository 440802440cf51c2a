#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "memstream/numerics.hpp"
#include "memstream/tensor_io.hpp"

namespace memstream {

/// Per-layer, per-frame key and value token grids. The unit of caching,
/// compression and retrieval. Heads are flattened into the feature axis
/// (cols = head_count * head_dim); attention reshapes per head.
struct FrameKV {
    std::size_t frame_index = 0;
    std::size_t layer = 0;
    Matrix keys;    // N x (H*D)
    Matrix values;  // N x (H*D)
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t head_count = 0;
    std::size_t head_dim = 0;

    std::size_t token_count() const { return keys.rows; }
};

inline void validate_frame_kv(const FrameKV& f) {
    if (f.keys.rows != f.values.rows || f.keys.cols != f.values.cols)
        throw std::invalid_argument("FrameKV: keys/values shape mismatch");
    if (f.grid_h * f.grid_w != f.keys.rows || f.keys.rows == 0)
        throw std::invalid_argument("FrameKV: grid does not match token count");
    if (f.head_count * f.head_dim != f.keys.cols)
        throw std::invalid_argument("FrameKV: head layout does not match feature dim");
    if (!all_finite(f.keys.data) || !all_finite(f.values.data))
        throw std::invalid_argument("FrameKV: non-finite values");
}

/// Mean over a frame's key token rows; the retrieval index entry for that frame.
struct RepVector {
    std::size_t frame_index = 0;
    std::size_t layer = 0;
    Vector vec;
};

struct EvictionReport {
    std::vector<std::size_t> evicted_frames;
};

/// Window capacity. Token budgets are counted on FULL, uncompressed per-frame
/// tokens; the frame-count mode gives the fixed-omega window semantics.
struct WindowBudget {
    enum class Kind { Tokens, Frames };
    Kind kind = Kind::Tokens;
    std::uint64_t value = 17000;
};

struct SpillConfig {
    std::filesystem::path dir;
    std::uint64_t threshold_bytes = 0;  // spill once offloaded in-memory bytes exceed this
};

struct StoreConfig {
    std::size_t layer_count = 1;
    std::size_t head_count = 1;
    std::size_t head_dim = 1;
    WindowBudget budget;
    std::optional<SpillConfig> spill;
};

/// Tiered per-layer KV cache: a hot sliding window plus an offloaded store
/// with optional disk spill and a representative-vector index.
///
/// Appends are FIFO per layer; when the hot window exceeds its budget, the
/// oldest frames are offloaded. At offload time the frame's representative
/// vector is computed from its FULL keys and registered, so after flush()
/// every appended frame is retrievable and scoreable. Compression strategies
/// never touch stored KV: what goes in is what comes out, bit-exact, spill
/// included.
///
/// One writer per layer during encoding; unrestricted concurrent readers
/// after flush.
class TieredCacheStore {
public:
    explicit TieredCacheStore(StoreConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.layer_count == 0 || cfg_.head_count == 0 || cfg_.head_dim == 0)
            throw std::invalid_argument("TieredCacheStore: zero-sized config");
        layers_.resize(cfg_.layer_count);
        if (cfg_.spill)
            std::filesystem::create_directories(cfg_.spill->dir);
    }

    const StoreConfig& config() const { return cfg_; }

    EvictionReport append_frame(std::size_t layer, FrameKV frame) {
        auto& part = partition(layer);
        validate_frame_kv(frame);
        if (frame.head_count != cfg_.head_count || frame.head_dim != cfg_.head_dim)
            throw std::invalid_argument("append_frame: head layout mismatch with store");
        if (frame.layer != layer)
            throw std::invalid_argument("append_frame: frame tagged with a different layer");
        if (part.last_frame && frame.frame_index <= *part.last_frame)
            throw std::invalid_argument("append_frame: frame index must strictly increase");
        part.last_frame = frame.frame_index;
        part.hot_tokens += frame.token_count();
        part.hot.push_back(std::move(frame));

        EvictionReport report;
        while (over_budget(part))
            report.evicted_frames.push_back(offload_oldest(layer, part));
        return report;
    }

    /// End-of-stream finalization: offload all remaining hot frames.
    void flush() {
        for (std::size_t layer = 0; layer < layers_.size(); ++layer) {
            auto& part = layers_[layer];
            while (!part.hot.empty())
                offload_oldest(layer, part);
        }
    }

    bool flushed() const {
        for (const auto& part : layers_)
            if (!part.hot.empty()) return false;
        return true;
    }

    /// KV payloads for the requested frames, ascending frame order,
    /// bit-identical to what was appended (round trip through spill included).
    std::vector<FrameKV> fetch_frames(std::size_t layer, std::span<const std::size_t> indices) const {
        const auto& part = partition(layer);
        std::vector<std::size_t> sorted(indices.begin(), indices.end());
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

        std::vector<FrameKV> out;
        out.reserve(sorted.size());
        for (std::size_t idx : sorted) {
            if (auto it = part.offloaded.find(idx); it != part.offloaded.end()) {
                out.push_back(materialize(layer, it->second));
                continue;
            }
            auto hot = std::find_if(part.hot.begin(), part.hot.end(),
                                    [&](const FrameKV& f) { return f.frame_index == idx; });
            if (hot == part.hot.end())
                throw std::out_of_range("fetch_frames: unknown frame index " + std::to_string(idx));
            out.push_back(*hot);
        }
        return out;
    }

    const std::deque<FrameKV>& hot_window(std::size_t layer) const { return partition(layer).hot; }

    /// Representative vectors of all offloaded frames, ascending frame order.
    const std::vector<RepVector>& rep_vectors(std::size_t layer) const {
        return partition(layer).reps;
    }

    std::size_t frame_count(std::size_t layer) const {
        const auto& part = partition(layer);
        return part.hot.size() + part.offloaded.size();
    }

    std::uint64_t hot_token_count(std::size_t layer) const { return partition(layer).hot_tokens; }

    std::uint64_t offloaded_memory_bytes(std::size_t layer) const {
        return partition(layer).offloaded_mem_bytes;
    }

    std::size_t spilled_frame_count(std::size_t layer) const {
        const auto& part = partition(layer);
        std::size_t n = 0;
        for (const auto& [idx, off] : part.offloaded) n += off.on_disk ? 1 : 0;
        return n;
    }

private:
    struct OffloadedFrame {
        std::size_t frame_index = 0;
        std::size_t grid_h = 0, grid_w = 0;
        std::size_t rows = 0, cols = 0;
        bool on_disk = false;
        Matrix keys, values;  // empty while on disk
        std::filesystem::path keys_path, values_path;
    };

    struct LayerPartition {
        std::deque<FrameKV> hot;
        std::uint64_t hot_tokens = 0;
        std::map<std::size_t, OffloadedFrame> offloaded;
        std::vector<RepVector> reps;
        std::optional<std::size_t> last_frame;
        std::uint64_t offloaded_mem_bytes = 0;
    };

    LayerPartition& partition(std::size_t layer) {
        if (layer >= layers_.size())
            throw std::out_of_range("TieredCacheStore: layer out of range");
        return layers_[layer];
    }
    const LayerPartition& partition(std::size_t layer) const {
        if (layer >= layers_.size())
            throw std::out_of_range("TieredCacheStore: layer out of range");
        return layers_[layer];
    }

    bool over_budget(const LayerPartition& part) const {
        if (part.hot.empty()) return false;
        if (cfg_.budget.kind == WindowBudget::Kind::Frames)
            return part.hot.size() > cfg_.budget.value;
        return part.hot_tokens > cfg_.budget.value;
    }

    std::size_t offload_oldest(std::size_t layer, LayerPartition& part) {
        FrameKV frame = std::move(part.hot.front());
        part.hot.pop_front();
        part.hot_tokens -= frame.token_count();

        part.reps.push_back(RepVector{frame.frame_index, layer, mean_pool_rows(frame.keys)});

        OffloadedFrame off;
        off.frame_index = frame.frame_index;
        off.grid_h = frame.grid_h;
        off.grid_w = frame.grid_w;
        off.rows = frame.keys.rows;
        off.cols = frame.keys.cols;
        off.keys = std::move(frame.keys);
        off.values = std::move(frame.values);
        part.offloaded_mem_bytes += frame_bytes(off);
        const std::size_t idx = off.frame_index;
        part.offloaded.emplace(idx, std::move(off));

        if (cfg_.spill)
            spill_until_under_threshold(layer, part);
        return idx;
    }

    static std::uint64_t frame_bytes(const OffloadedFrame& off) {
        return std::uint64_t(off.rows) * off.cols * 2 * sizeof(float);
    }

    void spill_until_under_threshold(std::size_t layer, LayerPartition& part) {
        for (auto& [idx, off] : part.offloaded) {
            if (part.offloaded_mem_bytes <= cfg_.spill->threshold_bytes) break;
            if (off.on_disk) continue;
            std::ostringstream stem;
            stem << "l" << layer << "_f" << idx;
            off.keys_path = cfg_.spill->dir / (stem.str() + "_k.mstn");
            off.values_path = cfg_.spill->dir / (stem.str() + "_v.mstn");
            write_matrix(off.keys_path, off.keys);
            write_matrix(off.values_path, off.values);
            off.keys = Matrix();
            off.values = Matrix();
            off.on_disk = true;
            part.offloaded_mem_bytes -= frame_bytes(off);
        }
    }

    FrameKV materialize(std::size_t layer, const OffloadedFrame& off) const {
        FrameKV f;
        f.frame_index = off.frame_index;
        f.layer = layer;
        f.grid_h = off.grid_h;
        f.grid_w = off.grid_w;
        f.head_count = cfg_.head_count;
        f.head_dim = cfg_.head_dim;
        if (off.on_disk) {
            f.keys = read_matrix(off.keys_path);
            f.values = read_matrix(off.values_path);
            if (f.keys.rows != off.rows || f.keys.cols != off.cols ||
                f.values.rows != off.rows || f.values.cols != off.cols)
                throw std::runtime_error("fetch_frames: spill file shape mismatch");
        } else {
            f.keys = off.keys;
            f.values = off.values;
        }
        return f;
    }

    StoreConfig cfg_;
    std::vector<LayerPartition> layers_;

    friend void save_cache(const TieredCacheStore&, const std::filesystem::path&);
    friend TieredCacheStore load_cache(const std::filesystem::path&);
};

/// 2 * L * T * M * H * D * bytes_per_elem, overflow-checked.
inline std::uint64_t kv_cache_bytes(std::uint64_t layers, std::uint64_t frames,
                                    std::uint64_t tokens_per_frame, std::uint64_t heads,
                                    std::uint64_t head_dim, std::uint64_t bytes_per_elem) {
    const std::uint64_t factors[] = {layers, frames, tokens_per_frame, heads, head_dim, bytes_per_elem};
    std::uint64_t total = 2;
    for (std::uint64_t f : factors) {
        if (f == 0)
            throw std::invalid_argument("kv_cache_bytes: all parameters must be >= 1");
        if (__builtin_mul_overflow(total, f, &total))
            throw std::overflow_error("kv_cache_bytes: byte count overflows 64 bits");
    }
    return total;
}

// Cache file layout ("MSKV"):
//   magic "MSKV" | u32 version=1 | u64 manifest length | manifest JSON |
//   raw little-endian f32 payloads at the manifest's offsets (relative to
//   the end of the manifest).

inline constexpr char kCacheMagic[4] = {'M', 'S', 'K', 'V'};
inline constexpr std::uint32_t kCacheVersion = 1;

inline void save_cache(const TieredCacheStore& store, const std::filesystem::path& path) {
    if (!store.flushed())
        throw std::invalid_argument("save_cache: store must be flushed first");

    const auto& cfg = store.cfg_;
    nlohmann::json manifest;
    manifest["version"] = kCacheVersion;
    manifest["layers"] = cfg.layer_count;
    manifest["heads"] = cfg.head_count;
    manifest["head_dim"] = cfg.head_dim;
    manifest["budget_kind"] = cfg.budget.kind == WindowBudget::Kind::Tokens ? "tokens" : "frames";
    manifest["budget_value"] = cfg.budget.value;

    std::size_t max_frames = 0;
    for (const auto& part : store.layers_) max_frames = std::max(max_frames, part.offloaded.size());
    manifest["frames"] = max_frames;

    std::vector<std::uint64_t> token_counts;
    for (const auto& [idx, off] : store.layers_.front().offloaded)
        token_counts.push_back(off.rows);
    manifest["token_counts"] = token_counts;

    // Entries sorted by (layer, frame); payloads laid out in entry order as
    // keys | values | rep, offsets relative to the payload section start.
    nlohmann::json entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (std::size_t layer = 0; layer < store.layers_.size(); ++layer) {
        const auto& part = store.layers_[layer];
        std::size_t rep_pos = 0;
        for (const auto& [idx, off] : part.offloaded) {
            const std::uint64_t tensor_bytes = std::uint64_t(off.rows) * off.cols * sizeof(float);
            const std::uint64_t rep_bytes = std::uint64_t(off.cols) * sizeof(float);
            nlohmann::json e;
            e["layer"] = layer;
            e["frame"] = idx;
            e["grid"] = {off.grid_h, off.grid_w};
            e["tokens"] = off.rows;
            e["keys_offset"] = offset;
            e["values_offset"] = offset + tensor_bytes;
            e["rep_offset"] = offset + 2 * tensor_bytes;
            offset += 2 * tensor_bytes + rep_bytes;
            entries.push_back(std::move(e));
            if (rep_pos >= part.reps.size() || part.reps[rep_pos].frame_index != idx)
                throw std::runtime_error("save_cache: rep index out of sync with offloaded tier");
            ++rep_pos;
        }
    }
    manifest["entries"] = std::move(entries);

    const std::string manifest_str = manifest.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("save_cache: cannot open " + path.string());
    os.write(kCacheMagic, 4);
    detail::write_u32_le(os, kCacheVersion);
    detail::write_u64_le(os, manifest_str.size());
    os.write(manifest_str.data(), std::streamsize(manifest_str.size()));

    for (std::size_t layer = 0; layer < store.layers_.size(); ++layer) {
        const auto& part = store.layers_[layer];
        std::size_t rep_pos = 0;
        for (const auto& [idx, off] : part.offloaded) {
            const FrameKV frame = store.materialize(layer, off);
            detail::write_f32_le(os, frame.keys.data);
            detail::write_f32_le(os, frame.values.data);
            detail::write_f32_le(os, part.reps[rep_pos].vec);
            ++rep_pos;
        }
    }
    if (!os)
        throw std::runtime_error("save_cache: write failed for " + path.string());
}

inline TieredCacheStore load_cache(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("load_cache: cannot open " + path.string());

    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kCacheMagic, 4) != 0)
        throw std::runtime_error("load_cache: bad magic in " + path.string());
    if (detail::read_u32_le(is) != kCacheVersion)
        throw std::runtime_error("load_cache: unsupported version in " + path.string());
    const std::uint64_t manifest_len = detail::read_u64_le(is);
    if (16 + manifest_len > std::filesystem::file_size(path))
        throw std::runtime_error("load_cache: truncated manifest in " + path.string());
    std::string manifest_str(manifest_len, '\0');
    if (!is.read(manifest_str.data(), std::streamsize(manifest_len)))
        throw std::runtime_error("load_cache: truncated manifest in " + path.string());

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_str);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_cache: corrupt manifest in " + path.string() + ": " + e.what());
    }

    StoreConfig cfg;
    cfg.layer_count = manifest.at("layers").get<std::size_t>();
    cfg.head_count = manifest.at("heads").get<std::size_t>();
    cfg.head_dim = manifest.at("head_dim").get<std::size_t>();
    cfg.budget.kind = manifest.at("budget_kind").get<std::string>() == "tokens"
                          ? WindowBudget::Kind::Tokens
                          : WindowBudget::Kind::Frames;
    cfg.budget.value = manifest.at("budget_value").get<std::uint64_t>();
    TieredCacheStore store(cfg);

    const std::size_t feature_dim = cfg.head_count * cfg.head_dim;
    std::uint64_t expected_offset = 0;
    for (const auto& e : manifest.at("entries")) {
        const auto layer = e.at("layer").get<std::size_t>();
        const auto frame = e.at("frame").get<std::size_t>();
        const auto grid = e.at("grid");
        const auto tokens = e.at("tokens").get<std::size_t>();
        const std::size_t grid_h = grid.at(0).get<std::size_t>();
        const std::size_t grid_w = grid.at(1).get<std::size_t>();
        if (grid_h * grid_w != tokens)
            throw std::runtime_error("load_cache: token count does not match grid");
        const std::uint64_t tensor_bytes = std::uint64_t(tokens) * feature_dim * sizeof(float);
        if (e.at("keys_offset").get<std::uint64_t>() != expected_offset ||
            e.at("values_offset").get<std::uint64_t>() != expected_offset + tensor_bytes ||
            e.at("rep_offset").get<std::uint64_t>() != expected_offset + 2 * tensor_bytes)
            throw std::runtime_error("load_cache: overlapping or out-of-order payload offsets");
        expected_offset += 2 * tensor_bytes + feature_dim * sizeof(float);

        if (layer >= cfg.layer_count)
            throw std::runtime_error("load_cache: entry layer out of range");
        auto& part = store.layers_[layer];

        TieredCacheStore::OffloadedFrame off;
        off.frame_index = frame;
        off.grid_h = grid_h;
        off.grid_w = grid_w;
        off.rows = tokens;
        off.cols = feature_dim;
        off.keys = Matrix(tokens, feature_dim);
        off.values = Matrix(tokens, feature_dim);
        detail::read_f32_le(is, off.keys.data);
        detail::read_f32_le(is, off.values.data);
        RepVector rep{frame, layer, Vector(feature_dim)};
        detail::read_f32_le(is, rep.vec);

        if (part.last_frame && frame <= *part.last_frame)
            throw std::runtime_error("load_cache: entries out of frame order");
        part.last_frame = frame;
        part.offloaded_mem_bytes += TieredCacheStore::frame_bytes(off);
        part.offloaded.emplace(frame, std::move(off));
        part.reps.push_back(std::move(rep));
    }

    char extra;
    if (is.read(&extra, 1))
        throw std::runtime_error("load_cache: trailing bytes in " + path.string());
    return store;
}

}  // namespace memstream
