#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "memstream/kv_store.hpp"
#include "memstream/numerics.hpp"
#include "memstream/stream_encoder.hpp"

namespace testutil {

inline memstream::Matrix random_matrix(std::mt19937& rng, std::size_t rows, std::size_t cols) {
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    memstream::Matrix m(rows, cols);
    for (auto& x : m.data) x = dist(rng);
    return m;
}

inline memstream::Vector random_vector(std::mt19937& rng, std::size_t dim) {
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    memstream::Vector v(dim);
    for (auto& x : v) x = dist(rng);
    return v;
}

inline memstream::FrameKV make_frame(std::mt19937& rng, std::size_t frame_index, std::size_t layer,
                                     std::size_t grid_h, std::size_t grid_w, std::size_t heads,
                                     std::size_t head_dim) {
    memstream::FrameKV f;
    f.frame_index = frame_index;
    f.layer = layer;
    f.grid_h = grid_h;
    f.grid_w = grid_w;
    f.head_count = heads;
    f.head_dim = head_dim;
    f.keys = random_matrix(rng, grid_h * grid_w, heads * head_dim);
    f.values = random_matrix(rng, grid_h * grid_w, heads * head_dim);
    return f;
}

/// Random multi-layer stream with a fixed grid.
inline std::vector<memstream::StreamFrame> random_stream(std::mt19937& rng, std::size_t frames,
                                                         std::size_t layers, std::size_t grid_h,
                                                         std::size_t grid_w, std::size_t heads,
                                                         std::size_t head_dim) {
    std::vector<memstream::StreamFrame> out;
    for (std::size_t t = 0; t < frames; ++t) {
        memstream::StreamFrame f;
        f.frame_index = t;
        f.grid_h = grid_h;
        f.grid_w = grid_w;
        const std::size_t n = grid_h * grid_w;
        for (std::size_t l = 0; l < layers; ++l) {
            memstream::LayerQKV qkv;
            qkv.q = random_matrix(rng, n, heads * head_dim);
            qkv.k = random_matrix(rng, n, heads * head_dim);
            qkv.v = random_matrix(rng, n, heads * head_dim);
            f.layers.push_back(std::move(qkv));
        }
        out.push_back(std::move(f));
    }
    return out;
}

/// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& stem) {
        static std::atomic<unsigned> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
