#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memstream/numerics.hpp"

// Tensor file layout ("MSTN"):
//   magic "MSTN" | u32 version=1 | u8 dtype (0 = f32) | u8 rank |
//   rank x u64 dims | little-endian row-major payload

namespace memstream {

namespace detail {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[std::size_t(i)] = (v >> (8 * i)) & 0xFF;
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[std::size_t(i)] = (v >> (8 * i)) & 0xFF;
    os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint32_t read_u32_le(std::istream& is) {
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4))
        throw std::runtime_error("tensor_io: truncated file (u32)");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[std::size_t(i)]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64_le(std::istream& is) {
    std::array<unsigned char, 8> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 8))
        throw std::runtime_error("tensor_io: truncated file (u64)");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[std::size_t(i)]) << (8 * i);
    return v;
}

inline void write_f32_le(std::ostream& os, std::span<const float> values) {
    for (float x : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &x, 4);
        write_u32_le(os, bits);
    }
}

inline void read_f32_le(std::istream& is, std::span<float> out) {
    for (float& x : out) {
        std::uint32_t bits = read_u32_le(is);
        std::memcpy(&x, &bits, 4);
    }
}

}  // namespace detail

struct TensorData {
    std::vector<std::uint64_t> dims;
    std::vector<float> values;

    std::uint64_t element_count() const {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

inline constexpr char kTensorMagic[4] = {'M', 'S', 'T', 'N'};
inline constexpr std::uint32_t kTensorVersion = 1;

inline void write_tensor(const std::filesystem::path& path,
                         std::span<const std::uint64_t> dims,
                         std::span<const float> values) {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    if (n != values.size())
        throw std::invalid_argument("write_tensor: payload length != product(dims)");
    if (dims.size() > 255)
        throw std::invalid_argument("write_tensor: rank too large");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("write_tensor: cannot open " + path.string());
    os.write(kTensorMagic, 4);
    detail::write_u32_le(os, kTensorVersion);
    char dtype = 0, rank = char(dims.size());
    os.write(&dtype, 1);
    os.write(&rank, 1);
    for (auto d : dims) detail::write_u64_le(os, d);
    detail::write_f32_le(os, values);
    if (!os)
        throw std::runtime_error("write_tensor: write failed for " + path.string());
}

inline std::vector<std::uint64_t> read_tensor_header(std::istream& is, const std::string& name) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0)
        throw std::runtime_error("read_tensor: bad magic in " + name);
    const auto version = detail::read_u32_le(is);
    if (version != kTensorVersion)
        throw std::runtime_error("read_tensor: unsupported version in " + name);
    char dtype, rank;
    if (!is.read(&dtype, 1) || !is.read(&rank, 1))
        throw std::runtime_error("read_tensor: truncated header in " + name);
    if (dtype != 0)
        throw std::runtime_error("read_tensor: unsupported dtype in " + name);
    std::vector<std::uint64_t> dims(std::size_t(static_cast<unsigned char>(rank)));
    for (auto& d : dims) d = detail::read_u64_le(is);
    return dims;
}

/// Header-only peek used by manifest validation; payload is not read.
inline std::vector<std::uint64_t> read_tensor_dims(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("read_tensor: cannot open " + path.string());
    return read_tensor_header(is, path.string());
}

inline TensorData read_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("read_tensor: cannot open " + path.string());
    TensorData t;
    t.dims = read_tensor_header(is, path.string());

    std::uint64_t count = 1;
    for (auto d : t.dims)
        if (__builtin_mul_overflow(count, d, &count))
            throw std::runtime_error("read_tensor: dims overflow in " + path.string());
    const std::uint64_t header = 4 + 4 + 2 + 8 * t.dims.size();
    if (std::filesystem::file_size(path) != header + count * sizeof(float))
        throw std::runtime_error("read_tensor: payload length mismatch in " + path.string());

    t.values.resize(count);
    detail::read_f32_le(is, t.values);
    return t;
}

inline Matrix read_matrix(const std::filesystem::path& path) {
    TensorData t = read_tensor(path);
    if (t.dims.size() != 2)
        throw std::runtime_error("read_matrix: expected rank-2 tensor in " + path.string());
    return Matrix(std::size_t(t.dims[0]), std::size_t(t.dims[1]), std::move(t.values));
}

inline void write_matrix(const std::filesystem::path& path, const Matrix& m) {
    const std::uint64_t dims[2] = {m.rows, m.cols};
    write_tensor(path, dims, m.data);
}

}  // namespace memstream
