#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace memstream {

/// Dense row-major matrix of 32-bit reals. Feature storage across the whole
/// engine uses this type; intermediate arithmetic runs in double.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}
    Matrix(std::size_t r, std::size_t c, std::vector<float> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols)
            throw std::invalid_argument("Matrix: data length != rows*cols");
    }

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<const float> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }
    std::span<float> row(std::size_t r) {
        return {data.data() + r * cols, cols};
    }

    bool operator==(const Matrix&) const = default;
};

using Vector = std::vector<float>;

inline bool all_finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

/// Cosine similarity of two equal-length vectors. Zero-norm inputs are an
/// error rather than a silent 0 so broken inputs cannot corrupt a ranking.
inline double cosine_sim(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine_sim: dimension mismatch");
    if (a.empty())
        throw std::invalid_argument("cosine_sim: empty input");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_sim: zero-norm input");
    // sqrt of the product keeps identical inputs at exactly 1.0
    return dot / std::sqrt(na * nb);
}

/// Softmax with max-subtraction. Output entries are positive and sum to 1.
inline std::vector<float> softmax_row(std::span<const float> logits) {
    if (logits.empty())
        throw std::invalid_argument("softmax_row: empty input");
    double hi = logits[0];
    for (float x : logits) hi = std::max(hi, double(x));
    std::vector<double> e(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp(double(logits[i]) - hi);
        sum += e[i];
    }
    std::vector<float> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        out[i] = float(e[i] / sum);
    return out;
}

struct AttentionResult {
    Matrix output;   // m x d
    Matrix weights;  // m x n, rows sum to 1
};

/// Row-wise softmax(Q Kᵀ / √d) V. Scaling uses the column dimension of the
/// supplied matrices, i.e. the per-head dimension when called per head.
inline AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    if (q.cols != k.cols)
        throw std::invalid_argument("scaled_dot_attention: Q/K dimension mismatch");
    if (k.rows != v.rows)
        throw std::invalid_argument("scaled_dot_attention: K/V row mismatch");
    if (k.rows == 0)
        throw std::invalid_argument("scaled_dot_attention: no keys");
    if (q.cols == 0)
        throw std::invalid_argument("scaled_dot_attention: zero feature dim");

    const double scale = 1.0 / std::sqrt(double(q.cols));
    AttentionResult res{Matrix(q.rows, v.cols), Matrix(q.rows, k.rows)};
    std::vector<double> logits(k.rows);
    std::vector<double> w(k.rows);
    for (std::size_t i = 0; i < q.rows; ++i) {
        auto qi = q.row(i);
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k.rows; ++j) {
            auto kj = k.row(j);
            double dot = 0.0;
            for (std::size_t c = 0; c < q.cols; ++c)
                dot += double(qi[c]) * double(kj[c]);
            logits[j] = dot * scale;
            hi = std::max(hi, logits[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < k.rows; ++j) {
            w[j] = std::exp(logits[j] - hi);
            sum += w[j];
        }
        for (std::size_t j = 0; j < k.rows; ++j) {
            w[j] /= sum;
            res.weights.at(i, j) = float(w[j]);
        }
        for (std::size_t c = 0; c < v.cols; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k.rows; ++j)
                acc += w[j] * double(v.at(j, c));
            res.output.at(i, c) = float(acc);
        }
    }
    return res;
}

/// Component-wise mean over rows; the representative-vector primitive.
inline Vector mean_pool_rows(const Matrix& x) {
    if (x.rows == 0)
        throw std::invalid_argument("mean_pool_rows: empty matrix");
    Vector out(x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < x.rows; ++r)
            acc += double(x.at(r, c));
        out[c] = float(acc / double(x.rows));
    }
    return out;
}

/// Shannon entropy of a distribution divided by log(n); 1 = uniform, 0 = one-hot.
inline double normalized_entropy(std::span<const double> p) {
    if (p.size() < 2)
        throw std::invalid_argument("normalized_entropy: need at least 2 bins");
    double sum = 0.0;
    for (double x : p) {
        if (x < 0.0 || !std::isfinite(x))
            throw std::invalid_argument("normalized_entropy: not a distribution");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("normalized_entropy: entries must sum to 1");
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h / std::log(double(p.size()));
}

/// Indices of the k largest scores, descending score order, ties broken by
/// smaller index. k > n clamps; k = 0 is a contract violation.
inline std::vector<std::size_t> top_k_desc(std::span<const double> scores, std::size_t k) {
    if (k == 0)
        throw std::invalid_argument("top_k_desc: k must be >= 1");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    idx.resize(std::min(k, idx.size()));
    return idx;
}

// --- small layout helpers shared by the attention paths ---

/// Column block [head*head_dim, (head+1)*head_dim) of a head-flattened matrix.
inline Matrix head_slice(const Matrix& m, std::size_t head, std::size_t head_dim) {
    if ((head + 1) * head_dim > m.cols)
        throw std::invalid_argument("head_slice: head out of range");
    Matrix out(m.rows, head_dim);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < head_dim; ++c)
            out.at(r, c) = m.at(r, head * head_dim + c);
    return out;
}

inline Matrix vconcat(const Matrix& a, const Matrix& b) {
    if (a.rows == 0) return b;
    if (b.rows == 0) return a;
    if (a.cols != b.cols)
        throw std::invalid_argument("vconcat: column mismatch");
    Matrix out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + std::ptrdiff_t(a.data.size()));
    return out;
}

/// Gather rows of m at the given indices, in the order given.
inline Matrix take_rows(const Matrix& m, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), m.cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m.rows)
            throw std::out_of_range("take_rows: row index out of range");
        std::copy_n(m.data.begin() + std::ptrdiff_t(indices[i] * m.cols), m.cols,
                    out.data.begin() + std::ptrdiff_t(i * m.cols));
    }
    return out;
}

}  // namespace memstream
