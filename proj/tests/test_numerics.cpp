#include "memstream/numerics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "test_util.hpp"

using namespace memstream;

namespace {

// Independent dense attention oracle: no max subtraction, double precision,
// intentionally written differently from the library path.
std::vector<std::vector<double>> naive_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    std::vector<std::vector<double>> out(q.rows, std::vector<double>(v.cols, 0.0));
    const double scale = 1.0 / std::sqrt(double(q.cols));
    for (std::size_t i = 0; i < q.rows; ++i) {
        std::vector<double> e(k.rows);
        double z = 0.0;
        for (std::size_t j = 0; j < k.rows; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < q.cols; ++c) dot += double(q.at(i, c)) * double(k.at(j, c));
            e[j] = std::exp(dot * scale);
            z += e[j];
        }
        for (std::size_t j = 0; j < k.rows; ++j)
            for (std::size_t c = 0; c < v.cols; ++c) out[i][c] += e[j] / z * double(v.at(j, c));
    }
    return out;
}

}  // namespace

TEST(CosineSim, IdenticalUnitVectors) {
    Vector e1{1.0f, 0.0f, 0.0f};
    EXPECT_DOUBLE_EQ(cosine_sim(e1, e1), 1.0);
}

TEST(CosineSim, OrthogonalBasisVectors) {
    Vector e1{1.0f, 0.0f}, e2{0.0f, 1.0f};
    EXPECT_DOUBLE_EQ(cosine_sim(e1, e2), 0.0);
}

TEST(CosineSim, HandEvaluatedHalfSqrtTwo) {
    Vector a{1.0f, 1.0f}, b{1.0f, 0.0f};
    EXPECT_NEAR(cosine_sim(a, b), 0.70710678, 1e-8);
}

TEST(CosineSim, Errors) {
    Vector a{1.0f, 0.0f}, b{1.0f, 0.0f, 0.0f}, zero{0.0f, 0.0f};
    EXPECT_THROW(cosine_sim(a, b), std::invalid_argument);
    EXPECT_THROW(cosine_sim(a, zero), std::invalid_argument);
    EXPECT_THROW(cosine_sim(zero, a), std::invalid_argument);
}

TEST(CosineSim, SelfSimilarityAndPositiveScaleInvariance) {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Vector a = testutil::random_vector(rng, 16);
        Vector b = testutil::random_vector(rng, 16);
        a[0] += 1.0f;  // keep away from zero norm
        b[0] += 1.0f;
        EXPECT_NEAR(cosine_sim(a, a), 1.0, 1e-6);
        const float c = std::uniform_real_distribution<float>(0.1f, 10.0f)(rng);
        Vector scaled = a;
        for (auto& x : scaled) x *= c;
        EXPECT_NEAR(cosine_sim(scaled, b), cosine_sim(a, b), 1e-6);
    }
}

TEST(SoftmaxRow, Symmetry) {
    Vector logits{0.0f, 0.0f};
    const auto p = softmax_row(logits);
    EXPECT_FLOAT_EQ(p[0], 0.5f);
    EXPECT_FLOAT_EQ(p[1], 0.5f);
}

TEST(SoftmaxRow, SingleElement) {
    for (float c : {-1000.0f, 0.0f, 3.5f, 1000.0f}) {
        Vector logits{c};
        const auto p = softmax_row(logits);
        ASSERT_EQ(p.size(), 1u);
        EXPECT_FLOAT_EQ(p[0], 1.0f);
    }
}

TEST(SoftmaxRow, HandEvaluatedExpRatios) {
    Vector logits{float(std::log(2.0)), 0.0f};
    const auto p = softmax_row(logits);
    EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-6);
    EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-6);
}

TEST(SoftmaxRow, EmptyInputThrows) {
    EXPECT_THROW(softmax_row(Vector{}), std::invalid_argument);
}

TEST(SoftmaxRow, StableAndNormalizedOnRandomInputs) {
    std::mt19937 rng(11);
    std::uniform_real_distribution<float> dist(-30.0f, 30.0f);
    for (int trial = 0; trial < 100; ++trial) {
        Vector logits(1 + trial % 9);
        for (auto& x : logits) x = dist(rng);
        const auto p = softmax_row(logits);
        double sum = 0.0;
        for (float x : p) {
            EXPECT_GT(x, 0.0f);
            sum += x;
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
    }
}

TEST(SoftmaxRow, MaxSubtractionSurvivesHugeLogits) {
    Vector logits{5000.0f, 5000.0f};
    const auto p = softmax_row(logits);
    EXPECT_FLOAT_EQ(p[0], 0.5f);
    EXPECT_FLOAT_EQ(p[1], 0.5f);
}

TEST(ScaledDotAttention, SingleKeyReturnsItsValueRow) {
    std::mt19937 rng(3);
    const Matrix q = testutil::random_matrix(rng, 3, 4);
    const Matrix k = testutil::random_matrix(rng, 1, 4);
    const Matrix v = testutil::random_matrix(rng, 1, 4);
    const auto res = scaled_dot_attention(q, k, v);
    for (std::size_t i = 0; i < q.rows; ++i) {
        EXPECT_FLOAT_EQ(res.weights.at(i, 0), 1.0f);
        for (std::size_t c = 0; c < 4; ++c) EXPECT_FLOAT_EQ(res.output.at(i, c), v.at(0, c));
    }
}

TEST(ScaledDotAttention, DominantLogitCollapsesToOneValueRow) {
    // One key aligned with the query at scaled logit >= 20 above the rest.
    const std::size_t d = 4;
    Matrix q(1, d), k(3, d), v(3, d);
    q.at(0, 0) = 10.0f;
    k.at(0, 0) = 5.0f;   // logit 50/sqrt(4) = 25
    k.at(1, 1) = 1.0f;   // logit 0
    k.at(2, 2) = 1.0f;   // logit 0
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t c = 0; c < d; ++c) v.at(j, c) = float(j + 1) * float(c + 1);
    const auto res = scaled_dot_attention(q, k, v);
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(res.output.at(0, c), v.at(0, c), 1e-6);
}

TEST(ScaledDotAttention, MatchesNaiveOracle) {
    std::mt19937 rng(17);
    const Matrix q = testutil::random_matrix(rng, 4, 8);
    const Matrix k = testutil::random_matrix(rng, 6, 8);
    const Matrix v = testutil::random_matrix(rng, 6, 8);
    const auto res = scaled_dot_attention(q, k, v);
    const auto oracle = naive_attention(q, k, v);
    for (std::size_t i = 0; i < q.rows; ++i)
        for (std::size_t c = 0; c < v.cols; ++c)
            EXPECT_NEAR(res.output.at(i, c), oracle[i][c], 1e-5);
}

TEST(ScaledDotAttention, WeightRowsSumToOne) {
    std::mt19937 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix q = testutil::random_matrix(rng, 1 + trial % 5, 8);
        const Matrix k = testutil::random_matrix(rng, 1 + trial % 7, 8);
        const Matrix v = testutil::random_matrix(rng, k.rows, 8);
        const auto res = scaled_dot_attention(q, k, v);
        for (std::size_t i = 0; i < q.rows; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < k.rows; ++j) {
                EXPECT_GE(res.weights.at(i, j), 0.0f);
                sum += res.weights.at(i, j);
            }
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
    }
}

TEST(ScaledDotAttention, PermutationEquivariantInKeyValueRows) {
    std::mt19937 rng(29);
    const Matrix q = testutil::random_matrix(rng, 3, 8);
    const Matrix k = testutil::random_matrix(rng, 6, 8);
    const Matrix v = testutil::random_matrix(rng, 6, 8);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix kp = take_rows(k, perm);
    const Matrix vp = take_rows(v, perm);
    const auto a = scaled_dot_attention(q, k, v);
    const auto b = scaled_dot_attention(q, kp, vp);
    for (std::size_t i = 0; i < q.rows; ++i)
        for (std::size_t c = 0; c < v.cols; ++c)
            EXPECT_NEAR(a.output.at(i, c), b.output.at(i, c), 1e-6);
}

TEST(ScaledDotAttention, DimensionMismatchThrows) {
    Matrix q(2, 4), k(3, 5), v(3, 5);
    EXPECT_THROW(scaled_dot_attention(q, k, v), std::invalid_argument);
    Matrix k2(3, 4), v2(2, 4);
    EXPECT_THROW(scaled_dot_attention(q, k2, v2), std::invalid_argument);
}

TEST(MeanPoolRows, SingleRowIdentity) {
    Matrix x(1, 3, {1.0f, 2.0f, 3.0f});
    EXPECT_EQ(mean_pool_rows(x), (Vector{1.0f, 2.0f, 3.0f}));
}

TEST(MeanPoolRows, Symmetry) {
    Matrix x(2, 2, {1.0f, 0.0f, 0.0f, 1.0f});
    EXPECT_EQ(mean_pool_rows(x), (Vector{0.5f, 0.5f}));
}

TEST(MeanPoolRows, HandAveraged) {
    Matrix x(3, 2, {2.0f, 4.0f, 4.0f, 8.0f, 0.0f, 0.0f});
    EXPECT_EQ(mean_pool_rows(x), (Vector{2.0f, 4.0f}));
}

TEST(MeanPoolRows, EmptyThrows) {
    EXPECT_THROW(mean_pool_rows(Matrix(0, 3)), std::invalid_argument);
}

TEST(NormalizedEntropy, UniformIsOne) {
    const std::vector<double> p{0.25, 0.25, 0.25, 0.25};
    EXPECT_NEAR(normalized_entropy(p), 1.0, 1e-12);
}

TEST(NormalizedEntropy, OneHotIsZero) {
    const std::vector<double> p{0.0, 1.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(normalized_entropy(p), 0.0);
}

TEST(NormalizedEntropy, HalfUniform) {
    const std::vector<double> p{0.5, 0.5, 0.0, 0.0};
    EXPECT_NEAR(normalized_entropy(p), 0.5, 1e-12);
}

TEST(NormalizedEntropy, Errors) {
    EXPECT_THROW(normalized_entropy(std::vector<double>{1.0}), std::invalid_argument);
    EXPECT_THROW(normalized_entropy(std::vector<double>{0.7, 0.7}), std::invalid_argument);
    EXPECT_THROW(normalized_entropy(std::vector<double>{1.2, -0.2}), std::invalid_argument);
}

TEST(NormalizedEntropy, PermutationInvariantAndMaxOnlyAtUniform) {
    std::vector<double> p{0.1, 0.4, 0.2, 0.3};
    std::vector<double> shuffled{0.3, 0.1, 0.4, 0.2};
    EXPECT_NEAR(normalized_entropy(p), normalized_entropy(shuffled), 1e-12);
    std::vector<double> near_uniform{0.26, 0.24, 0.26, 0.24};
    EXPECT_LT(normalized_entropy(near_uniform), 1.0 - 1e-9);
}

TEST(TopKDesc, DirectOrdering) {
    const std::vector<double> s{0.9, 0.1, 0.5};
    EXPECT_EQ(top_k_desc(s, 2), (std::vector<std::size_t>{0, 2}));
}

TEST(TopKDesc, TieBreakByIndex) {
    const std::vector<double> s{0.4, 0.4, 0.4};
    EXPECT_EQ(top_k_desc(s, 2), (std::vector<std::size_t>{0, 1}));
}

TEST(TopKDesc, MatchesFullSortOraclePrefix) {
    std::mt19937 rng(41);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> s(100);
    for (auto& x : s) x = dist(rng);
    const auto got = top_k_desc(s, 10);

    std::vector<std::size_t> oracle(s.size());
    std::iota(oracle.begin(), oracle.end(), std::size_t{0});
    std::stable_sort(oracle.begin(), oracle.end(),
                     [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    oracle.resize(10);
    EXPECT_EQ(got, oracle);
}

TEST(TopKDesc, ClampsAndRejectsZeroK) {
    const std::vector<double> s{0.3, 0.7};
    EXPECT_EQ(top_k_desc(s, 10), (std::vector<std::size_t>{1, 0}));
    EXPECT_THROW(top_k_desc(s, 0), std::invalid_argument);
}

TEST(TopKDesc, DeterministicAcrossRuns) {
    std::mt19937 rng(43);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> s(64);
    for (auto& x : s) x = dist(rng);
    const auto a = top_k_desc(s, 16);
    const auto b = top_k_desc(s, 16);
    EXPECT_EQ(a, b);
}
