#include "memstream/retrieval.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace memstream;

namespace {

// Store whose representative vectors are exactly the given per-frame vectors:
// every frame is a single token whose keys equal the vector.
TieredCacheStore store_with_reps(const std::vector<std::vector<Vector>>& reps_per_layer,
                                 std::size_t heads, std::size_t head_dim) {
    StoreConfig cfg;
    cfg.layer_count = reps_per_layer.size();
    cfg.head_count = heads;
    cfg.head_dim = head_dim;
    cfg.budget = {WindowBudget::Kind::Frames, 1};
    TieredCacheStore store(cfg);
    std::mt19937 rng(7777);
    for (std::size_t layer = 0; layer < reps_per_layer.size(); ++layer) {
        for (std::size_t t = 0; t < reps_per_layer[layer].size(); ++t) {
            FrameKV f;
            f.frame_index = t;
            f.layer = layer;
            f.grid_h = 1;
            f.grid_w = 1;
            f.head_count = heads;
            f.head_dim = head_dim;
            f.keys = Matrix(1, heads * head_dim);
            for (std::size_t c = 0; c < f.keys.cols; ++c) f.keys.at(0, c) = reps_per_layer[layer][t][c];
            f.values = testutil::random_matrix(rng, 1, heads * head_dim);
            store.append_frame(layer, std::move(f));
        }
    }
    store.flush();
    return store;
}

std::vector<Vector> basis_vectors(std::size_t count, std::size_t dim) {
    std::vector<Vector> out;
    for (std::size_t t = 0; t < count; ++t) {
        Vector v(dim, 0.0f);
        v[t % dim] = 1.0f;
        out.push_back(std::move(v));
    }
    return out;
}

QuestionFeatures question_with_query(const Vector& qbar, std::size_t layers, std::size_t dim,
                                     std::mt19937& rng) {
    QuestionFeatures q;
    q.id = "q0";
    for (std::size_t l = 0; l < layers; ++l) {
        LayerQKV qkv;
        qkv.q = Matrix(1, dim);
        for (std::size_t c = 0; c < dim; ++c) qkv.q.at(0, c) = qbar[c];
        qkv.k = testutil::random_matrix(rng, 1, dim);
        qkv.v = testutil::random_matrix(rng, 1, dim);
        q.layers.push_back(std::move(qkv));
    }
    return q;
}

}  // namespace

TEST(QuestionRepr, SingleTokenIsItsRow) {
    Matrix q(1, 3, {0.5f, -1.0f, 2.0f});
    EXPECT_EQ(question_repr(q), (Vector{0.5f, -1.0f, 2.0f}));
}

TEST(QuestionRepr, TwoTokenMean) {
    Matrix q(2, 2, {1.0f, 0.0f, 0.0f, 1.0f});
    EXPECT_EQ(question_repr(q), (Vector{0.5f, 0.5f}));
}

TEST(QuestionRepr, MatchesMeanOracle) {
    std::mt19937 rng(1);
    const Matrix q = testutil::random_matrix(rng, 5, 6);
    const Vector got = question_repr(q);
    for (std::size_t c = 0; c < 6; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < 5; ++r) acc += q.at(r, c);
        EXPECT_NEAR(got[c], acc / 5.0, 1e-7);
    }
    EXPECT_THROW(question_repr(Matrix(0, 3)), std::invalid_argument);
}

TEST(InternalScores, PlantedMatchScoresOne) {
    const std::size_t dim = 8;
    auto store = store_with_reps({basis_vectors(8, dim)}, 2, 4);
    Vector qbar(dim, 0.0f);
    qbar[5] = 1.0f;
    const auto scores = internal_scores(store, 0, qbar);
    ASSERT_EQ(scores.size(), 8u);
    for (std::size_t t = 0; t < 8; ++t)
        EXPECT_NEAR(scores[t], t == 5 ? 1.0 : 0.0, 1e-12);
}

TEST(InternalScores, ConstantRepsGiveConstantScores) {
    std::vector<Vector> reps(6, Vector{1.0f, 2.0f, 3.0f, 4.0f});
    auto store = store_with_reps({reps}, 1, 4);
    Vector qbar{0.3f, -0.2f, 0.9f, 0.1f};
    const auto scores = internal_scores(store, 0, qbar);
    for (double s : scores) EXPECT_NEAR(s, scores[0], 1e-12);
    // downstream tie-break picks lowest indices
    EXPECT_EQ(top_k_desc(scores, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(InternalScores, MatchesLoopOracle) {
    std::mt19937 rng(2);
    std::vector<Vector> reps;
    for (int t = 0; t < 10; ++t) reps.push_back(testutil::random_vector(rng, 8));
    auto store = store_with_reps({reps}, 2, 4);
    const Vector qbar = testutil::random_vector(rng, 8);
    const auto scores = internal_scores(store, 0, qbar);
    for (std::size_t t = 0; t < reps.size(); ++t)
        EXPECT_NEAR(scores[t], cosine_sim(qbar, reps[t]), 1e-6);
}

TEST(ExternalScores, PlantedConstantAndOracle) {
    std::mt19937 rng(3);
    ExternalEmbeddings emb;
    emb.frames = basis_vectors(6, 6);
    emb.questions["planted"] = emb.frames[4];
    const auto planted = external_scores(emb, "planted");
    for (std::size_t t = 0; t < 6; ++t) EXPECT_NEAR(planted[t], t == 4 ? 1.0 : 0.0, 1e-12);

    emb.frames.assign(5, Vector{1.0f, 1.0f, 0.0f, 0.0f, 0.0f, 0.0f});
    const auto constant = external_scores(emb, "planted");
    for (double s : constant) EXPECT_NEAR(s, constant[0], 1e-12);

    ExternalEmbeddings emb2;
    for (int t = 0; t < 7; ++t) emb2.frames.push_back(testutil::random_vector(rng, 5));
    emb2.questions["q"] = testutil::random_vector(rng, 5);
    const auto scores = external_scores(emb2, "q");
    for (std::size_t t = 0; t < 7; ++t)
        EXPECT_NEAR(scores[t], cosine_sim(emb2.questions["q"], emb2.frames[t]), 1e-12);

    EXPECT_THROW(external_scores(emb2, "missing"), std::out_of_range);
}

TEST(RrfFuse, HandEvaluatedTopRank) {
    // frame 0 ranked first by both experts: 2/61
    Ranking a = Ranking::from_scores("a", {0.9, 0.5, 0.1});
    Ranking b = Ranking::from_scores("b", {0.8, 0.2, 0.4});
    const Ranking experts[2] = {a, b};
    const auto fused = rrf_fuse(experts, 60.0);
    EXPECT_NEAR(fused[0], 2.0 / 61.0, 1e-12);
    EXPECT_NEAR(fused[0], 0.0327869, 1e-7);
}

TEST(RrfFuse, SingleExpertPreservesOrdering) {
    std::mt19937 rng(4);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> scores(20);
    for (auto& s : scores) s = dist(rng);
    const Ranking experts[1] = {Ranking::from_scores("only", scores)};
    const auto fused = rrf_fuse(experts, 60.0);
    EXPECT_EQ(top_k_desc(fused, 20), top_k_desc(scores, 20));
}

TEST(RrfFuse, HandEvaluatedMixedRanks) {
    // frame ranked 2 by one expert and 5 by the other: 1/62 + 1/65
    Ranking a = Ranking::from_scores("a", {0.9, 0.8, 0.7, 0.6, 0.5});  // frame 1 -> rank 2
    Ranking b = Ranking::from_scores("b", {0.9, 0.1, 0.8, 0.7, 0.6});  // frame 1 -> rank 5
    const Ranking experts[2] = {a, b};
    const auto fused = rrf_fuse(experts, 60.0);
    EXPECT_NEAR(fused[1], 1.0 / 62.0 + 1.0 / 65.0, 1e-12);
    EXPECT_NEAR(fused[1], 0.0315136, 1e-7);
}

TEST(RrfFuse, ScaleInvarianceOfExpertScores) {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> dist(0.1, 1.0);
    std::vector<double> a(30), b(30);
    for (auto& x : a) x = dist(rng);
    for (auto& x : b) x = dist(rng);
    std::vector<double> a_scaled = a;
    for (auto& x : a_scaled) x *= 17.5;

    const Ranking experts[2] = {Ranking::from_scores("a", a), Ranking::from_scores("b", b)};
    const Ranking scaled[2] = {Ranking::from_scores("a", a_scaled), Ranking::from_scores("b", b)};
    EXPECT_EQ(rrf_fuse(experts, 60.0), rrf_fuse(scaled, 60.0));
}

TEST(RrfFuse, AgreementDominance) {
    std::mt19937 rng(6);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(12), b(12);
        for (auto& x : a) x = dist(rng);
        for (auto& x : b) x = dist(rng);
        const Ranking experts[2] = {Ranking::from_scores("a", a), Ranking::from_scores("b", b)};
        const auto fused = rrf_fuse(experts, 60.0);
        for (std::size_t i = 0; i < 12; ++i) {
            for (std::size_t j = 0; j < 12; ++j) {
                if (experts[0].rank_of[i] < experts[0].rank_of[j] &&
                    experts[1].rank_of[i] < experts[1].rank_of[j]) {
                    EXPECT_GT(fused[i], fused[j]);
                }
            }
        }
    }
}

TEST(RrfFuse, OptionalWeights) {
    Ranking a = Ranking::from_scores("a", {0.9, 0.1});
    Ranking b = Ranking::from_scores("b", {0.1, 0.9});
    const Ranking experts[2] = {a, b};
    const double weights[2] = {2.0, 1.0};
    const auto fused = rrf_fuse(experts, 60.0, weights);
    EXPECT_NEAR(fused[0], 2.0 / 61.0 + 1.0 / 62.0, 1e-12);
    EXPECT_NEAR(fused[1], 2.0 / 62.0 + 1.0 / 61.0, 1e-12);
}

TEST(RrfFuse, Errors) {
    EXPECT_THROW(rrf_fuse({}, 60.0), std::invalid_argument);
    Ranking a = Ranking::from_scores("a", {0.9, 0.1});
    Ranking b = Ranking::from_scores("b", {0.1, 0.9, 0.5});
    const Ranking experts[2] = {a, b};
    EXPECT_THROW(rrf_fuse(experts, 60.0), std::invalid_argument);
}

TEST(L2ConcatFuse, IdenticalPairsScoreOne) {
    std::vector<Vector> reps{{1.0f, 2.0f}, {0.5f, 0.5f}};
    std::vector<Vector> embs{{3.0f, 1.0f}, {0.2f, 0.9f}};
    const auto scores = l2_concat_fuse(reps[0], reps, embs[0], embs);
    EXPECT_NEAR(scores[0], 1.0, 1e-6);
    EXPECT_LT(scores[1], 1.0);
}

TEST(L2ConcatFuse, ConstantModalityDefersToTheOther) {
    std::mt19937 rng(7);
    std::vector<Vector> reps(8, Vector{1.0f, 1.0f, 1.0f, 1.0f});  // internal constant
    std::vector<Vector> embs;
    for (int t = 0; t < 8; ++t) embs.push_back(testutil::random_vector(rng, 6));
    const Vector q_int{2.0f, 0.0f, 1.0f, 0.5f};
    const Vector q_ext = testutil::random_vector(rng, 6);
    const auto fused = l2_concat_fuse(q_int, reps, q_ext, embs);

    std::vector<double> external_only;
    for (const auto& e : embs) external_only.push_back(cosine_sim(q_ext, e));
    EXPECT_EQ(top_k_desc(fused, 8), top_k_desc(external_only, 8));
}

TEST(L2ConcatFuse, EqualsMeanOfPerModalityCosines) {
    std::mt19937 rng(8);
    std::vector<Vector> reps, embs;
    for (int t = 0; t < 10; ++t) {
        reps.push_back(testutil::random_vector(rng, 6));
        embs.push_back(testutil::random_vector(rng, 4));
    }
    const Vector q_int = testutil::random_vector(rng, 6);
    const Vector q_ext = testutil::random_vector(rng, 4);
    const auto fused = l2_concat_fuse(q_int, reps, q_ext, embs);
    for (std::size_t t = 0; t < 10; ++t) {
        const double mean = 0.5 * (cosine_sim(q_int, reps[t]) + cosine_sim(q_ext, embs[t]));
        EXPECT_NEAR(fused[t], mean, 1e-6);
    }
}

TEST(Retrieve, SmallStreamsRetrieveEverythingInEveryMode) {
    std::mt19937 rng(9);
    const std::size_t dim = 8, frames = 5;
    std::vector<Vector> reps;
    for (std::size_t t = 0; t < frames; ++t) reps.push_back(testutil::random_vector(rng, dim));
    auto store = store_with_reps({reps, reps}, 2, 4);

    ExternalEmbeddings emb;
    for (std::size_t t = 0; t < frames; ++t) emb.frames.push_back(testutil::random_vector(rng, 4));
    emb.questions["q0"] = testutil::random_vector(rng, 4);

    const QuestionFeatures q = question_with_query(testutil::random_vector(rng, dim), 2, dim, rng);
    const std::vector<std::size_t> all{0, 1, 2, 3, 4};
    for (RetrievalMode mode : {RetrievalMode::Internal, RetrievalMode::External, RetrievalMode::MoE}) {
        RetrievalConfig cfg;
        cfg.mode = mode;
        cfg.budget = 64;
        const auto result = retrieve(store, q, &emb, cfg);
        for (const auto& layer : result.per_layer) EXPECT_EQ(layer, all);
    }
}

TEST(Retrieve, ExternalModeSharesOneIndexSetAcrossLayers) {
    std::mt19937 rng(10);
    const std::size_t dim = 8, frames = 30;
    std::vector<std::vector<Vector>> reps(3);
    for (auto& layer : reps)
        for (std::size_t t = 0; t < frames; ++t) layer.push_back(testutil::random_vector(rng, dim));
    auto store = store_with_reps(reps, 2, 4);

    ExternalEmbeddings emb;
    for (std::size_t t = 0; t < frames; ++t) emb.frames.push_back(testutil::random_vector(rng, 4));
    emb.questions["q0"] = testutil::random_vector(rng, 4);

    RetrievalConfig cfg;
    cfg.mode = RetrievalMode::External;
    cfg.budget = 7;
    const QuestionFeatures q = question_with_query(testutil::random_vector(rng, dim), 3, dim, rng);
    const auto result = retrieve(store, q, &emb, cfg);
    EXPECT_EQ(result.per_layer[0].size(), 7u);
    EXPECT_EQ(result.per_layer[1], result.per_layer[0]);
    EXPECT_EQ(result.per_layer[2], result.per_layer[0]);
}

TEST(Retrieve, MoePlantedFrameSurvivesAdversarialInternalRanking) {
    // External ranks the planted frame first; internal ranks it dead last with
    // the remaining order reversed. RRF still pulls it into the budget.
    const std::size_t total = 100, planted = 37;
    std::vector<double> external(total), internal(total);
    for (std::size_t t = 0; t < total; ++t) {
        external[t] = (t == planted) ? 1000.0 : 900.0 - double(t);
        internal[t] = (t == planted) ? -1000.0 : double(t);
    }
    const Ranking experts[2] = {Ranking::from_scores("internal", internal),
                                Ranking::from_scores("external", external)};
    EXPECT_EQ(experts[1].rank_of[planted], 1u);
    EXPECT_EQ(experts[0].rank_of[planted], 100u);

    const auto fused = rrf_fuse(experts, 60.0);
    // brute-force oracle over the formula
    for (std::size_t t = 0; t < total; ++t) {
        const double expect =
            1.0 / (60.0 + double(experts[0].rank_of[t])) + 1.0 / (60.0 + double(experts[1].rank_of[t]));
        EXPECT_NEAR(fused[t], expect, 1e-15);
    }
    const auto kept = top_k_desc(fused, 10);
    EXPECT_NE(std::find(kept.begin(), kept.end(), planted), kept.end());
}

TEST(Retrieve, MoEEndToEndAgreesWithManualFusion) {
    std::mt19937 rng(11);
    const std::size_t dim = 8, frames = 40;
    std::vector<Vector> reps;
    for (std::size_t t = 0; t < frames; ++t) reps.push_back(testutil::random_vector(rng, dim));
    auto store = store_with_reps({reps}, 2, 4);

    ExternalEmbeddings emb;
    for (std::size_t t = 0; t < frames; ++t) emb.frames.push_back(testutil::random_vector(rng, 4));
    emb.questions["q0"] = testutil::random_vector(rng, 4);

    const Vector qbar = testutil::random_vector(rng, dim);
    const QuestionFeatures q = question_with_query(qbar, 1, dim, rng);

    RetrievalConfig cfg;
    cfg.mode = RetrievalMode::MoE;
    cfg.budget = 5;
    const auto result = retrieve(store, q, &emb, cfg);

    const Ranking experts[2] = {
        Ranking::from_scores("internal", internal_scores(store, 0, question_repr(q.layers[0].q))),
        Ranking::from_scores("external", external_scores(emb, "q0"))};
    auto expect = top_k_desc(rrf_fuse(experts, 60.0), 5);
    std::sort(expect.begin(), expect.end());
    EXPECT_EQ(result.per_layer[0], expect);

    // determinism
    const auto again = retrieve(store, q, &emb, cfg);
    EXPECT_EQ(again.per_layer, result.per_layer);
    EXPECT_EQ(again.scores_per_layer, result.scores_per_layer);
}

TEST(Retrieve, MissingInputsRejected) {
    std::mt19937 rng(12);
    auto store = store_with_reps({basis_vectors(4, 8)}, 2, 4);
    const QuestionFeatures q = question_with_query(basis_vectors(1, 8)[0], 1, 8, rng);
    RetrievalConfig cfg;
    cfg.mode = RetrievalMode::External;
    EXPECT_THROW(retrieve(store, q, nullptr, cfg), std::invalid_argument);
    cfg.mode = RetrievalMode::MoE;
    EXPECT_THROW(retrieve(store, q, nullptr, cfg), std::invalid_argument);
}

TEST(AnswerAttention, NoRetrievedFramesReducesToSelfAttention) {
    std::mt19937 rng(13);
    auto store = store_with_reps({basis_vectors(4, 8)}, 2, 4);
    QuestionFeatures q;
    q.id = "q0";
    LayerQKV qkv;
    qkv.q = testutil::random_matrix(rng, 3, 8);
    qkv.k = testutil::random_matrix(rng, 3, 8);
    qkv.v = testutil::random_matrix(rng, 3, 8);
    q.layers.push_back(qkv);

    RetrievalResult empty;
    empty.per_layer.resize(1);
    const auto outputs = answer_attention(q, empty, store);
    const auto expect = window_attention(qkv.q, Matrix(), Matrix(), qkv.k, qkv.v, 2);
    EXPECT_EQ(outputs[0], expect.output);
}

TEST(AnswerAttention, FullRetrievalMatchesDenseStreamOracle) {
    std::mt19937 rng(14);
    const std::size_t frames = 5, dim = 8;
    StoreConfig scfg;
    scfg.layer_count = 1;
    scfg.head_count = 2;
    scfg.head_dim = 4;
    scfg.budget = {WindowBudget::Kind::Tokens, 1ull << 40};
    TieredCacheStore store(scfg);
    std::vector<FrameKV> originals;
    for (std::size_t t = 0; t < frames; ++t) {
        auto f = testutil::make_frame(rng, t, 0, 2, 2, 2, 4);
        originals.push_back(f);
        store.append_frame(0, f);
    }
    store.flush();

    QuestionFeatures q;
    q.id = "q0";
    LayerQKV qkv;
    qkv.q = testutil::random_matrix(rng, 2, dim);
    qkv.k = testutil::random_matrix(rng, 2, dim);
    qkv.v = testutil::random_matrix(rng, 2, dim);
    q.layers.push_back(qkv);

    RetrievalResult all;
    all.per_layer.push_back({0, 1, 2, 3, 4});
    const auto outputs = answer_attention(q, all, store);

    Matrix keys, values;
    for (const auto& f : originals) {
        keys = vconcat(keys, f.keys);
        values = vconcat(values, f.values);
    }
    const auto oracle = window_attention(qkv.q, keys, values, qkv.k, qkv.v, 2);
    for (std::size_t i = 0; i < oracle.output.rows; ++i)
        for (std::size_t c = 0; c < oracle.output.cols; ++c)
            EXPECT_NEAR(outputs[0].at(i, c), oracle.output.at(i, c), 1e-5);

    // permuting the retrieval order does not change the result
    RetrievalResult permuted;
    permuted.per_layer.push_back({3, 0, 4, 1, 2});
    const auto outputs2 = answer_attention(q, permuted, store);
    EXPECT_EQ(outputs2[0], outputs[0]);
}
