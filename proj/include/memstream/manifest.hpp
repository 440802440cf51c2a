#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "memstream/analysis.hpp"
#include "memstream/compression.hpp"
#include "memstream/kv_store.hpp"
#include "memstream/retrieval.hpp"
#include "memstream/stream_encoder.hpp"
#include "memstream/tensor_io.hpp"
#include "memstream/toy_model.hpp"

namespace memstream {

// Stream manifest (JSON) -- file-level description of a feature stream.
// Frames either point at a raw input-feature tensor (projected through the
// toy model at encode time) or at per-layer Q/K/V tensors exported from a
// real model by any external tool. Questions follow the same convention.

struct LayerTensorPaths {
    std::string q, k, v;
};

struct ManifestFrame {
    std::size_t index = 0;
    std::size_t grid_h = 0, grid_w = 0;
    std::string input_path;                     // toy route
    std::vector<LayerTensorPaths> layer_paths;  // ingested route
};

struct ManifestQuestion {
    std::string id;
    std::string input_path;
    std::vector<LayerTensorPaths> layer_paths;
    std::vector<std::size_t> clue_frames_raw;  // raw frame indices
};

struct ExternalPaths {
    std::string frame_embeddings;
    std::string question_embeddings;
};

struct StreamManifest {
    std::string video_id;
    std::size_t temporal_patch = 2;
    ToyModelConfig model;
    std::vector<ManifestFrame> frames;
    std::vector<ManifestQuestion> questions;
    std::optional<ExternalPaths> external;
    std::filesystem::path base_dir;  // directory of the manifest file, set on load
};

// Run configuration: strategy, window budget, retrieval settings, seed.

struct RunConfig {
    CompressionStrategy strategy = Full{};
    WindowBudget window;
    std::size_t retrieval_budget = 64;
    RetrievalMode mode = RetrievalMode::Internal;
    FusionMethod fusion = FusionMethod::Rrf;
    double rrf_k = 60.0;
    std::vector<double> expert_weights;
    std::uint64_t seed = 0;
    std::optional<SpillConfig> spill;
};

inline nlohmann::json strategy_to_json(const CompressionStrategy& s) {
    nlohmann::json j;
    j["name"] = strategy_name(s);
    if (const auto* p = std::get_if<Pool>(&s)) j["kernel"] = p->kernel;
    if (const auto* p = std::get_if<Dilated>(&s)) j["stride"] = p->stride;
    if (const auto* p = std::get_if<UniformFrames>(&s)) j["keep"] = p->keep;
    if (const auto* p = std::get_if<TokenMerge>(&s)) j["merges"] = p->merges;
    if (const auto* p = std::get_if<KMeansFrames>(&s)) j["centroids"] = p->centroids;
    if (const auto* p = std::get_if<TemporalChange>(&s)) j["keep"] = p->keep;
    if (const auto* p = std::get_if<AdaptiveKeySelect>(&s)) {
        j["keep"] = p->keep;
        j["keep_ratio"] = p->keep_ratio;
    }
    return j;
}

inline CompressionStrategy strategy_from_json(const nlohmann::json& j) {
    const std::string name = j.at("name").get<std::string>();
    CompressionStrategy s;
    if (name == "full") {
        s = Full{};
    } else if (name == "pool") {
        s = Pool{j.value("kernel", std::size_t{2})};
    } else if (name == "dilated") {
        s = Dilated{j.value("stride", std::size_t{2})};
    } else if (name == "uniform_frames") {
        s = UniformFrames{j.value("keep", std::size_t{8})};
    } else if (name == "token_merge") {
        s = TokenMerge{j.value("merges", std::size_t{0})};
    } else if (name == "kmeans_frames") {
        s = KMeansFrames{j.value("centroids", std::size_t{8})};
    } else if (name == "temporal_change") {
        s = TemporalChange{j.value("keep", std::size_t{8})};
    } else if (name == "aks") {
        s = AdaptiveKeySelect{j.value("keep", std::size_t{0}), j.value("keep_ratio", 1.0 / 16.0)};
    } else {
        throw std::invalid_argument("unknown strategy name: " + name);
    }
    validate_strategy(s);
    return s;
}

inline std::string mode_name(RetrievalMode m) {
    switch (m) {
        case RetrievalMode::Internal: return "internal";
        case RetrievalMode::External: return "external";
        case RetrievalMode::MoE: return "moe";
    }
    throw std::logic_error("mode_name: bad enum");
}

inline RetrievalMode mode_from_name(const std::string& s) {
    if (s == "internal") return RetrievalMode::Internal;
    if (s == "external") return RetrievalMode::External;
    if (s == "moe") return RetrievalMode::MoE;
    throw std::invalid_argument("unknown retrieval mode: " + s);
}

inline std::string fusion_name(FusionMethod f) {
    return f == FusionMethod::Rrf ? "rrf" : "l2concat";
}

inline FusionMethod fusion_from_name(const std::string& s) {
    if (s == "rrf") return FusionMethod::Rrf;
    if (s == "l2concat") return FusionMethod::L2Concat;
    throw std::invalid_argument("unknown fusion method: " + s);
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["strategy"] = strategy_to_json(cfg.strategy);
    j["window"] = {{"kind", cfg.window.kind == WindowBudget::Kind::Tokens ? "tokens" : "frames"},
                   {"value", cfg.window.value}};
    j["retrieval_budget"] = cfg.retrieval_budget;
    j["retrieval_mode"] = mode_name(cfg.mode);
    j["fusion"] = fusion_name(cfg.fusion);
    j["rrf_k"] = cfg.rrf_k;
    if (!cfg.expert_weights.empty()) j["expert_weights"] = cfg.expert_weights;
    j["seed"] = cfg.seed;
    if (cfg.spill)
        j["spill"] = {{"dir", cfg.spill->dir.string()},
                      {"threshold_bytes", cfg.spill->threshold_bytes}};
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    if (j.contains("strategy")) cfg.strategy = strategy_from_json(j.at("strategy"));
    if (j.contains("window")) {
        const auto& w = j.at("window");
        cfg.window.kind = w.at("kind").get<std::string>() == "frames" ? WindowBudget::Kind::Frames
                                                                      : WindowBudget::Kind::Tokens;
        cfg.window.value = w.at("value").get<std::uint64_t>();
    }
    cfg.retrieval_budget = j.value("retrieval_budget", std::size_t{64});
    if (cfg.retrieval_budget == 0)
        throw std::invalid_argument("RunConfig: retrieval_budget must be >= 1");
    if (j.contains("retrieval_mode")) cfg.mode = mode_from_name(j.at("retrieval_mode"));
    if (j.contains("fusion")) cfg.fusion = fusion_from_name(j.at("fusion"));
    cfg.rrf_k = j.value("rrf_k", 60.0);
    if (j.contains("expert_weights"))
        cfg.expert_weights = j.at("expert_weights").get<std::vector<double>>();
    cfg.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("spill") && !j.at("spill").is_null()) {
        SpillConfig sp;
        sp.dir = j.at("spill").at("dir").get<std::string>();
        sp.threshold_bytes = j.at("spill").value("threshold_bytes", std::uint64_t{0});
        cfg.spill = sp;
    }
    return cfg;
}

/// Canonical config serialization; its hash tags every exported report file.
inline std::string canonical_config_json(const RunConfig& cfg) {
    return run_config_to_json(cfg).dump();
}

inline nlohmann::json toy_config_to_json(const ToyModelConfig& cfg) {
    nlohmann::json j;
    j["layers"] = cfg.layers;
    j["heads"] = cfg.heads;
    j["head_dim"] = cfg.head_dim;
    j["tokens_per_frame"] = cfg.tokens_per_frame;
    if (!cfg.token_schedule.empty()) j["token_schedule"] = cfg.token_schedule;
    j["question_tokens"] = cfg.question_tokens;
    j["input_dim"] = cfg.input_dim;
    j["external_dim"] = cfg.external_dim;
    j["token_noise"] = cfg.token_noise;
    j["seed"] = cfg.seed;
    return j;
}

inline ToyModelConfig toy_config_from_json(const nlohmann::json& j) {
    ToyModelConfig cfg;
    cfg.layers = j.value("layers", cfg.layers);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.head_dim = j.value("head_dim", cfg.head_dim);
    cfg.tokens_per_frame = j.value("tokens_per_frame", cfg.tokens_per_frame);
    if (j.contains("token_schedule"))
        cfg.token_schedule = j.at("token_schedule").get<std::vector<std::size_t>>();
    cfg.question_tokens = j.value("question_tokens", cfg.question_tokens);
    cfg.input_dim = j.value("input_dim", cfg.input_dim);
    cfg.external_dim = j.value("external_dim", cfg.external_dim);
    cfg.token_noise = j.value("token_noise", cfg.token_noise);
    cfg.seed = j.value("seed", cfg.seed);
    validate_toy_config(cfg);
    return cfg;
}

namespace detail {

inline std::filesystem::path resolve(const StreamManifest& m, const std::string& rel) {
    return m.base_dir.empty() ? std::filesystem::path(rel) : m.base_dir / rel;
}

inline void check_dims(const std::filesystem::path& path, const std::vector<std::uint64_t>& want) {
    const auto dims = read_tensor_dims(path);
    if (dims != want) {
        std::string msg = "manifest validation: " + path.string() + " has dims [";
        for (std::size_t i = 0; i < dims.size(); ++i)
            msg += (i ? "," : "") + std::to_string(dims[i]);
        msg += "], expected [";
        for (std::size_t i = 0; i < want.size(); ++i)
            msg += (i ? "," : "") + std::to_string(want[i]);
        msg += "]";
        throw std::invalid_argument(msg);
    }
}

}  // namespace detail

/// Rejects any shape inconsistency before computation begins. Reads tensor
/// headers only, never payloads.
inline void validate_manifest(const StreamManifest& m) {
    validate_toy_config(m.model);
    if (m.temporal_patch == 0)
        throw std::invalid_argument("manifest validation: temporal_patch must be >= 1");
    const std::uint64_t feature_dim = m.model.feature_dim();

    for (std::size_t i = 0; i < m.frames.size(); ++i) {
        const auto& f = m.frames[i];
        // frame index doubles as the feature index everywhere (scores,
        // external embedding rows, clue annotations), so it must equal the
        // position in the stream
        if (f.index != i)
            throw std::invalid_argument("manifest validation: frame indices must be 0-based and consecutive");
        if (f.grid_h * f.grid_w == 0)
            throw std::invalid_argument("manifest validation: empty grid at frame " +
                                        std::to_string(f.index));
        const std::uint64_t tokens = f.grid_h * f.grid_w;
        if (!f.input_path.empty() == !f.layer_paths.empty())
            throw std::invalid_argument(
                "manifest validation: frame needs exactly one of input or layers");
        if (!f.input_path.empty()) {
            detail::check_dims(detail::resolve(m, f.input_path), {m.model.input_dim});
        } else {
            if (f.layer_paths.size() != m.model.layers)
                throw std::invalid_argument("manifest validation: frame layer count mismatch");
            for (const auto& lp : f.layer_paths) {
                detail::check_dims(detail::resolve(m, lp.q), {tokens, feature_dim});
                detail::check_dims(detail::resolve(m, lp.k), {tokens, feature_dim});
                detail::check_dims(detail::resolve(m, lp.v), {tokens, feature_dim});
            }
        }
    }

    for (const auto& q : m.questions) {
        if (q.id.empty())
            throw std::invalid_argument("manifest validation: question with empty id");
        if (!q.input_path.empty() == !q.layer_paths.empty())
            throw std::invalid_argument(
                "manifest validation: question needs exactly one of input or layers");
        if (!q.input_path.empty()) {
            detail::check_dims(detail::resolve(m, q.input_path), {m.model.input_dim});
        } else {
            if (q.layer_paths.size() != m.model.layers)
                throw std::invalid_argument("manifest validation: question layer count mismatch");
            for (const auto& lp : q.layer_paths) {
                const auto qdims = read_tensor_dims(detail::resolve(m, lp.q));
                if (qdims.size() != 2 || qdims[1] != feature_dim || qdims[0] == 0)
                    throw std::invalid_argument("manifest validation: bad question tensor shape");
                detail::check_dims(detail::resolve(m, lp.k), {qdims[0], feature_dim});
                detail::check_dims(detail::resolve(m, lp.v), {qdims[0], feature_dim});
            }
        }
        for (std::size_t raw : q.clue_frames_raw)
            if (raw / m.temporal_patch >= m.frames.size())
                throw std::invalid_argument("manifest validation: clue frame beyond stream end");
    }

    if (m.external) {
        const auto fdims = read_tensor_dims(detail::resolve(m, m.external->frame_embeddings));
        if (fdims.size() != 2 || fdims[0] != m.frames.size())
            throw std::invalid_argument("manifest validation: frame embedding count mismatch");
        detail::check_dims(detail::resolve(m, m.external->question_embeddings),
                           {m.questions.size(), fdims[1]});
    }
}

inline StreamManifest manifest_from_json(const nlohmann::json& j) {
    StreamManifest m;
    m.video_id = j.value("video_id", std::string{});
    m.temporal_patch = j.value("temporal_patch", std::size_t{2});
    m.model = toy_config_from_json(j.at("model"));
    for (const auto& jf : j.at("frames")) {
        ManifestFrame f;
        f.index = jf.at("index").get<std::size_t>();
        f.grid_h = jf.at("grid").at(0).get<std::size_t>();
        f.grid_w = jf.at("grid").at(1).get<std::size_t>();
        f.input_path = jf.value("input", std::string{});
        if (jf.contains("layers")) {
            for (const auto& jl : jf.at("layers"))
                f.layer_paths.push_back({jl.at("q").get<std::string>(),
                                         jl.at("k").get<std::string>(),
                                         jl.at("v").get<std::string>()});
        }
        m.frames.push_back(std::move(f));
    }
    for (const auto& jq : j.value("questions", nlohmann::json::array())) {
        ManifestQuestion q;
        q.id = jq.at("id").get<std::string>();
        q.input_path = jq.value("input", std::string{});
        if (jq.contains("layers")) {
            for (const auto& jl : jq.at("layers"))
                q.layer_paths.push_back({jl.at("q").get<std::string>(),
                                         jl.at("k").get<std::string>(),
                                         jl.at("v").get<std::string>()});
        }
        if (jq.contains("clue_frames"))
            q.clue_frames_raw = jq.at("clue_frames").get<std::vector<std::size_t>>();
        m.questions.push_back(std::move(q));
    }
    if (j.contains("external") && !j.at("external").is_null()) {
        ExternalPaths ext;
        ext.frame_embeddings = j.at("external").at("frame_embeddings").get<std::string>();
        ext.question_embeddings = j.at("external").at("question_embeddings").get<std::string>();
        m.external = std::move(ext);
    }
    return m;
}

inline nlohmann::json manifest_to_json(const StreamManifest& m) {
    nlohmann::json j;
    j["video_id"] = m.video_id;
    j["temporal_patch"] = m.temporal_patch;
    j["model"] = toy_config_to_json(m.model);
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : m.frames) {
        nlohmann::json jf;
        jf["index"] = f.index;
        jf["grid"] = {f.grid_h, f.grid_w};
        if (!f.input_path.empty()) jf["input"] = f.input_path;
        if (!f.layer_paths.empty()) {
            nlohmann::json layers = nlohmann::json::array();
            for (const auto& lp : f.layer_paths)
                layers.push_back({{"q", lp.q}, {"k", lp.k}, {"v", lp.v}});
            jf["layers"] = std::move(layers);
        }
        frames.push_back(std::move(jf));
    }
    j["frames"] = std::move(frames);
    nlohmann::json questions = nlohmann::json::array();
    for (const auto& q : m.questions) {
        nlohmann::json jq;
        jq["id"] = q.id;
        if (!q.input_path.empty()) jq["input"] = q.input_path;
        if (!q.layer_paths.empty()) {
            nlohmann::json layers = nlohmann::json::array();
            for (const auto& lp : q.layer_paths)
                layers.push_back({{"q", lp.q}, {"k", lp.k}, {"v", lp.v}});
            jq["layers"] = std::move(layers);
        }
        jq["clue_frames"] = q.clue_frames_raw;
        questions.push_back(std::move(jq));
    }
    j["questions"] = std::move(questions);
    if (m.external)
        j["external"] = {{"frame_embeddings", m.external->frame_embeddings},
                         {"question_embeddings", m.external->question_embeddings}};
    return j;
}

inline StreamManifest load_stream_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("load_stream_manifest: cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_stream_manifest: parse error in " + path.string() + ": " +
                                 e.what());
    }
    StreamManifest m = manifest_from_json(j);
    m.base_dir = path.parent_path();
    validate_manifest(m);
    return m;
}

inline void save_stream_manifest(const StreamManifest& m, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("save_stream_manifest: cannot open " + path.string());
    os << manifest_to_json(m).dump(2) << "\n";
}

/// Near-square spatial grid for a token count (h * w == tokens exactly).
inline std::pair<std::size_t, std::size_t> grid_for_tokens(std::size_t tokens) {
    std::size_t h = std::size_t(std::sqrt(double(tokens)));
    while (h > 1 && tokens % h != 0) --h;
    return {h, tokens / h};
}

/// Projected Q/K/V for one manifest frame (toy route projects the raw input;
/// ingested route reads the per-layer tensors).
inline StreamFrame materialize_frame(const StreamManifest& m, std::size_t position) {
    const ManifestFrame& f = m.frames.at(position);
    StreamFrame frame;
    frame.frame_index = f.index;
    frame.grid_h = f.grid_h;
    frame.grid_w = f.grid_w;
    if (!f.input_path.empty()) {
        const TensorData input = read_tensor(detail::resolve(m, f.input_path));
        const std::size_t tokens = f.grid_h * f.grid_w;
        for (std::size_t layer = 0; layer < m.model.layers; ++layer)
            frame.layers.push_back(project_frame(input.values, layer, tokens, m.model));
    } else {
        for (const auto& lp : f.layer_paths) {
            LayerQKV qkv;
            qkv.q = read_matrix(detail::resolve(m, lp.q));
            qkv.k = read_matrix(detail::resolve(m, lp.k));
            qkv.v = read_matrix(detail::resolve(m, lp.v));
            frame.layers.push_back(std::move(qkv));
        }
    }
    return frame;
}

inline QuestionFeatures materialize_question(const StreamManifest& m, const ManifestQuestion& q) {
    QuestionFeatures feat;
    feat.id = q.id;
    if (!q.input_path.empty()) {
        const TensorData input = read_tensor(detail::resolve(m, q.input_path));
        for (std::size_t layer = 0; layer < m.model.layers; ++layer)
            feat.layers.push_back(project_question(input.values, layer, m.model));
    } else {
        for (const auto& lp : q.layer_paths) {
            LayerQKV qkv;
            qkv.q = read_matrix(detail::resolve(m, lp.q));
            qkv.k = read_matrix(detail::resolve(m, lp.k));
            qkv.v = read_matrix(detail::resolve(m, lp.v));
            feat.layers.push_back(std::move(qkv));
        }
    }
    return feat;
}

inline ExternalEmbeddings load_external_embeddings(const StreamManifest& m) {
    if (!m.external)
        throw std::invalid_argument("load_external_embeddings: manifest has no external block");
    ExternalEmbeddings emb;
    const Matrix frames = read_matrix(detail::resolve(m, m.external->frame_embeddings));
    for (std::size_t t = 0; t < frames.rows; ++t)
        emb.frames.emplace_back(frames.row(t).begin(), frames.row(t).end());
    const Matrix questions = read_matrix(detail::resolve(m, m.external->question_embeddings));
    if (questions.rows != m.questions.size())
        throw std::invalid_argument("load_external_embeddings: question embedding count mismatch");
    for (std::size_t i = 0; i < questions.rows; ++i)
        emb.questions[m.questions[i].id] = Vector(questions.row(i).begin(), questions.row(i).end());
    return emb;
}

inline ClueAnnotation clue_annotation(const StreamManifest& m, const ManifestQuestion& q) {
    return ClueAnnotation{q.id, clue_features_from_raw(q.clue_frames_raw, m.temporal_patch)};
}

/// Writes a generated benchmark as manifest + tensor files so the same files
/// drive the full encode/query/eval pipeline.
inline StreamManifest write_benchmark(const SyntheticBenchmark& bench,
                                      const std::filesystem::path& dir, const std::string& video_id,
                                      std::size_t temporal_patch = 2) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "questions");
    fs::create_directories(dir / "external");

    StreamManifest m;
    m.video_id = video_id;
    m.temporal_patch = temporal_patch;
    m.model = bench.model;
    m.base_dir = dir;

    Matrix ext_frames(bench.frame_inputs.size(), bench.model.external_dim);
    for (std::size_t t = 0; t < bench.frame_inputs.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "f%06zu.mstn", t);
        const std::string rel = std::string("frames/") + name;
        const std::uint64_t dims[1] = {bench.model.input_dim};
        write_tensor(dir / rel, dims, bench.frame_inputs[t]);

        ManifestFrame f;
        f.index = t;
        const auto [h, w] = grid_for_tokens(bench.model.tokens_for_frame(t));
        f.grid_h = h;
        f.grid_w = w;
        f.input_path = rel;
        m.frames.push_back(std::move(f));

        const Vector e = external_encode(bench.frame_inputs[t], bench.model);
        for (std::size_t c = 0; c < e.size(); ++c) ext_frames.at(t, c) = e[c];
    }

    Matrix ext_questions(bench.questions.size(), bench.model.external_dim);
    for (std::size_t i = 0; i < bench.questions.size(); ++i) {
        const auto& q = bench.questions[i];
        const std::string rel = "questions/" + q.id + ".mstn";
        const std::uint64_t dims[1] = {bench.model.input_dim};
        write_tensor(dir / rel, dims, q.concept_input);

        ManifestQuestion mq;
        mq.id = q.id;
        mq.input_path = rel;
        for (std::size_t feature : q.clue_features)
            mq.clue_frames_raw.push_back(feature * temporal_patch);
        m.questions.push_back(std::move(mq));

        const Vector e = external_encode(q.concept_input, bench.model);
        for (std::size_t c = 0; c < e.size(); ++c) ext_questions.at(i, c) = e[c];
    }

    write_matrix(dir / "external/frames.mstn", ext_frames);
    write_matrix(dir / "external/questions.mstn", ext_questions);
    m.external = ExternalPaths{"external/frames.mstn", "external/questions.mstn"};

    save_stream_manifest(m, dir / "manifest.json");
    return m;
}

}  // namespace memstream
