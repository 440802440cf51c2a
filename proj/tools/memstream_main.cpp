// memstream -- streaming KV-cache memory engine CLI.
//
// Subcommands:
//   gen      generate a seeded synthetic benchmark (manifest + tensors)
//   encode   stream-encode a manifest into a cache file
//   query    retrieve frames and run answer attention for questions
//   eval     sweep all questions and export the analysis report
//   memsize  exact KV-cache size for a given model geometry

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "memstream/analysis.hpp"
#include "memstream/compression.hpp"
#include "memstream/kv_store.hpp"
#include "memstream/manifest.hpp"
#include "memstream/retrieval.hpp"
#include "memstream/stream_encoder.hpp"
#include "memstream/tensor_io.hpp"
#include "memstream/toy_model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigOverrides {
    std::string config_path;
    std::string strategy;
    std::optional<std::size_t> keep;
    std::optional<double> keep_ratio;
    std::optional<std::size_t> kernel;
    std::optional<std::size_t> stride;
    std::optional<std::size_t> merges;
    std::optional<std::size_t> centroids;
    std::optional<std::uint64_t> window_tokens;
    std::optional<std::uint64_t> window_frames;
    std::optional<std::size_t> budget;
    std::string mode;
    std::string fusion;
    std::optional<double> rrf_k;
    std::optional<std::uint64_t> seed;
    std::string spill_dir;
    std::optional<std::uint64_t> spill_threshold;
};

void add_config_flags(CLI::App* cmd, ConfigOverrides& ov) {
    cmd->add_option("--config", ov.config_path, "run-config JSON path");
    cmd->add_option("--strategy", ov.strategy,
                    "full|pool|dilated|uniform_frames|token_merge|kmeans_frames|temporal_change|aks");
    cmd->add_option("--keep", ov.keep, "keep count (uniform_frames/temporal_change/aks)");
    cmd->add_option("--keep-ratio", ov.keep_ratio, "aks keep ratio");
    cmd->add_option("--kernel", ov.kernel, "pool kernel");
    cmd->add_option("--stride", ov.stride, "dilated stride");
    cmd->add_option("--merges", ov.merges, "token_merge merges per frame");
    cmd->add_option("--centroids", ov.centroids, "kmeans_frames centroids");
    cmd->add_option("--window-tokens", ov.window_tokens, "window budget in full tokens");
    cmd->add_option("--window-frames", ov.window_frames, "window budget in frames");
    cmd->add_option("--budget", ov.budget, "retrieval budget (frame features)");
    cmd->add_option("--mode", ov.mode, "internal|external|moe");
    cmd->add_option("--fusion", ov.fusion, "rrf|l2concat");
    cmd->add_option("--rrf-k", ov.rrf_k, "RRF constant");
    cmd->add_option("--seed", ov.seed, "seed override");
    cmd->add_option("--spill-dir", ov.spill_dir, "offload spill directory");
    cmd->add_option("--spill-threshold", ov.spill_threshold, "spill threshold in bytes");
}

memstream::RunConfig resolve_config(const ConfigOverrides& ov) {
    memstream::RunConfig cfg;
    if (!ov.config_path.empty()) {
        std::ifstream is(ov.config_path);
        if (!is)
            throw std::runtime_error("cannot open config " + ov.config_path);
        json j;
        is >> j;
        cfg = memstream::run_config_from_json(j);
    }
    if (!ov.strategy.empty()) {
        json j;
        j["name"] = ov.strategy;
        cfg.strategy = memstream::strategy_from_json(j);
    }
    // parameter flags refine whichever strategy is active
    if (auto* p = std::get_if<memstream::Pool>(&cfg.strategy); p && ov.kernel) p->kernel = *ov.kernel;
    if (auto* p = std::get_if<memstream::Dilated>(&cfg.strategy); p && ov.stride) p->stride = *ov.stride;
    if (auto* p = std::get_if<memstream::UniformFrames>(&cfg.strategy); p && ov.keep) p->keep = *ov.keep;
    if (auto* p = std::get_if<memstream::TokenMerge>(&cfg.strategy); p && ov.merges)
        p->merges = *ov.merges;
    if (auto* p = std::get_if<memstream::KMeansFrames>(&cfg.strategy); p && ov.centroids)
        p->centroids = *ov.centroids;
    if (auto* p = std::get_if<memstream::TemporalChange>(&cfg.strategy); p && ov.keep)
        p->keep = *ov.keep;
    if (auto* p = std::get_if<memstream::AdaptiveKeySelect>(&cfg.strategy)) {
        if (ov.keep) p->keep = *ov.keep;
        if (ov.keep_ratio) p->keep_ratio = *ov.keep_ratio;
    }
    memstream::validate_strategy(cfg.strategy);

    if (ov.window_tokens) cfg.window = {memstream::WindowBudget::Kind::Tokens, *ov.window_tokens};
    if (ov.window_frames) cfg.window = {memstream::WindowBudget::Kind::Frames, *ov.window_frames};
    if (ov.budget) cfg.retrieval_budget = *ov.budget;
    if (!ov.mode.empty()) cfg.mode = memstream::mode_from_name(ov.mode);
    if (!ov.fusion.empty()) cfg.fusion = memstream::fusion_from_name(ov.fusion);
    if (ov.rrf_k) cfg.rrf_k = *ov.rrf_k;
    if (ov.seed) cfg.seed = *ov.seed;
    if (!ov.spill_dir.empty()) {
        if (!cfg.spill) cfg.spill = memstream::SpillConfig{};
        cfg.spill->dir = ov.spill_dir;
    }
    if (ov.spill_threshold) {
        if (!cfg.spill) cfg.spill = memstream::SpillConfig{};
        cfg.spill->threshold_bytes = *ov.spill_threshold;
    }
    if (const char* env = std::getenv("MEMSTREAM_SPILL_DIR"); env && *env) {
        if (!cfg.spill) cfg.spill = memstream::SpillConfig{};
        cfg.spill->dir = env;
    }
    if (cfg.spill && cfg.spill->dir.empty())
        throw std::invalid_argument("spill enabled without a directory");
    return cfg;
}

memstream::StoreConfig store_config_for(const memstream::StreamManifest& m,
                                        const memstream::RunConfig& cfg) {
    memstream::StoreConfig scfg;
    scfg.layer_count = m.model.layers;
    scfg.head_count = m.model.heads;
    scfg.head_dim = m.model.head_dim;
    scfg.budget = cfg.window;
    scfg.spill = cfg.spill;
    return scfg;
}

std::uint64_t fnv1a(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// --- gen ---

struct GenArgs {
    std::size_t frames = 64;
    std::size_t questions = 2;
    std::size_t clue_len = 2;
    std::string clue_spec;  // "1,2;17" feature indices per question
    double margin = 8.0;
    double redundancy = 0.9;
    std::uint64_t seed = 0;
    std::string out;
    std::string video_id = "synthetic";
    std::size_t temporal_patch = 2;
    // toy model geometry (desk-scale defaults)
    std::size_t layers = 4;
    std::size_t heads = 2;
    std::size_t head_dim = 16;
    std::size_t tokens = 16;
    std::vector<std::size_t> token_schedule;
    std::size_t question_tokens = 4;
    std::size_t input_dim = 48;
    std::size_t external_dim = 24;
    double token_noise = 0.05;
};

std::vector<std::vector<std::size_t>> parse_clue_spec(const std::string& spec) {
    std::vector<std::vector<std::size_t>> out;
    std::string current;
    std::vector<std::size_t> set;
    auto flush_number = [&] {
        if (!current.empty()) {
            set.push_back(std::stoull(current));
            current.clear();
        }
    };
    for (char c : spec) {
        if (c == ',') {
            flush_number();
        } else if (c == ';') {
            flush_number();
            out.push_back(set);
            set.clear();
        } else if (c >= '0' && c <= '9') {
            current += c;
        } else {
            throw std::invalid_argument("bad clue spec character: " + std::string(1, c));
        }
    }
    flush_number();
    if (!set.empty()) out.push_back(set);
    return out;
}

int run_gen(const GenArgs& args) {
    if (args.out.empty())
        throw std::invalid_argument("gen: --out is required");

    memstream::ToyModelConfig model;
    model.layers = args.layers;
    model.heads = args.heads;
    model.head_dim = args.head_dim;
    model.tokens_per_frame = args.tokens;
    model.token_schedule = args.token_schedule;
    model.question_tokens = args.question_tokens;
    model.input_dim = args.input_dim;
    model.external_dim = args.external_dim;
    model.token_noise = args.token_noise;
    model.seed = args.seed;

    std::vector<std::vector<std::size_t>> clue_sets;
    if (!args.clue_spec.empty()) {
        clue_sets = parse_clue_spec(args.clue_spec);
    } else {
        // seeded contiguous clue runs, clear of the stream ends
        for (std::size_t q = 0; q < args.questions; ++q) {
            const std::size_t len = std::min(args.clue_len, args.frames);
            const std::uint64_t r = memstream::detail::mix64(args.seed ^ (0xC1u + q * 0x9E3779B9ULL));
            const std::size_t start = args.frames > len ? std::size_t(r % (args.frames - len)) : 0;
            std::vector<std::size_t> set(len);
            std::iota(set.begin(), set.end(), start);
            clue_sets.push_back(std::move(set));
        }
    }

    const auto bench = memstream::gen_benchmark(args.frames, clue_sets, args.margin,
                                                args.redundancy, args.seed, model);
    const auto manifest =
        memstream::write_benchmark(bench, args.out, args.video_id, args.temporal_patch);

    json out;
    out["manifest"] = (fs::path(args.out) / "manifest.json").string();
    out["frames"] = manifest.frames.size();
    out["questions"] = manifest.questions.size();
    json clue_json = json::array();
    for (const auto& q : manifest.questions) clue_json.push_back(q.clue_frames_raw);
    out["clue_frames_raw"] = std::move(clue_json);
    std::cout << out.dump(2) << "\n";
    return 0;
}

// --- encode ---

int run_encode(const std::string& manifest_path, const ConfigOverrides& ov,
               const std::string& cache_path, const std::string& trace_path) {
    if (cache_path.empty())
        throw std::invalid_argument("encode: --cache is required");
    const memstream::RunConfig cfg = resolve_config(ov);
    const memstream::StreamManifest m = memstream::load_stream_manifest(manifest_path);

    memstream::TieredCacheStore store(store_config_for(m, cfg));
    std::vector<memstream::StreamFrame> stream;
    stream.reserve(m.frames.size());
    for (std::size_t i = 0; i < m.frames.size(); ++i)
        stream.push_back(memstream::materialize_frame(m, i));

    const memstream::EncodeTrace trace = memstream::encode_stream(stream, store, cfg.strategy);
    if (const auto parent = fs::path(cache_path).parent_path(); !parent.empty())
        fs::create_directories(parent);
    memstream::save_cache(store, cache_path);

    if (!trace_path.empty()) {
        if (const auto parent = fs::path(trace_path).parent_path(); !parent.empty())
            fs::create_directories(parent);
        std::ofstream os(trace_path, std::ios::binary | std::ios::trunc);
        if (!os)
            throw std::runtime_error("encode: cannot open trace path " + trace_path);
        os << memstream::trace_to_json(trace).dump(2) << "\n";
    }

    const json tj = memstream::trace_to_json(trace);
    json out;
    out["cache"] = cache_path;
    out["frames"] = m.frames.size();
    out["layers"] = m.model.layers;
    out["strategy"] = memstream::strategy_name(cfg.strategy);
    out["windows"] = trace.windows.size();
    out["total_full_window_tokens"] = tj.at("total_full_window_tokens");
    out["total_compressed_window_tokens"] = tj.at("total_compressed_window_tokens");
    out["compression_rate"] = tj.at("compression_rate");
    if (!trace_path.empty()) out["trace"] = trace_path;
    if (m.frames.empty()) {
        out["warning"] = "empty stream: cache contains no frames";
        std::cerr << "warning: empty stream, cache contains no frames\n";
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

// --- query ---

int run_query(const std::string& cache_path, const std::string& manifest_path,
              const ConfigOverrides& ov, const std::vector<std::string>& question_ids,
              const std::string& out_dir) {
    const memstream::RunConfig cfg = resolve_config(ov);
    const memstream::StreamManifest m = memstream::load_stream_manifest(manifest_path);
    const memstream::TieredCacheStore store = memstream::load_cache(cache_path);

    std::optional<memstream::ExternalEmbeddings> emb;
    if (m.external) emb = memstream::load_external_embeddings(m);
    if (cfg.mode != memstream::RetrievalMode::Internal && !emb)
        throw std::invalid_argument("query: mode needs external embeddings in the manifest");

    memstream::RetrievalConfig rcfg;
    rcfg.mode = cfg.mode;
    rcfg.fusion = cfg.fusion;
    rcfg.budget = cfg.retrieval_budget;
    rcfg.rrf_k = cfg.rrf_k;
    rcfg.expert_weights = cfg.expert_weights;

    json questions = json::array();
    for (const auto& mq : m.questions) {
        if (!question_ids.empty() &&
            std::find(question_ids.begin(), question_ids.end(), mq.id) == question_ids.end())
            continue;
        const memstream::QuestionFeatures q = memstream::materialize_question(m, mq);
        const memstream::RetrievalResult result =
            memstream::retrieve(store, q, emb ? &*emb : nullptr, rcfg);
        const std::vector<memstream::Matrix> outputs = memstream::answer_attention(q, result, store);

        json jq;
        jq["id"] = mq.id;
        jq["mode"] = memstream::mode_name(cfg.mode);
        jq["fusion"] = memstream::fusion_name(cfg.fusion);
        json layers = json::array();
        for (std::size_t layer = 0; layer < result.per_layer.size(); ++layer) {
            json jl;
            jl["layer"] = layer;
            jl["retrieved"] = result.per_layer[layer];
            json scores = json::array();
            for (std::size_t t : result.per_layer[layer])
                scores.push_back(result.scores_per_layer[layer][t]);
            jl["scores"] = std::move(scores);
            jl["answer_digest"] =
                hex64(fnv1a(outputs[layer].data.data(), outputs[layer].data.size() * sizeof(float)));
            layers.push_back(std::move(jl));
        }
        jq["layers"] = std::move(layers);

        if (!out_dir.empty()) {
            fs::create_directories(out_dir);
            for (std::size_t layer = 0; layer < outputs.size(); ++layer) {
                const std::string name =
                    "answer_" + mq.id + "_l" + std::to_string(layer) + ".mstn";
                memstream::write_matrix(fs::path(out_dir) / name, outputs[layer]);
            }
            jq["outputs_dir"] = out_dir;
        }
        questions.push_back(std::move(jq));
    }

    json out;
    out["cache"] = cache_path;
    out["budget"] = cfg.retrieval_budget;
    out["questions"] = std::move(questions);
    std::cout << out.dump(2) << "\n";
    return 0;
}

// --- eval ---

int run_eval(const std::string& cache_path, const std::string& manifest_path,
             const ConfigOverrides& ov, const std::string& trace_path, const std::string& out_dir,
             std::size_t bins, const std::string& sim_layers_spec) {
    if (out_dir.empty())
        throw std::invalid_argument("eval: --out is required");
    const memstream::RunConfig cfg = resolve_config(ov);
    const memstream::StreamManifest m = memstream::load_stream_manifest(manifest_path);
    const memstream::TieredCacheStore store = memstream::load_cache(cache_path);

    std::optional<memstream::ExternalEmbeddings> emb;
    if (m.external) emb = memstream::load_external_embeddings(m);
    if (cfg.mode != memstream::RetrievalMode::Internal && !emb)
        throw std::invalid_argument("eval: mode needs external embeddings in the manifest");

    // Entropy diagnostics come from the encode trace: either the exported one
    // or a deterministic re-encode of the manifest under the same config.
    memstream::EncodeTrace trace;
    if (!trace_path.empty()) {
        std::ifstream is(trace_path);
        if (!is)
            throw std::runtime_error("eval: cannot open trace " + trace_path);
        json j;
        is >> j;
        trace = memstream::trace_from_json(j);
    } else {
        memstream::StoreConfig scfg = store_config_for(m, cfg);
        scfg.spill.reset();
        memstream::TieredCacheStore scratch(scfg);
        std::vector<memstream::StreamFrame> stream;
        for (std::size_t i = 0; i < m.frames.size(); ++i)
            stream.push_back(memstream::materialize_frame(m, i));
        trace = memstream::encode_stream(stream, scratch, cfg.strategy);
    }

    memstream::RetrievalConfig rcfg;
    rcfg.mode = cfg.mode;
    rcfg.fusion = cfg.fusion;
    rcfg.budget = cfg.retrieval_budget;
    rcfg.rrf_k = cfg.rrf_k;
    rcfg.expert_weights = cfg.expert_weights;

    memstream::AnalysisReport report;
    report.config_hash = memstream::config_hash_hex(memstream::canonical_config_json(cfg));
    report.entropy_bins = bins;
    report.entropy = memstream::entropy_histogram(trace, bins);

    std::vector<std::vector<double>> recall_rows;
    for (const auto& mq : m.questions) {
        const memstream::QuestionFeatures q = memstream::materialize_question(m, mq);
        const memstream::RetrievalResult result =
            memstream::retrieve(store, q, emb ? &*emb : nullptr, rcfg);
        const memstream::ClueAnnotation clue = memstream::clue_annotation(m, mq);

        memstream::QuestionEvaluation qe;
        qe.question_id = mq.id;
        if (!clue.clue_features.empty()) {
            for (std::size_t layer = 0; layer < result.per_layer.size(); ++layer)
                qe.recall_per_layer.push_back(
                    memstream::recall_at_k(result.per_layer[layer], clue));
            recall_rows.push_back(qe.recall_per_layer);
        }

        // score traces: raw internal experts per layer plus the external expert
        for (std::size_t layer = 0; layer < m.model.layers; ++layer) {
            const auto scores = memstream::internal_scores(
                store, layer, memstream::question_repr(q.layers[layer].q));
            report.traces.push_back(
                memstream::score_trace(scores, clue, "layer" + std::to_string(layer)));
        }
        if (emb) {
            const auto ext = memstream::external_scores(*emb, mq.id);
            report.traces.push_back(memstream::score_trace(ext, clue, "external"));
            if (!clue.clue_features.empty()) {
                auto kept = memstream::top_k_desc(ext, rcfg.budget);
                std::sort(kept.begin(), kept.end());
                qe.external_recall = memstream::recall_at_k(kept, clue);
                qe.has_external = true;
            }
        }
        report.questions.push_back(std::move(qe));
    }

    if (!recall_rows.empty()) {
        report.per_layer = memstream::layer_recall_distribution(recall_rows);
        double joint = 0.0, by_question = 0.0;
        std::size_t joint_n = 0;
        for (const auto& row : recall_rows) {
            double qmean = 0.0;
            for (double r : row) {
                joint += r;
                qmean += r;
                ++joint_n;
            }
            by_question += qmean / double(row.size());
        }
        report.mean_recall_joint = joint / double(joint_n);
        report.mean_recall_layers_then_questions = by_question / double(recall_rows.size());
    }

    std::vector<std::size_t> sim_layers;
    if (sim_layers_spec.empty()) {
        for (std::size_t layer = 0; layer < m.model.layers; ++layer) sim_layers.push_back(layer);
    } else {
        for (const auto& set : parse_clue_spec(sim_layers_spec))
            for (std::size_t layer : set) sim_layers.push_back(layer);
    }
    for (std::size_t layer : sim_layers) {
        std::vector<memstream::Vector> reps;
        for (const auto& rep : store.rep_vectors(layer)) reps.push_back(rep.vec);
        if (!reps.empty()) report.similarity.emplace_back(layer, memstream::self_similarity(reps));
    }

    memstream::export_report(report, out_dir);

    json out;
    out["out_dir"] = out_dir;
    out["config_hash"] = report.config_hash;
    out["questions"] = report.questions.size();
    out["mean_recall_joint"] = report.mean_recall_joint;
    out["mean_recall_layers_then_questions"] = report.mean_recall_layers_then_questions;
    out["entropy_windows"] = report.entropy.total;
    std::cout << out.dump(2) << "\n";
    return 0;
}

// --- memsize ---

int run_memsize(std::uint64_t layers, std::uint64_t frames, std::uint64_t tokens,
                std::uint64_t heads, std::uint64_t head_dim, std::uint64_t bytes_per_elem) {
    const std::uint64_t bytes =
        memstream::kv_cache_bytes(layers, frames, tokens, heads, head_dim, bytes_per_elem);
    json out;
    out["bytes"] = bytes;
    char human[64];
    std::snprintf(human, sizeof(human), "%.1f GB", double(bytes) / 1e9);
    out["human"] = human;
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memstream: streaming KV-cache memory engine"};
    app.require_subcommand(1);

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen", "generate a synthetic benchmark");
    gen->add_option("--frames", gen_args.frames, "frame-feature count");
    gen->add_option("--questions", gen_args.questions, "question count");
    gen->add_option("--clue-len", gen_args.clue_len, "clue run length per question");
    gen->add_option("--clue-spec", gen_args.clue_spec,
                    "explicit clue feature indices, e.g. \"1,2;17\"");
    gen->add_option("--margin", gen_args.margin, "concept injection margin");
    gen->add_option("--redundancy", gen_args.redundancy, "frame redundancy in [0,1]");
    gen->add_option("--seed", gen_args.seed, "benchmark seed");
    gen->add_option("--out", gen_args.out, "output directory")->required();
    gen->add_option("--video-id", gen_args.video_id, "manifest video id");
    gen->add_option("--temporal-patch", gen_args.temporal_patch, "raw frames per feature");
    gen->add_option("--layers", gen_args.layers, "toy model layers");
    gen->add_option("--heads", gen_args.heads, "toy model heads");
    gen->add_option("--head-dim", gen_args.head_dim, "toy model head dim");
    gen->add_option("--tokens", gen_args.tokens, "tokens per frame");
    gen->add_option("--token-schedule", gen_args.token_schedule,
                    "cycled per-frame token counts (overrides --tokens)");
    gen->add_option("--question-tokens", gen_args.question_tokens, "tokens per question");
    gen->add_option("--input-dim", gen_args.input_dim, "raw feature dim");
    gen->add_option("--external-dim", gen_args.external_dim, "external embedding dim");
    gen->add_option("--token-noise", gen_args.token_noise, "per-token noise scale");

    ConfigOverrides encode_ov;
    std::string encode_manifest, encode_cache, encode_trace;
    auto* encode = app.add_subcommand("encode", "encode a stream into a cache file");
    encode->add_option("--manifest", encode_manifest, "stream manifest")->required();
    encode->add_option("--cache", encode_cache, "output cache path")->required();
    encode->add_option("--trace", encode_trace, "output encode-trace JSON path");
    add_config_flags(encode, encode_ov);

    ConfigOverrides query_ov;
    std::string query_manifest, query_cache, query_out;
    std::vector<std::string> query_questions;
    auto* query = app.add_subcommand("query", "retrieve and answer questions");
    query->add_option("--cache", query_cache, "cache path")->required();
    query->add_option("--manifest", query_manifest, "stream manifest")->required();
    query->add_option("--question", query_questions, "question id (repeatable; default all)");
    query->add_option("--out", query_out, "directory for answer attention tensors");
    add_config_flags(query, query_ov);

    ConfigOverrides eval_ov;
    std::string eval_manifest, eval_cache, eval_trace, eval_out, eval_sim_layers;
    std::size_t eval_bins = 20;
    auto* eval = app.add_subcommand("eval", "produce the analysis report");
    eval->add_option("--cache", eval_cache, "cache path")->required();
    eval->add_option("--manifest", eval_manifest, "stream manifest")->required();
    eval->add_option("--trace", eval_trace, "encode-trace JSON (re-encodes when omitted)");
    eval->add_option("--out", eval_out, "report output directory")->required();
    eval->add_option("--bins", eval_bins, "entropy histogram bins");
    eval->add_option("--sim-layers", eval_sim_layers,
                     "layers for self-similarity export, e.g. \"0,3\" (default all)");
    add_config_flags(eval, eval_ov);

    std::vector<std::uint64_t> memsize_args;
    auto* memsize = app.add_subcommand("memsize", "exact KV-cache byte count");
    memsize->add_option("params", memsize_args, "L T M H D bytes_per_elem")
        ->expected(6);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen(gen_args);
        if (encode->parsed()) return run_encode(encode_manifest, encode_ov, encode_cache, encode_trace);
        if (query->parsed())
            return run_query(query_cache, query_manifest, query_ov, query_questions, query_out);
        if (eval->parsed())
            return run_eval(eval_cache, eval_manifest, eval_ov, eval_trace, eval_out, eval_bins,
                            eval_sim_layers);
        if (memsize->parsed())
            return run_memsize(memsize_args[0], memsize_args[1], memsize_args[2], memsize_args[3],
                               memsize_args[4], memsize_args[5]);
    } catch (const std::exception& e) {
        json err;
        err["error"] = {{"message", e.what()}};
        std::cout << err.dump(2) << "\n";
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
