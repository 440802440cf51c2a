#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "memstream/numerics.hpp"
#include "memstream/stream_encoder.hpp"

namespace memstream {

/// Ground-truth clue frame-feature indices for one question.
struct ClueAnnotation {
    std::string question_id;
    std::vector<std::size_t> clue_features;
};

/// Raw clue frames map to feature indices by floor division with the
/// temporal patch size; any covered raw frame marks the feature as a clue.
inline std::vector<std::size_t> clue_features_from_raw(std::span<const std::size_t> raw_frames,
                                                       std::size_t temporal_patch) {
    if (temporal_patch == 0)
        throw std::invalid_argument("clue_features_from_raw: temporal_patch must be >= 1");
    std::set<std::size_t> features;
    for (std::size_t r : raw_frames) features.insert(r / temporal_patch);
    return {features.begin(), features.end()};
}

/// |retrieved ∩ clue| / |clue|.
inline double recall_at_k(std::span<const std::size_t> retrieved, const ClueAnnotation& clue) {
    if (clue.clue_features.empty())
        throw std::invalid_argument("recall_at_k: empty clue set");
    const std::set<std::size_t> got(retrieved.begin(), retrieved.end());
    std::size_t hit = 0;
    for (std::size_t c : clue.clue_features) hit += got.count(c);
    return double(hit) / double(clue.clue_features.size());
}

struct LayerRecallSummary {
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    std::size_t count = 0;
};

namespace detail {

// Midpoint-of-central-pair median; quartiles are medians of the lower/upper
// halves excluding the central element for odd counts (Tukey hinges).
inline double median_of(std::span<const double> sorted) {
    const std::size_t n = sorted.size();
    if (n == 0) return 0.0;
    if (n % 2 == 1) return sorted[n / 2];
    return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

}  // namespace detail

/// Order statistics of recall per layer over questions.
inline std::vector<LayerRecallSummary> layer_recall_distribution(
    const std::vector<std::vector<double>>& per_question_per_layer) {
    if (per_question_per_layer.empty())
        throw std::invalid_argument("layer_recall_distribution: no questions");
    const std::size_t layer_count = per_question_per_layer.front().size();
    for (const auto& q : per_question_per_layer)
        if (q.size() != layer_count)
            throw std::invalid_argument("layer_recall_distribution: ragged layer counts");

    std::vector<LayerRecallSummary> out(layer_count);
    for (std::size_t layer = 0; layer < layer_count; ++layer) {
        std::vector<double> vals;
        vals.reserve(per_question_per_layer.size());
        double sum = 0.0;
        for (const auto& q : per_question_per_layer) {
            vals.push_back(q[layer]);
            sum += q[layer];
        }
        std::sort(vals.begin(), vals.end());
        auto& s = out[layer];
        s.count = vals.size();
        s.mean = sum / double(vals.size());
        s.median = detail::median_of(vals);
        const std::size_t n = vals.size();
        if (n == 1) {
            s.q1 = s.q3 = vals[0];
        } else {
            const std::size_t half = n / 2;
            s.q1 = detail::median_of(std::span(vals).first(half));
            s.q3 = detail::median_of(std::span(vals).last(half));
        }
    }
    return out;
}

/// Query-frame score trajectory plus clue markers, ready for plotting.
struct ScoreTrace {
    std::string question_id;
    std::string expert;  // "layer<i>" or "external"
    std::vector<double> scores;
    std::vector<std::size_t> clue_features;
};

inline ScoreTrace score_trace(std::span<const double> scores, const ClueAnnotation& clue,
                              std::string expert = {}) {
    ScoreTrace t;
    t.question_id = clue.question_id;
    t.expert = std::move(expert);
    t.scores.assign(scores.begin(), scores.end());
    t.clue_features = clue.clue_features;
    return t;
}

/// Frame-wise self-similarity of representative vectors; computed once per
/// unordered pair so the output is exactly symmetric.
inline Matrix self_similarity(std::span<const Vector> reps) {
    if (reps.empty())
        throw std::invalid_argument("self_similarity: no representative vectors");
    const std::size_t n = reps.size();
    Matrix m(n, n);
    for (std::size_t a = 0; a < n; ++a) {
        m.at(a, a) = float(cosine_sim(reps[a], reps[a]));
        for (std::size_t b = a + 1; b < n; ++b) {
            const float s = float(cosine_sim(reps[a], reps[b]));
            m.at(a, b) = s;
            m.at(b, a) = s;
        }
    }
    return m;
}

struct Histogram {
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;
};

/// Entropy histogram over [0, 1]; one count per recorded window (windows
/// without an entropy value, e.g. the empty window at t=0, do not count).
inline Histogram entropy_histogram(const EncodeTrace& trace, std::size_t bins) {
    if (bins == 0)
        throw std::invalid_argument("entropy_histogram: bins must be >= 1");
    Histogram h;
    h.counts.assign(bins, 0);
    for (const auto& w : trace.windows) {
        if (!w.entropy) continue;
        const double e = std::clamp(*w.entropy, 0.0, 1.0);
        std::size_t bin = std::min(std::size_t(e * double(bins)), bins - 1);
        ++h.counts[bin];
        ++h.total;
    }
    return h;
}

// --- report assembly and export ---

struct QuestionEvaluation {
    std::string question_id;
    std::vector<double> recall_per_layer;
    double external_recall = 0.0;
    bool has_external = false;
};

/// Everything the diagnostics produce for one run, exportable as JSON plus
/// plot-ready CSV files.
struct AnalysisReport {
    std::string config_hash;
    std::vector<QuestionEvaluation> questions;
    std::vector<LayerRecallSummary> per_layer;
    double mean_recall_layers_then_questions = 0.0;  // mean over layers, then questions
    double mean_recall_joint = 0.0;                  // mean over all (question, layer) pairs
    std::vector<ScoreTrace> traces;
    std::vector<std::pair<std::size_t, Matrix>> similarity;  // (layer, T x T)
    Histogram entropy;
    std::size_t entropy_bins = 0;
};

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("analysis export: cannot open " + path.string());
    return os;
}

}  // namespace detail

/// FNV-1a over the canonical config JSON; stamped into export file names.
inline std::string config_hash_hex(const std::string& canonical) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline nlohmann::json report_to_json(const AnalysisReport& r) {
    nlohmann::json j;
    j["config_hash"] = r.config_hash;
    j["mean_recall_layers_then_questions"] = r.mean_recall_layers_then_questions;
    j["mean_recall_joint"] = r.mean_recall_joint;

    nlohmann::json qs = nlohmann::json::array();
    for (const auto& q : r.questions) {
        nlohmann::json e;
        e["id"] = q.question_id;
        e["recall_per_layer"] = q.recall_per_layer;
        if (q.has_external) e["external_recall"] = q.external_recall;
        qs.push_back(std::move(e));
    }
    j["questions"] = std::move(qs);

    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < r.per_layer.size(); ++i) {
        const auto& s = r.per_layer[i];
        layers.push_back({{"layer", i},
                          {"mean", s.mean},
                          {"median", s.median},
                          {"q1", s.q1},
                          {"q3", s.q3},
                          {"count", s.count}});
    }
    j["layer_recall"] = std::move(layers);

    j["entropy_histogram"] = {{"bins", r.entropy_bins},
                              {"counts", r.entropy.counts},
                              {"total", r.entropy.total}};
    return j;
}

/// Writes report_<hash>.json plus one CSV per figure type into out_dir.
/// Output is byte-deterministic for identical inputs.
inline void export_report(const AnalysisReport& r, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string tag = r.config_hash;

    {
        auto os = detail::open_out(out_dir / ("report_" + tag + ".json"));
        os << report_to_json(r).dump(2) << "\n";
    }
    {
        auto os = detail::open_out(out_dir / ("layer_recall_" + tag + ".csv"));
        os << "question_id,layer,recall\n";
        for (const auto& q : r.questions)
            for (std::size_t layer = 0; layer < q.recall_per_layer.size(); ++layer)
                os << detail::csv_field(q.question_id) << "," << layer << ","
                   << detail::format_double(q.recall_per_layer[layer]) << "\n";
    }
    {
        auto os = detail::open_out(out_dir / ("score_trace_" + tag + ".csv"));
        os << "question_id,expert,frame,score,is_clue\n";
        for (const auto& t : r.traces) {
            const std::set<std::size_t> clue(t.clue_features.begin(), t.clue_features.end());
            for (std::size_t f = 0; f < t.scores.size(); ++f)
                os << detail::csv_field(t.question_id) << "," << detail::csv_field(t.expert) << ","
                   << f << "," << detail::format_double(t.scores[f]) << "," << clue.count(f) << "\n";
        }
    }
    {
        auto os = detail::open_out(out_dir / ("self_similarity_" + tag + ".csv"));
        os << "layer,frame_a,frame_b,similarity\n";
        for (const auto& [layer, m] : r.similarity)
            for (std::size_t a = 0; a < m.rows; ++a)
                for (std::size_t b = 0; b < m.cols; ++b)
                    os << layer << "," << a << "," << b << ","
                       << detail::format_double(double(m.at(a, b))) << "\n";
    }
    {
        auto os = detail::open_out(out_dir / ("entropy_hist_" + tag + ".csv"));
        os << "bin_low,bin_high,count\n";
        for (std::size_t b = 0; b < r.entropy.counts.size(); ++b) {
            const double lo = double(b) / double(r.entropy_bins);
            const double hi = double(b + 1) / double(r.entropy_bins);
            os << detail::format_double(lo) << "," << detail::format_double(hi) << ","
               << r.entropy.counts[b] << "\n";
        }
    }
}

}  // namespace memstream
