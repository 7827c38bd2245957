#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "remigen/bpe.hpp"
#include "remigen/conditions.hpp"
#include "remigen/error.hpp"
#include "remigen/inference.hpp"
#include "remigen/metrics.hpp"
#include "remigen/model.hpp"
#include "remigen/train.hpp"

namespace remigen {

enum class ConditionRegime { Superset, Subset };

inline std::string_view regime_name(ConditionRegime r) { return r == ConditionRegime::Superset ? "superset" : "subset"; }

inline ConditionRegime parse_regime(std::string_view s) {
    if (s == "superset") return ConditionRegime::Superset;
    if (s == "subset") return ConditionRegime::Subset;
    throw Error(ErrorKind::InvalidConfig, "regime must be superset or subset");
}

struct EvalConfig {
    ConditionRegime regime = ConditionRegime::Superset;
    bool drop_trained = false;  // label only
    std::uint64_t seed = 0;
    double subset_drop_probability = 0.5;
    int k_nn = 5;
    int max_new_tokens = 1024;
    bool grammar_mask = false;
    bool keep_embeddings = false;
};

struct EvalRow {
    ConditionRegime regime = ConditionRegime::Superset;
    bool drop_trained = false;
    double perplexity = 0.0;
    std::optional<double> density, coverage;
    ControllabilityReport control;
    int n_generated = 0;
    std::vector<Embedding> real_embeddings, generated_embeddings;  // filled when keep_embeddings
};

/// Conditions for each test example under the chosen regime. The subset
/// regime drops whole categories from the full set with a seeded stream, so
/// every model evaluated with the same seed sees the same requests.
inline std::vector<ConditionSet> regime_conditions(std::span<const TrainingExample> testset, const EvalConfig& cfg) {
    std::vector<ConditionSet> out;
    std::mt19937_64 rng(cfg.seed ^ 0x5EED5EED5EED5EEDULL);
    for (const auto& ex : testset) {
        out.push_back(cfg.regime == ConditionRegime::Superset ? ex.conditions : apply_drop(ex.conditions, cfg.subset_drop_probability, rng));
    }
    return out;
}

/// Embedding input: BOS SEP body, truncated to the context length.
template <typename T>
Embedding body_embedding(const ModelParams<T>& p, const ModelConfig& c, const BpeModel& bpe, std::span<const int> body) {
    Tokens ids{vocab::kBos, vocab::kSep};
    const Tokens enc = bpe.encode(body);
    ids.insert(ids.end(), enc.begin(), enc.end());
    if (static_cast<int>(ids.size()) > c.max_seq_len) ids.resize(static_cast<std::size_t>(c.max_seq_len));
    const RowVector<T> e = embed(p, c, ids);
    return Embedding(e.data(), e.data() + e.size());
}

/// One Table-1 style row: held-out perplexity under the regime's
/// conditions, then greedy generation per test example for density,
/// coverage and controllability. Invalid generations are counted and left
/// out of every generation metric.
template <typename T>
EvalRow evaluate_table(const ModelParams<T>& p, const ModelConfig& c, const BpeModel& bpe, std::span<const TrainingExample> testset,
                       const EvalConfig& cfg) {
    if (testset.empty()) throw Error(ErrorKind::EmptyCorpus, "test set is empty");
    EvalRow row;
    row.regime = cfg.regime;
    row.drop_trained = cfg.drop_trained;
    const auto conds = regime_conditions(testset, cfg);

    std::vector<AssembledSequence> heldout;
    for (std::size_t i = 0; i < testset.size(); ++i) heldout.push_back(assemble_sequence(conds[i], testset[i].body, bpe));
    row.perplexity = perplexity(p, c, std::span<const AssembledSequence>(heldout));

    SamplerConfig sampler;
    sampler.mode = SamplingMode::Greedy;
    sampler.max_new_tokens = cfg.max_new_tokens;
    sampler.grammar_mask = cfg.grammar_mask;
    ControllabilityAccumulator acc;
    std::vector<Embedding> real, gen;
    for (std::size_t i = 0; i < testset.size(); ++i) {
        real.push_back(body_embedding(p, c, bpe, testset[i].body));
        const auto g = generate(p, c, bpe, conds[i], sampler, cfg.seed + i);
        ++row.n_generated;
        acc.add(conds[i], g.body);
        if (validate_syntax(g.body).valid) gen.push_back(body_embedding(p, c, bpe, g.body));
    }
    row.control = acc.report();
    if (cfg.keep_embeddings) {
        row.real_embeddings = real;
        row.generated_embeddings = gen;
    }

    balance(real, gen, cfg.seed);
    if (static_cast<int>(real.size()) > cfg.k_nn) {
        const auto dc = density_coverage(real, gen, MetricConfig{cfg.k_nn});
        row.density = dc.density;
        row.coverage = dc.coverage;
    }
    return row;
}

inline const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols{"perplexity", "density", "coverage", "I",  "MP", "MT",
                                               "MV",         "MD",      "SC",       "RC", "n_excluded_syntax"};
    return cols;
}

inline nlohmann::json to_json(const EvalRow& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"regime", regime_name(r.regime)},
            {"drop_trained", r.drop_trained},
            {"perplexity", r.perplexity},
            {"density", opt(r.density)},
            {"coverage", opt(r.coverage)},
            {"I", opt(r.control.instrument_jaccard)},
            {"MP", opt(r.control.pitch_error)},
            {"MT", opt(r.control.tempo_error)},
            {"MV", opt(r.control.velocity_error)},
            {"MD", opt(r.control.duration_error)},
            {"SC", opt(r.control.strict_chord)},
            {"RC", opt(r.control.relaxed_chord)},
            {"n_excluded_syntax", r.control.n_excluded_syntax},
            {"n_generated", r.n_generated}};
}

inline std::string csv_header() {
    std::string s;
    for (const auto& c : report_columns()) s += (s.empty() ? "" : ",") + c;
    return s;
}

/// Absent values are written as empty cells.
inline std::string csv_row(const EvalRow& r) {
    const auto j = to_json(r);
    std::ostringstream out;
    out.precision(6);
    bool first = true;
    for (const auto& c : report_columns()) {
        if (!first) out << ',';
        first = false;
        if (!j[c].is_null()) out << j[c].get<double>();
    }
    return out.str();
}

/// Raw little-endian f32 matrix plus a JSON sidecar {count, dimension}.
inline void write_embeddings(const std::string& path, std::span<const Embedding> rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + path);
    const std::size_t dim = rows.empty() ? 0 : rows.front().size();
    for (const auto& r : rows) {
        for (double v : r) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            const char b[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF), static_cast<char>((bits >> 16) & 0xFF),
                               static_cast<char>(bits >> 24)};
            f.write(b, 4);
        }
    }
    std::ofstream side(path + ".json");
    side << nlohmann::json{{"count", rows.size()}, {"dimension", dim}}.dump() << '\n';
}

}  // namespace remigen
