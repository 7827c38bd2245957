#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "remigen/conditions.hpp"
#include "remigen/error.hpp"
#include "remigen/model.hpp"
#include "remigen/remi.hpp"
#include "remigen/train.hpp"

namespace remigen {

// ---------------------------------------------------------------------------
// Perplexity

/// exp(total masked NLL / total masked positions) over a held-out set.
template <typename T>
double perplexity(const ModelParams<T>& p, const ModelConfig& c, std::span<const AssembledSequence> heldout) {
    double total = 0.0;
    long count = 0;
    for (const auto& s : heldout) {
        const auto [nll, n] = masked_nll(p, c, s.ids, s.loss_mask);
        total += nll;
        count += n;
    }
    if (count == 0) throw Error(ErrorKind::EmptyMask, "held-out set has no scored positions");
    return std::exp(total / static_cast<double>(count));
}

// ---------------------------------------------------------------------------
// Density and coverage over embedding vectors

using Embedding = std::vector<double>;

struct MetricConfig {
    int k_nn = 5;
};

struct DensityCoverage {
    double density = 0.0;
    double coverage = 0.0;
};

/// sqrt of the sum of squared coordinate differences, accumulated in index
/// order.
inline double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

/// k-NN manifold estimates: each real point owns a closed ball whose radius
/// is the distance to its k-th nearest other real point.
inline DensityCoverage density_coverage(std::span<const Embedding> real, std::span<const Embedding> gen, const MetricConfig& cfg) {
    const std::size_t n = real.size(), m = gen.size();
    if (cfg.k_nn < 1 || n <= static_cast<std::size_t>(cfg.k_nn))
        throw Error(ErrorKind::InvalidConfig, "need more real samples than k_nn");
    if (m == 0) throw Error(ErrorKind::InvalidConfig, "no generated samples");

    std::vector<double> radius(n);
    std::vector<double> dist;
    for (std::size_t i = 0; i < n; ++i) {
        dist.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) dist.push_back(euclidean(real[i], real[j]));
        }
        std::nth_element(dist.begin(), dist.begin() + (cfg.k_nn - 1), dist.end());
        radius[i] = dist[cfg.k_nn - 1];
    }
    if (std::all_of(radius.begin(), radius.end(), [](double r) { return r == 0.0; }))
        throw Error(ErrorKind::DegenerateManifold, "all real embeddings coincide");

    std::int64_t inside = 0;
    std::vector<std::uint8_t> covered(n, 0);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            if (euclidean(gen[j], real[i]) <= radius[i]) {
                ++inside;
                covered[i] = 1;
            }
        }
    }
    DensityCoverage out;
    out.density = static_cast<double>(inside) / (static_cast<double>(cfg.k_nn) * static_cast<double>(m));
    out.coverage = static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / static_cast<double>(n);
    return out;
}

/// Equal-size sets: the larger side is down-sampled by a seeded shuffle.
inline void balance(std::vector<Embedding>& real, std::vector<Embedding>& gen, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto& larger = real.size() > gen.size() ? real : gen;
    const std::size_t target = std::min(real.size(), gen.size());
    std::shuffle(larger.begin(), larger.end(), rng);
    larger.resize(target);
}

// ---------------------------------------------------------------------------
// Controllability

/// Averages over samples; a field is absent when no sample requested its
/// category (or none produced a comparable value).
struct ControllabilityReport {
    std::optional<double> instrument_jaccard;  // I
    std::optional<double> pitch_error;         // MP, semitones
    std::optional<double> tempo_error;         // MT, BPM
    std::optional<double> velocity_error;      // MV
    std::optional<double> duration_error;      // MD, position units
    std::optional<double> strict_chord;        // SC
    std::optional<double> relaxed_chord;       // RC
    int n_samples = 0;
    int n_excluded_syntax = 0;
};

class ControllabilityAccumulator {
public:
    /// Adds one generated body against the conditions that produced it.
    /// Syntactically invalid bodies are counted and excluded.
    void add(const ConditionSet& requested, std::span<const int> generated_body) {
        if (!validate_syntax(generated_body).valid) {
            ++excluded_;
            return;
        }
        add(requested, detokenize(generated_body));
    }

    void add(const ConditionSet& requested_raw, const NoteSong& song) {
        const ConditionSet req = quantize(requested_raw);
        ConditionSet gen;
        if (!song.notes.empty()) gen = extract_metadata(song);
        ++samples_;

        if (req.instruments) {
            const std::set<int> g = gen.instruments.value_or(std::set<int>{});
            std::size_t inter = 0;
            for (int c : *req.instruments) inter += g.count(c);
            const std::size_t uni = req.instruments->size() + g.size() - inter;
            jaccard_.add(uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni));
        }
        auto diff = [](Mean& m, const std::optional<double>& r, const std::optional<double>& g) {
            if (r && g) m.add(std::abs(*r - *g));
        };
        diff(pitch_, req.mean_pitch, gen.mean_pitch);
        diff(tempo_, req.mean_tempo, gen.mean_tempo);
        diff(velocity_, req.mean_velocity, gen.mean_velocity);
        diff(duration_, req.mean_duration, gen.mean_duration);
        if (req.chords) {
            const std::set<ChordLabel> g = gen.chords.value_or(std::set<ChordLabel>{});
            std::set<int> roots;
            for (const auto& ch : g) roots.insert(ch.root);
            double strict = 0.0, relaxed = 0.0;
            for (const auto& ch : *req.chords) {
                strict += g.count(ch) ? 1.0 : 0.0;
                relaxed += roots.count(ch.root) ? 1.0 : 0.0;
            }
            const double n = static_cast<double>(req.chords->size());
            strict_.add(strict / n);
            relaxed_.add(relaxed / n);
        }
    }

    ControllabilityReport report() const {
        ControllabilityReport r;
        r.instrument_jaccard = jaccard_.value();
        r.pitch_error = pitch_.value();
        r.tempo_error = tempo_.value();
        r.velocity_error = velocity_.value();
        r.duration_error = duration_.value();
        r.strict_chord = strict_.value();
        r.relaxed_chord = relaxed_.value();
        r.n_samples = samples_;
        r.n_excluded_syntax = excluded_;
        return r;
    }

private:
    struct Mean {
        double sum = 0.0;
        int n = 0;
        void add(double v) {
            sum += v;
            ++n;
        }
        std::optional<double> value() const { return n ? std::optional<double>(sum / n) : std::nullopt; }
    };

    Mean jaccard_, pitch_, tempo_, velocity_, duration_, strict_, relaxed_;
    int samples_ = 0;
    int excluded_ = 0;
};

inline ControllabilityReport controllability(const ConditionSet& requested, std::span<const NoteSong> generated) {
    ControllabilityAccumulator acc;
    for (const auto& s : generated) acc.add(requested, s);
    return acc.report();
}

inline ControllabilityReport controllability(const ConditionSet& requested, std::span<const Tokens> generated_bodies) {
    ControllabilityAccumulator acc;
    for (const auto& b : generated_bodies) acc.add(requested, b);
    return acc.report();
}

}  // namespace remigen
