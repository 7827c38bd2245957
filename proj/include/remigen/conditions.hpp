#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>

#include <json.hpp>

#include "remigen/chord.hpp"
#include "remigen/error.hpp"
#include "remigen/remi.hpp"
#include "remigen/song.hpp"
#include "remigen/vocab.hpp"

namespace remigen {

/// Six optional metadata categories. An empty optional is a dropped category;
/// present sets are never empty.
struct ConditionSet {
    std::optional<std::set<int>> instruments;
    std::optional<double> mean_pitch;
    std::optional<double> mean_tempo;
    std::optional<double> mean_velocity;
    std::optional<double> mean_duration;
    std::optional<std::set<ChordLabel>> chords;

    bool operator==(const ConditionSet&) const = default;

    int present_count() const {
        return int(instruments.has_value()) + int(mean_pitch.has_value()) + int(mean_tempo.has_value()) +
               int(mean_velocity.has_value()) + int(mean_duration.has_value()) + int(chords.has_value());
    }
};

enum class ConditionCategory { Instruments, MeanPitch, MeanTempo, MeanVelocity, MeanDuration, Chords };
inline constexpr std::array<ConditionCategory, 6> kConditionCategories{
    ConditionCategory::Instruments, ConditionCategory::MeanPitch,    ConditionCategory::MeanTempo,
    ConditionCategory::MeanVelocity, ConditionCategory::MeanDuration, ConditionCategory::Chords,
};

inline bool has(const ConditionSet& c, ConditionCategory cat) {
    switch (cat) {
        case ConditionCategory::Instruments: return c.instruments.has_value();
        case ConditionCategory::MeanPitch: return c.mean_pitch.has_value();
        case ConditionCategory::MeanTempo: return c.mean_tempo.has_value();
        case ConditionCategory::MeanVelocity: return c.mean_velocity.has_value();
        case ConditionCategory::MeanDuration: return c.mean_duration.has_value();
        case ConditionCategory::Chords: return c.chords.has_value();
    }
    return false;
}

inline void drop(ConditionSet& c, ConditionCategory cat) {
    switch (cat) {
        case ConditionCategory::Instruments: c.instruments.reset(); break;
        case ConditionCategory::MeanPitch: c.mean_pitch.reset(); break;
        case ConditionCategory::MeanTempo: c.mean_tempo.reset(); break;
        case ConditionCategory::MeanVelocity: c.mean_velocity.reset(); break;
        case ConditionCategory::MeanDuration: c.mean_duration.reset(); break;
        case ConditionCategory::Chords: c.chords.reset(); break;
    }
}

/// Metadata of a song. Mean pitch ignores drums and is absent for drum-only
/// songs; the chord set is absent when no half bar yields a chord.
inline ConditionSet extract_metadata(const NoteSong& song) {
    if (song.notes.empty()) throw Error(ErrorKind::EmptySong, "song has no notes");
    ConditionSet c;
    c.instruments.emplace();
    double pitch_sum = 0.0, velocity_sum = 0.0, duration_sum = 0.0;
    int pitched = 0;
    for (const auto& n : song.notes) {
        c.instruments->insert(n.instrument_class);
        velocity_sum += n.velocity;
        duration_sum += n.duration;
        if (n.instrument_class != kDrumClass) {
            pitch_sum += n.pitch;
            ++pitched;
        }
    }
    const double count = static_cast<double>(song.notes.size());
    if (pitched > 0) c.mean_pitch = pitch_sum / pitched;
    c.mean_velocity = velocity_sum / count;
    c.mean_duration = duration_sum / count;

    double weighted = 0.0;
    for (std::size_t i = 0; i < song.tempo_changes.size(); ++i) {
        const int start = song.tempo_changes[i].position;
        const int end = i + 1 < song.tempo_changes.size() ? song.tempo_changes[i + 1].position : kSongLength;
        weighted += song.tempo_changes[i].bpm * (end - start);
    }
    c.mean_tempo = weighted / kSongLength;

    std::set<ChordLabel> chords;
    for (const auto& ch : detect_song_chords(song)) {
        if (ch) chords.insert(*ch);
    }
    if (!chords.empty()) c.chords = std::move(chords);
    return c;
}

/// The values the model actually sees: scalar means snapped to their token
/// bins (pitch to the nearest semitone).
inline ConditionSet quantize(const ConditionSet& c) {
    ConditionSet q = c;
    if (q.mean_pitch) q.mean_pitch = vocab::pitch_bin(*q.mean_pitch);
    if (q.mean_tempo) q.mean_tempo = vocab::tempo_center(vocab::tempo_bin(*q.mean_tempo));
    if (q.mean_velocity) q.mean_velocity = vocab::velocity_center(vocab::velocity_bin(*q.mean_velocity));
    if (q.mean_duration) q.mean_duration = vocab::duration_value(vocab::duration_bin(*q.mean_duration));
    return q;
}

/// Prefix tokens in category order (instruments, chords, tempo, pitch,
/// velocity, duration) followed by SEP.
inline Tokens encode_prefix(const ConditionSet& c) {
    Tokens out;
    if (c.instruments) {
        for (int cls : *c.instruments) out.push_back(vocab::instrument_token(cls));
    }
    if (c.chords) {
        for (const auto& ch : *c.chords) out.push_back(vocab::chord_token(ch));
    }
    if (c.mean_tempo) out.push_back(vocab::tempo_token(vocab::tempo_bin(*c.mean_tempo)));
    if (c.mean_pitch) out.push_back(vocab::pitch_token(vocab::pitch_bin(*c.mean_pitch)));
    if (c.mean_velocity) out.push_back(vocab::velocity_token(vocab::velocity_bin(*c.mean_velocity)));
    if (c.mean_duration) out.push_back(vocab::duration_token(vocab::duration_bin(*c.mean_duration)));
    out.push_back(vocab::kSep);
    return out;
}

/// Recovers the quantized ConditionSet from prefix tokens (SEP optional).
inline ConditionSet decode_prefix(std::span<const int> tokens) {
    PrefixGrammar grammar;
    ConditionSet c;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int t = tokens[i];
        if (!grammar.advance(t)) throw Error(ErrorKind::InvalidSyntax, "bad condition prefix token", i);
        if (t == vocab::kSep) break;
        const int v = vocab::value_of(t);
        switch (vocab::category_of(t)) {
            case TokenCategory::Instrument:
                if (!c.instruments) c.instruments.emplace();
                c.instruments->insert(v);
                break;
            case TokenCategory::Chord:
                if (!c.chords) c.chords.emplace();
                c.chords->insert(vocab::chord_of(t));
                break;
            case TokenCategory::Tempo: c.mean_tempo = vocab::tempo_center(v); break;
            case TokenCategory::Pitch: c.mean_pitch = v; break;
            case TokenCategory::Velocity: c.mean_velocity = vocab::velocity_center(v); break;
            case TokenCategory::Duration: c.mean_duration = vocab::duration_value(v); break;
            default: break;
        }
    }
    return c;
}

struct DropPolicy {
    double probability = 0.5;
    std::uint64_t rng_seed = 0;
};

/// Removes each category independently with probability `p`, drawing one
/// uniform per category in kConditionCategories order.
template <class Rng>
ConditionSet apply_drop(const ConditionSet& c, double p, Rng& rng) {
    ConditionSet out = c;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto cat : kConditionCategories) {
        const double draw = u(rng);
        if (draw < p) drop(out, cat);
    }
    return out;
}

inline ConditionSet apply_drop(const ConditionSet& c, const DropPolicy& policy) {
    std::mt19937_64 rng(policy.rng_seed);
    return apply_drop(c, policy.probability, rng);
}

// JSON: absent key = dropped category.

inline nlohmann::json to_json(const ConditionSet& c) {
    nlohmann::json j = nlohmann::json::object();
    if (c.instruments) j["instruments"] = std::vector<int>(c.instruments->begin(), c.instruments->end());
    if (c.mean_pitch) j["mean_pitch"] = *c.mean_pitch;
    if (c.mean_tempo) j["mean_tempo"] = *c.mean_tempo;
    if (c.mean_velocity) j["mean_velocity"] = *c.mean_velocity;
    if (c.mean_duration) j["mean_duration"] = *c.mean_duration;
    if (c.chords) {
        auto arr = nlohmann::json::array();
        for (const auto& ch : *c.chords) arr.push_back({{"root", ch.root}, {"quality", quality_name(ch.quality)}});
        j["chords"] = arr;
    }
    return j;
}

inline ConditionSet conditions_from_json(const nlohmann::json& j) {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidRequest, msg); };
    if (!j.is_object()) fail("conditions: must be an object");
    for (const auto& [key, _] : j.items()) {
        static const std::set<std::string> known{"instruments", "mean_pitch", "mean_tempo", "mean_velocity", "mean_duration", "chords"};
        if (!known.contains(key)) fail("conditions." + key + ": unknown field");
    }
    ConditionSet c;
    if (j.contains("instruments")) {
        const auto& arr = j["instruments"];
        if (!arr.is_array() || arr.empty()) fail("conditions.instruments: must be a non-empty array");
        c.instruments.emplace();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (!arr[i].is_number_integer() || arr[i].get<int>() < 0 || arr[i].get<int>() >= kInstrumentClasses)
                fail("conditions.instruments[" + std::to_string(i) + "]: must be an integer in [0, 16]");
            c.instruments->insert(arr[i].get<int>());
        }
    }
    auto number = [&](const char* key, double lo, double hi) -> std::optional<double> {
        if (!j.contains(key)) return std::nullopt;
        const auto& v = j[key];
        if (!v.is_number() || !std::isfinite(v.get<double>()) || v.get<double>() < lo || v.get<double>() > hi)
            fail(std::string("conditions.") + key + ": must be a number in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return v.get<double>();
    };
    c.mean_pitch = number("mean_pitch", 0.0, 127.0);
    c.mean_tempo = number("mean_tempo", 1.0, 1000.0);
    c.mean_velocity = number("mean_velocity", 0.0, 127.0);
    c.mean_duration = number("mean_duration", 1.0, kSongLength);
    if (j.contains("chords")) {
        const auto& arr = j["chords"];
        if (!arr.is_array() || arr.empty()) fail("conditions.chords: must be a non-empty array");
        c.chords.emplace();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "conditions.chords[" + std::to_string(i) + "]";
            const auto& e = arr[i];
            if (!e.is_object() || !e.contains("root") || !e["root"].is_number_integer() || e["root"].get<int>() < 0 ||
                e["root"].get<int>() > 11)
                fail(path + ".root: must be an integer in [0, 11]");
            if (!e.contains("quality") || !e["quality"].is_string()) fail(path + ".quality: must be a string");
            const auto q = parse_quality(e["quality"].get<std::string>());
            if (!q) fail(path + ".quality: must be one of maj, min, dim, aug, dom7, maj7, min7");
            c.chords->insert(ChordLabel{e["root"].get<int>(), *q});
        }
    }
    return c;
}

}  // namespace remigen
