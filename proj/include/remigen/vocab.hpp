#pragma once

// Fixed REMI+ event vocabulary: 528 events in 9 categories followed by four
// special tokens. Ids are dense and the category of an id is recoverable from
// its range alone.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "remigen/error.hpp"
#include "remigen/midi_io.hpp"
#include "remigen/song.hpp"

namespace remigen {

enum class TokenCategory { Bar, Tempo, Instrument, Pitch, PitchDrum, Position, Duration, Velocity, Chord, Special };

enum class ChordQuality { Maj, Min, Dim, Aug, Dom7, Maj7, Min7 };
inline constexpr int kChordQualities = 7;

struct ChordLabel {
    int root = 0;  // pitch class
    ChordQuality quality = ChordQuality::Maj;

    auto operator<=>(const ChordLabel&) const = default;
};

inline std::string_view quality_name(ChordQuality q) {
    static constexpr std::array<std::string_view, kChordQualities> names{"maj", "min", "dim", "aug", "dom7", "maj7", "min7"};
    return names[static_cast<int>(q)];
}

inline std::optional<ChordQuality> parse_quality(std::string_view name) {
    for (int q = 0; q < kChordQualities; ++q) {
        if (quality_name(static_cast<ChordQuality>(q)) == name) return static_cast<ChordQuality>(q);
    }
    return std::nullopt;
}

inline std::string chord_name(const ChordLabel& c) {
    static constexpr std::array<std::string_view, 12> roots{"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};
    return std::string(roots[c.root]) + ":" + std::string(quality_name(c.quality));
}

namespace vocab {

struct CategoryRange {
    TokenCategory category;
    std::string_view name;
    int offset;
    int count;
};

inline constexpr std::array<CategoryRange, 9> kCategories{{
    {TokenCategory::Bar, "bar", 0, 1},
    {TokenCategory::Tempo, "tempo", 1, 32},
    {TokenCategory::Instrument, "instrument", 33, 17},
    {TokenCategory::Pitch, "pitch", 50, 128},
    {TokenCategory::PitchDrum, "pitch_drum", 178, 128},
    {TokenCategory::Position, "position", 306, 48},
    {TokenCategory::Duration, "duration", 354, 58},
    {TokenCategory::Velocity, "velocity", 412, 32},
    {TokenCategory::Chord, "chord", 444, 84},
}};

inline constexpr int kEventCount = 528;
inline constexpr int kPad = 528;
inline constexpr int kBos = 529;
inline constexpr int kSep = 530;
inline constexpr int kEos = 531;
inline constexpr int kBaseVocabSize = 532;

inline constexpr int kBar = 0;
inline constexpr int kTempoOffset = 1, kTempoBins = 32;
inline constexpr int kInstrumentOffset = 33;
inline constexpr int kPitchOffset = 50;
inline constexpr int kPitchDrumOffset = 178;
inline constexpr int kPositionOffset = 306;
inline constexpr int kDurationOffset = 354, kDurationBins = 58;
inline constexpr int kVelocityOffset = 412, kVelocityBins = 32;
inline constexpr int kChordOffset = 444;

inline constexpr double kMinTempo = 16.0;
inline constexpr double kMaxTempo = 256.0;

constexpr const CategoryRange& range_of(TokenCategory c) {
    for (const auto& r : kCategories) {
        if (r.category == c) return r;
    }
    return kCategories[0];
}

inline TokenCategory category_of(int id) {
    if (id < 0 || id >= kBaseVocabSize) throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(id));
    if (id >= kEventCount) return TokenCategory::Special;
    for (const auto& r : kCategories) {
        if (id >= r.offset && id < r.offset + r.count) return r.category;
    }
    return TokenCategory::Special;
}

inline bool is(int id, TokenCategory c) {
    if (c == TokenCategory::Special) return id >= kEventCount && id < kBaseVocabSize;
    const auto& r = range_of(c);
    return id >= r.offset && id < r.offset + r.count;
}

/// Index of the token inside its category.
inline int value_of(int id) {
    const auto c = category_of(id);
    if (c == TokenCategory::Special) return id - kEventCount;
    return id - range_of(c).offset;
}

// Tempo: 32 geometrically spaced centers between 16 and 256 BPM, each nudged
// to the nearest value an integer microseconds-per-quarter meta event can hold.
inline const std::array<double, kTempoBins>& tempo_centers() {
    static const std::array<double, kTempoBins> centers = [] {
        std::array<double, kTempoBins> c{};
        for (int i = 0; i < kTempoBins; ++i) {
            const double raw = kMinTempo * std::pow(kMaxTempo / kMinTempo, static_cast<double>(i) / (kTempoBins - 1));
            c[i] = midi::representable_bpm(raw);
        }
        return c;
    }();
    return centers;
}

inline int tempo_bin(double bpm) {
    const auto& c = tempo_centers();
    const double l = std::log(bpm);
    int best = 0;
    for (int i = 1; i < kTempoBins; ++i) {
        if (std::abs(std::log(c[i]) - l) < std::abs(std::log(c[best]) - l)) best = i;
    }
    return best;
}
inline double tempo_center(int bin) { return tempo_centers().at(bin); }

inline int velocity_bin(double velocity) {
    const int b = static_cast<int>(std::floor(velocity / 4.0));
    return std::clamp(b, 0, kVelocityBins - 1);
}
inline int velocity_center(int bin) { return 4 * bin + 2; }

inline const std::array<int, kDurationBins>& duration_values() {
    static const std::array<int, kDurationBins> values = [] {
        std::array<int, kDurationBins> v{};
        int n = 0;
        for (int d = 1; d <= 24; ++d) v[n++] = d;
        for (int d = 26; d <= 48; d += 2) v[n++] = d;
        for (int d = 52; d <= 96; d += 4) v[n++] = d;
        for (int d = 104; d <= 176; d += 8) v[n++] = d;
        return v;
    }();
    return values;
}

/// Nearest duration bin whose value does not exceed `max_units` (ties go to
/// the shorter bin).
inline int duration_bin(double units, int max_units = kSongLength) {
    const auto& v = duration_values();
    int best = 0;
    for (int i = 1; i < kDurationBins; ++i) {
        if (v[i] > max_units) break;
        if (std::abs(v[i] - units) < std::abs(v[best] - units)) best = i;
    }
    return best;
}
inline int duration_value(int bin) { return duration_values().at(bin); }

inline int pitch_bin(double pitch) { return std::clamp(static_cast<int>(std::lround(pitch)), 0, 127); }

inline int bar_token() { return kBar; }
inline int tempo_token(int bin) { return kTempoOffset + bin; }
inline int instrument_token(int cls) { return kInstrumentOffset + cls; }
inline int pitch_token(int pitch) { return kPitchOffset + pitch; }
inline int pitch_drum_token(int pitch) { return kPitchDrumOffset + pitch; }
inline int position_token(int pos) { return kPositionOffset + pos; }
inline int duration_token(int bin) { return kDurationOffset + bin; }
inline int velocity_token(int bin) { return kVelocityOffset + bin; }
inline int chord_token(const ChordLabel& c) { return kChordOffset + c.root * kChordQualities + static_cast<int>(c.quality); }
inline ChordLabel chord_of(int id) {
    const int v = id - kChordOffset;
    return ChordLabel{v / kChordQualities, static_cast<ChordQuality>(v % kChordQualities)};
}

inline std::string token_name(int id) {
    switch (category_of(id)) {
        case TokenCategory::Bar: return "Bar";
        case TokenCategory::Tempo: return "Tempo_" + std::to_string(value_of(id));
        case TokenCategory::Instrument: return "Instrument_" + std::to_string(value_of(id));
        case TokenCategory::Pitch: return "Pitch_" + std::to_string(value_of(id));
        case TokenCategory::PitchDrum: return "PitchDrum_" + std::to_string(value_of(id));
        case TokenCategory::Position: return "Position_" + std::to_string(value_of(id));
        case TokenCategory::Duration: return "Duration_" + std::to_string(duration_value(value_of(id)));
        case TokenCategory::Velocity: return "Velocity_" + std::to_string(value_of(id));
        case TokenCategory::Chord: return "Chord_" + chord_name(chord_of(id));
        case TokenCategory::Special: break;
    }
    static constexpr std::array<std::string_view, 4> specials{"PAD", "BOS", "SEP", "EOS"};
    return std::string(specials[id - kEventCount]);
}

/// Numeric value an event token stands for (bin center, pitch, position...).
inline double numeric_value(int id) {
    const int v = value_of(id);
    switch (category_of(id)) {
        case TokenCategory::Tempo: return tempo_center(v);
        case TokenCategory::Duration: return duration_value(v);
        case TokenCategory::Velocity: return velocity_center(v);
        default: return v;
    }
}

/// JSON document describing every event and the bin tables.
inline nlohmann::json to_json() {
    nlohmann::json events = nlohmann::json::array();
    for (int id = 0; id < kEventCount; ++id) {
        const auto c = category_of(id);
        nlohmann::json e{{"id", id}, {"category", range_of(c).name}, {"name", token_name(id)}};
        if (c == TokenCategory::Chord) {
            const auto ch = chord_of(id);
            e["value"] = {{"root", ch.root}, {"quality", quality_name(ch.quality)}};
        } else if (c == TokenCategory::Bar) {
            e["value"] = nullptr;
        } else {
            e["value"] = numeric_value(id);
        }
        events.push_back(std::move(e));
    }
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& r : kCategories) counts[std::string(r.name)] = r.count;
    nlohmann::json tempo = nlohmann::json::array();
    for (double t : tempo_centers()) tempo.push_back(t);
    nlohmann::json vel = nlohmann::json::array();
    for (int i = 0; i < kVelocityBins; ++i) vel.push_back(velocity_center(i));
    nlohmann::json dur = nlohmann::json::array();
    for (int d : duration_values()) dur.push_back(d);
    return {
        {"event_count", kEventCount},
        {"vocab_size", kBaseVocabSize},
        {"category_counts", counts},
        {"events", events},
        {"special", {{"pad", kPad}, {"bos", kBos}, {"sep", kSep}, {"eos", kEos}}},
        {"bins", {{"tempo", tempo}, {"velocity", vel}, {"duration", dur}}},
        {"grid", {{"positions_per_bar", kPositionsPerBar}, {"bars", kBarsPerSong}, {"song_length", kSongLength}}},
    };
}

/// FNV-1a 64 over the serialized vocabulary, hex encoded. Stored in
/// checkpoints so a model trained against different tables is refused.
inline std::string hash() {
    static const std::string h = [] {
        const std::string doc = to_json().dump();
        std::uint64_t v = 1469598103934665603ULL;
        for (unsigned char ch : doc) {
            v ^= ch;
            v *= 1099511628211ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
        return std::string(buf);
    }();
    return h;
}

}  // namespace vocab
}  // namespace remigen
