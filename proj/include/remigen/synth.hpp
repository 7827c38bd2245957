#pragma once

// Seeded synthetic 4-bar corpus. A latent style drives instrumentation,
// tempo, dynamics, register, rhythm and harmonic vocabulary, so the six
// metadata categories are correlated with each other and with the notes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "remigen/remi.hpp"
#include "remigen/song.hpp"
#include "remigen/vocab.hpp"

namespace remigen::synth {

struct Degree {
    int offset;  // semitones above the key root
    ChordQuality quality;
};

using Progression = std::array<Degree, 4>;

struct Style {
    const char* name;
    double tempo;
    double velocity;
    std::vector<int> harmony;  // instrument classes to pick from
    int chord_hits;            // chord onsets per bar (1 or 2)
    bool power_chords;
    double bass_prob;
    int bass_hits;
    std::vector<int> lead;
    double lead_prob;
    int lead_hits;
    int lead_register;
    double drum_prob;
    int drum_hits;
    int drum_pitch_a, drum_pitch_b;
    std::vector<Progression> progressions;
};

inline const std::vector<Style>& styles() {
    using Q = ChordQuality;
    const Progression pop1{{{0, Q::Maj}, {7, Q::Maj}, {9, Q::Min}, {5, Q::Maj}}};
    const Progression pop2{{{0, Q::Maj}, {9, Q::Min}, {5, Q::Maj}, {7, Q::Maj}}};
    const Progression pop3{{{0, Q::Maj}, {5, Q::Maj}, {7, Q::Maj}, {0, Q::Maj}}};
    const Progression minor1{{{0, Q::Min}, {8, Q::Maj}, {3, Q::Maj}, {10, Q::Maj}}};
    const Progression minor2{{{0, Q::Min}, {5, Q::Min}, {7, Q::Min}, {0, Q::Min}}};
    const Progression jazz1{{{2, Q::Min7}, {7, Q::Dom7}, {0, Q::Maj7}, {0, Q::Maj7}}};
    const Progression jazz2{{{0, Q::Maj7}, {9, Q::Min7}, {2, Q::Min7}, {7, Q::Dom7}}};
    static const std::vector<Style> s{
        {"ballad", 70, 56, {0, 5}, 1, false, 0.6, 1, {8, 9}, 0.9, 3, 74, 0.15, 2, 36, 38, {pop1, pop2}},
        {"rock", 132, 100, {3}, 2, true, 1.0, 2, {10, 3}, 0.3, 2, 67, 0.95, 4, 36, 38, {pop1, pop3, minor1}},
        {"jazz", 112, 72, {0, 2}, 1, false, 0.9, 2, {7, 8}, 0.8, 3, 70, 0.6, 2, 51, 42, {jazz1, jazz2}},
        {"electronic", 126, 90, {11}, 1, false, 0.9, 2, {10}, 0.7, 2, 72, 1.0, 4, 36, 42, {minor1, minor2}},
        {"classical", 88, 64, {5, 6}, 1, false, 0.7, 1, {5, 9}, 0.9, 4, 76, 0.0, 0, 0, 0, {pop3, minor2, pop2}},
        {"folk", 100, 76, {3}, 2, false, 0.3, 1, {9, 13}, 0.8, 2, 72, 0.1, 2, 36, 38, {pop1, pop3}},
    };
    return s;
}

inline int chord_tone(const Degree& d, int key, int index) {
    static constexpr std::array<std::array<int, 4>, kChordQualities> intervals{{
        {0, 4, 7, 12}, {0, 3, 7, 12}, {0, 3, 6, 12}, {0, 4, 8, 12}, {0, 4, 7, 10}, {0, 4, 7, 11}, {0, 3, 7, 10},
    }};
    return (key + d.offset) % 12 + intervals[static_cast<int>(d.quality)][index % 4];
}

inline int chord_size(const Degree& d) {
    return d.quality >= ChordQuality::Dom7 ? 4 : 3;
}

struct Piece {
    NoteSong song;
    int style = 0;
};

inline Piece make_piece(std::mt19937_64& rng) {
    const auto& all = styles();
    std::uniform_int_distribution<int> pick_style(0, static_cast<int>(all.size()) - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto choose = [&](const auto& v) { return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)]; };

    Piece piece;
    piece.style = pick_style(rng);
    const Style& st = all[piece.style];
    NoteSong& song = piece.song;
    const int key = std::uniform_int_distribution<int>(0, 11)(rng);
    const Progression prog = choose(st.progressions);
    const double tempo = st.tempo * std::exp(0.05 * normal(rng));
    song.tempo_changes = {{0, tempo}};
    if (unit(rng) < 0.1) song.tempo_changes.push_back({2 * kPositionsPerBar, tempo * (unit(rng) < 0.5 ? 0.8 : 1.2)});
    const double base_velocity = st.velocity + 6.0 * normal(rng);
    auto velocity = [&](double accent) {
        return std::clamp(static_cast<int>(std::lround(base_velocity + accent + 4.0 * normal(rng))), 1, 127);
    };
    auto add = [&](int cls, int pitch, int onset, int duration, double accent) {
        song.notes.push_back({0, cls, std::clamp(pitch, 0, 127), velocity(accent), onset, duration});
    };

    const int harmony = choose(st.harmony);
    const int chord_len = kPositionsPerBar / st.chord_hits;
    for (int bar = 0; bar < kBarsPerSong; ++bar) {
        const Degree& d = prog[bar];
        const int bar_start = bar * kPositionsPerBar;
        for (int hit = 0; hit < st.chord_hits; ++hit) {
            const int onset = bar_start + hit * chord_len;
            const int n = st.power_chords ? 2 : chord_size(d);
            for (int i = 0; i < n; ++i) {
                const int tone = st.power_chords ? (i == 0 ? chord_tone(d, key, 0) : chord_tone(d, key, 0) + 7) : chord_tone(d, key, i);
                add(harmony, 48 + tone, onset, chord_len, hit == 0 ? 4.0 : 0.0);
            }
        }
    }

    if (unit(rng) < st.bass_prob) {
        const int len = kPositionsPerBar / st.bass_hits;
        for (int bar = 0; bar < kBarsPerSong; ++bar) {
            for (int hit = 0; hit < st.bass_hits; ++hit) {
                const int tone = hit % 2 == 0 ? chord_tone(prog[bar], key, 0) : chord_tone(prog[bar], key, 2);
                add(4, 36 + tone % 12, bar * kPositionsPerBar + hit * len, len - 2, hit == 0 ? 6.0 : 0.0);
            }
        }
    }

    if (unit(rng) < st.lead_prob) {
        const int cls = choose(st.lead);
        const int len = kPositionsPerBar / st.lead_hits;
        int pitch = st.lead_register;
        for (int bar = 0; bar < kBarsPerSong; ++bar) {
            for (int hit = 0; hit < st.lead_hits; ++hit) {
                if (hit > 0 && unit(rng) < 0.25) continue;
                // step toward a chord tone near the current pitch
                const int tone = chord_tone(prog[bar], key, std::uniform_int_distribution<int>(0, chord_size(prog[bar]) - 1)(rng));
                int target = pitch - ((pitch - tone) % 12 + 12) % 12;
                if (pitch - target > 6) target += 12;
                target = std::clamp(target, st.lead_register - 9, st.lead_register + 9);
                pitch = target;
                add(cls, pitch, bar * kPositionsPerBar + hit * len, hit + 1 == st.lead_hits ? len : len * 3 / 4, 2.0);
            }
        }
    }

    if (st.drum_hits > 0 && unit(rng) < st.drum_prob) {
        const int len = kPositionsPerBar / st.drum_hits;
        for (int bar = 0; bar < kBarsPerSong; ++bar) {
            for (int hit = 0; hit < st.drum_hits; ++hit) {
                add(kDrumClass, hit % 2 == 0 ? st.drum_pitch_a : st.drum_pitch_b, bar * kPositionsPerBar + hit * len, 3, hit == 0 ? 8.0 : 0.0);
            }
        }
    }

    canonicalize(song);
    piece.song = snap_to_vocabulary(song);
    return piece;
}

inline std::vector<Piece> make_corpus(int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Piece> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(make_piece(rng));
    return out;
}

}  // namespace remigen::synth
