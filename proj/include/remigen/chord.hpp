#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <span>
#include <vector>

#include "remigen/song.hpp"
#include "remigen/vocab.hpp"

namespace remigen {

using PitchClassProfile = std::array<double, 12>;

inline constexpr int kHalfBarLength = kPositionsPerBar / 2;
inline constexpr int kHalfBars = kBarsPerSong * 2;
inline constexpr double kChordScoreThreshold = 0.5;

/// Intervals above the root, indexed by ChordQuality.
inline const std::array<std::array<bool, 12>, kChordQualities>& chord_templates() {
    static const auto templates = [] {
        const std::vector<std::vector<int>> tones{
            {0, 4, 7}, {0, 3, 7}, {0, 3, 6}, {0, 4, 8}, {0, 4, 7, 10}, {0, 4, 7, 11}, {0, 3, 7, 10},
        };
        std::array<std::array<bool, 12>, kChordQualities> t{};
        for (int q = 0; q < kChordQualities; ++q) {
            for (int i : tones[q]) t[q][i] = true;
        }
        return t;
    }();
    return templates;
}

/// Template score: (weight on chord tones - weight off chord tones) / total.
inline double chord_score(const PitchClassProfile& w, const ChordLabel& c) {
    const auto& tmpl = chord_templates()[static_cast<int>(c.quality)];
    double on = 0.0, off = 0.0, total = 0.0;
    for (int pc = 0; pc < 12; ++pc) {
        total += w[pc];
        (tmpl[(pc - c.root + 12) % 12] ? on : off) += w[pc];
    }
    return total > 0.0 ? (on - off) / total : 0.0;
}

/// Best-scoring of the 84 templates, if it scores at least 0.5 and two or more
/// pitch classes are active. Ties prefer the earlier quality in
/// (maj, min, dim, aug, dom7, maj7, min7), then the lower root.
inline std::optional<ChordLabel> detect_chord(const PitchClassProfile& weights) {
    const int active = static_cast<int>(std::count_if(weights.begin(), weights.end(), [](double x) { return x > 0.0; }));
    if (active < 2) return std::nullopt;
    std::optional<ChordLabel> best;
    double best_score = 0.0;
    for (int q = 0; q < kChordQualities; ++q) {
        for (int root = 0; root < 12; ++root) {
            const ChordLabel c{root, static_cast<ChordQuality>(q)};
            const double s = chord_score(weights, c);
            if (!best || s > best_score) {
                best = c;
                best_score = s;
            }
        }
    }
    if (best_score < kChordScoreThreshold) return std::nullopt;
    return best;
}

/// Duration-weighted pitch-class activity of non-drum notes in one half bar.
inline PitchClassProfile half_bar_profile(const NoteSong& song, int half_bar) {
    PitchClassProfile w{};
    const int lo = half_bar * kHalfBarLength;
    const int hi = lo + kHalfBarLength;
    for (const auto& n : song.notes) {
        if (n.instrument_class == kDrumClass) continue;
        const int overlap = std::min(hi, n.onset + n.duration) - std::max(lo, n.onset);
        if (overlap > 0) w[n.pitch % 12] += overlap;
    }
    return w;
}

inline std::array<std::optional<ChordLabel>, kHalfBars> detect_song_chords(const NoteSong& song) {
    std::array<std::optional<ChordLabel>, kHalfBars> out;
    for (int h = 0; h < kHalfBars; ++h) out[h] = detect_chord(half_bar_profile(song, h));
    return out;
}

}  // namespace remigen
