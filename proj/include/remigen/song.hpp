#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "remigen/error.hpp"

namespace remigen {

inline constexpr int kPositionsPerBar = 48;
inline constexpr int kBarsPerSong = 4;
inline constexpr int kSongLength = kPositionsPerBar * kBarsPerSong;  // 192 units
inline constexpr int kInstrumentClasses = 17;
inline constexpr int kDrumClass = 16;
inline constexpr double kDefaultBpm = 120.0;

struct NoteEvent {
    int track_index = 0;
    int instrument_class = 0;  // 0..15 = GM program / 8, 16 = drums
    int pitch = 60;
    int velocity = 64;
    int onset = 0;     // position units, 1/48 bar
    int duration = 1;  // position units

    bool operator==(const NoteEvent&) const = default;
};

struct TempoChange {
    int position = 0;
    double bpm = kDefaultBpm;

    bool operator==(const TempoChange&) const = default;
};

/// Four bars of quantized 4/4 music.
struct NoteSong {
    std::vector<NoteEvent> notes;
    std::vector<TempoChange> tempo_changes{TempoChange{}};
    int bar_count = kBarsPerSong;

    bool operator==(const NoteSong&) const = default;
};

/// Canonical note order: (onset, instrument_class, pitch).
inline bool canonical_less(const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset, a.instrument_class, a.pitch) < std::tie(b.onset, b.instrument_class, b.pitch);
}

/// Returns a description ("notes[3].onset: ...") of the first invariant
/// violation, or nullopt when the song is valid.
inline std::optional<std::string> find_violation(const NoteSong& song) {
    if (song.bar_count != kBarsPerSong) return "bar_count: must be 4";
    if (song.tempo_changes.empty() || song.tempo_changes.front().position != 0)
        return "tempo_changes: first entry must be at position 0";
    for (std::size_t i = 0; i < song.tempo_changes.size(); ++i) {
        const auto& t = song.tempo_changes[i];
        const std::string path = "tempo_changes[" + std::to_string(i) + "]";
        if (t.position < 0 || t.position >= kSongLength) return path + ".position: must be in [0, 192)";
        if (i > 0 && t.position <= song.tempo_changes[i - 1].position)
            return path + ".position: must be strictly ascending";
        if (!(std::isfinite(t.bpm) && t.bpm > 0.0)) return path + ".bpm: must be a positive number";
    }
    for (std::size_t i = 0; i < song.notes.size(); ++i) {
        const auto& n = song.notes[i];
        const std::string path = "notes[" + std::to_string(i) + "]";
        if (n.instrument_class < 0 || n.instrument_class >= kInstrumentClasses)
            return path + ".instrument: must be in [0, 16]";
        if (n.pitch < 0 || n.pitch > 127) return path + ".pitch: must be in [0, 127]";
        if (n.velocity < 1 || n.velocity > 127) return path + ".velocity: must be in [1, 127]";
        if (n.onset < 0 || n.onset >= kSongLength) return path + ".onset: must be in [0, 192)";
        if (n.duration < 1) return path + ".duration: must be >= 1";
        if (n.onset + n.duration > kSongLength) return path + ".duration: note must end by unit 192";
        if (i > 0) {
            const auto& prev = song.notes[i - 1];
            if (!canonical_less(prev, n))
                return path + ": notes must be sorted by (onset, instrument, pitch) without duplicates";
        }
    }
    std::array<std::array<int, 128>, kInstrumentClasses> sounding_until{};
    for (std::size_t i = 0; i < song.notes.size(); ++i) {
        const auto& n = song.notes[i];
        int& until = sounding_until[n.instrument_class][n.pitch];
        if (n.onset < until)
            return "notes[" + std::to_string(i) + "].onset: overlaps an earlier note of the same instrument and pitch";
        until = n.onset + n.duration;
    }
    return std::nullopt;
}

inline void check_song(const NoteSong& song) {
    if (auto v = find_violation(song)) throw Error(ErrorKind::InvalidSong, *v);
}

/// Track index of a note is the rank of its instrument class among the
/// classes present in the song.
inline void assign_track_indices(NoteSong& song) {
    std::vector<int> classes;
    for (const auto& n : song.notes) classes.push_back(n.instrument_class);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    for (auto& n : song.notes) {
        n.track_index = static_cast<int>(std::lower_bound(classes.begin(), classes.end(), n.instrument_class) - classes.begin());
    }
}

/// Sorts notes, drops duplicate (onset, class, pitch) entries (first wins),
/// cuts same-key overlaps,
/// collapses tempo entries that share a position (last wins) or repeat the
/// previous value, and reassigns track indices.
inline void canonicalize(NoteSong& song) {
    std::stable_sort(song.notes.begin(), song.notes.end(), canonical_less);
    song.notes.erase(std::unique(song.notes.begin(), song.notes.end(),
                                 [](const NoteEvent& a, const NoteEvent& b) {
                                     return !canonical_less(a, b) && !canonical_less(b, a);
                                 }),
                     song.notes.end());
    // A key cannot sound twice on one instrument: an earlier note is cut
    // where the next note of the same instrument and pitch starts.
    std::array<std::array<int, 128>, kInstrumentClasses> last{};
    for (auto& row : last) row.fill(-1);
    for (std::size_t i = 0; i < song.notes.size(); ++i) {
        const auto& n = song.notes[i];
        if (n.instrument_class < 0 || n.instrument_class >= kInstrumentClasses || n.pitch < 0 || n.pitch > 127) continue;
        int& prev = last[n.instrument_class][n.pitch];
        if (prev >= 0) {
            auto& p = song.notes[static_cast<std::size_t>(prev)];
            p.duration = std::min(p.duration, n.onset - p.onset);
        }
        prev = static_cast<int>(i);
    }
    assign_track_indices(song);

    std::stable_sort(song.tempo_changes.begin(), song.tempo_changes.end(),
                     [](const TempoChange& a, const TempoChange& b) { return a.position < b.position; });
    std::vector<TempoChange> tempos;
    for (const auto& t : song.tempo_changes) {
        if (!tempos.empty() && tempos.back().position == t.position) tempos.back() = t;
        else tempos.push_back(t);
    }
    if (tempos.empty() || tempos.front().position != 0) tempos.insert(tempos.begin(), TempoChange{});
    std::vector<TempoChange> deduped;
    for (const auto& t : tempos) {
        if (!deduped.empty() && deduped.back().bpm == t.bpm) continue;
        deduped.push_back(t);
    }
    song.tempo_changes = std::move(deduped);
}

inline double tempo_at(const NoteSong& song, int position) {
    double bpm = song.tempo_changes.empty() ? kDefaultBpm : song.tempo_changes.front().bpm;
    for (const auto& t : song.tempo_changes) {
        if (t.position > position) break;
        bpm = t.bpm;
    }
    return bpm;
}

}  // namespace remigen
