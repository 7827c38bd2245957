#pragma once

// REMI+ conversion between NoteSong and token ids, plus the incremental
// grammar used for validation and constrained decoding.
//
// Full sequence:  [BOS] prefix... SEP body
// Body:           (Bar group*){4} EOS
// Group:          Position_p [Tempo] [Chord, only p in {0, 24}] note*
// Note:           Instrument_c (Pitch | PitchDrum when c = 16) Velocity Duration
//
// Bar 0 opens with Position_0 Tempo. Positions ascend strictly within a bar,
// notes ascend strictly by (instrument, pitch) within a group, groups are
// never empty and a note's duration may not run past unit 192.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "remigen/chord.hpp"
#include "remigen/error.hpp"
#include "remigen/song.hpp"
#include "remigen/vocab.hpp"

namespace remigen {

using Tokens = std::vector<int>;

class BodyGrammar {
public:
    bool accepts(int token) const {
        using enum TokenCategory;
        if (token < 0 || token >= vocab::kBaseVocabSize) return false;
        const TokenCategory cat = vocab::category_of(token);
        switch (phase_) {
            case Phase::ExpectBar: return cat == Bar;
            case Phase::BarOpen:
                if (bars_ == 1) return token == vocab::position_token(0);
                return cat == Position || closes_bar(token);
            case Phase::GroupOpen: {
                if (needs_first_tempo()) return cat == Tempo;
                if (cat == Tempo) return group_empty();
                if (cat == Chord) return !has_chord_ && notes_ == 0 && (position_ == 0 || position_ == kHalfBarLength);
                if (cat == Instrument) return instrument_viable(vocab::value_of(token));
                if (group_empty()) return false;
                if (cat == Position) return vocab::value_of(token) > position_;
                return closes_bar(token);
            }
            case Phase::NeedPitch: {
                const bool drum = current_class_ == kDrumClass;
                if (cat != (drum ? PitchDrum : Pitch)) return false;
                return std::make_pair(current_class_, vocab::value_of(token)) > std::make_pair(last_class_, last_pitch_);
            }
            case Phase::NeedVelocity: return cat == Velocity;
            case Phase::NeedDuration:
                return cat == Duration && onset() + vocab::duration_value(vocab::value_of(token)) <= kSongLength;
            case Phase::Done: return false;
        }
        return false;
    }

    /// Returns false (state unchanged) when the token is not accepted.
    bool advance(int token) {
        if (!accepts(token)) return false;
        using enum TokenCategory;
        const TokenCategory cat = vocab::category_of(token);
        if (token == vocab::kEos) {
            phase_ = Phase::Done;
            return true;
        }
        switch (cat) {
            case Bar:
                ++bars_;
                position_ = -1;
                phase_ = Phase::BarOpen;
                break;
            case Position:
                position_ = vocab::value_of(token);
                has_tempo_ = has_chord_ = false;
                notes_ = 0;
                last_class_ = last_pitch_ = -1;
                ++groups_in_bar_;
                if (phase_ == Phase::BarOpen) groups_in_bar_ = 1;
                phase_ = Phase::GroupOpen;
                break;
            case Tempo: has_tempo_ = true; break;
            case Chord: has_chord_ = true; break;
            case Instrument:
                current_class_ = vocab::value_of(token);
                phase_ = Phase::NeedPitch;
                break;
            case Pitch:
            case PitchDrum:
                last_class_ = current_class_;
                last_pitch_ = vocab::value_of(token);
                phase_ = Phase::NeedVelocity;
                break;
            case Velocity: phase_ = Phase::NeedDuration; break;
            case Duration:
                ++notes_;
                phase_ = Phase::GroupOpen;
                break;
            case Special: break;
        }
        return true;
    }

    bool finished() const { return phase_ == Phase::Done; }
    int bars() const { return bars_; }

    /// Fewest tokens that complete a valid body from this state.
    int min_tokens_to_finish() const {
        const int closing = kBarsPerSong - bars_ + 1;
        switch (phase_) {
            case Phase::ExpectBar: return 2 + closing;
            case Phase::BarOpen: return (bars_ == 1 ? 2 : 0) + closing;
            case Phase::GroupOpen: return (needs_first_tempo() || group_empty() ? 1 : 0) + closing;
            case Phase::NeedPitch: return 3 + closing;
            case Phase::NeedVelocity: return 2 + closing;
            case Phase::NeedDuration: return 1 + closing;
            case Phase::Done: return 0;
        }
        return 0;
    }

private:
    enum class Phase { ExpectBar, BarOpen, GroupOpen, NeedPitch, NeedVelocity, NeedDuration, Done };

    bool group_empty() const { return !has_tempo_ && !has_chord_ && notes_ == 0; }
    bool needs_first_tempo() const { return bars_ == 1 && groups_in_bar_ == 1 && !has_tempo_; }
    int onset() const { return (bars_ - 1) * kPositionsPerBar + position_; }
    bool closes_bar(int token) const {
        if (token == vocab::kBar) return bars_ < kBarsPerSong;
        if (token == vocab::kEos) return bars_ == kBarsPerSong;
        return false;
    }
    bool instrument_viable(int cls) const {
        if (cls > last_class_) return true;
        return cls == last_class_ && last_pitch_ < 127;
    }

    Phase phase_ = Phase::ExpectBar;
    int bars_ = 0;
    int position_ = -1;
    int groups_in_bar_ = 0;
    bool has_tempo_ = false;
    bool has_chord_ = false;
    int notes_ = 0;
    int current_class_ = -1;
    int last_class_ = -1;
    int last_pitch_ = -1;
};

/// Condition prefix ordering: instruments ascending, chords ascending, then at
/// most one each of tempo, pitch, velocity, duration.
class PrefixGrammar {
public:
    static std::optional<int> rank_of(int token) {
        using enum TokenCategory;
        if (token < 0 || token >= vocab::kEventCount) return std::nullopt;
        switch (vocab::category_of(token)) {
            case Instrument: return 0;
            case Chord: return 1;
            case Tempo: return 2;
            case Pitch: return 3;
            case Velocity: return 4;
            case Duration: return 5;
            default: return std::nullopt;
        }
    }

    bool accepts(int token) const {
        if (token == vocab::kSep) return true;
        const auto rank = rank_of(token);
        if (!rank) return false;
        if (*rank < 2) return std::make_pair(*rank, token) > std::make_pair(last_rank_, last_token_);
        return *rank > last_rank_;
    }

    bool advance(int token) {
        if (!accepts(token)) return false;
        if (token == vocab::kSep) {
            done_ = true;
            return true;
        }
        last_rank_ = *rank_of(token);
        last_token_ = token;
        return true;
    }

    bool finished() const { return done_; }

private:
    int last_rank_ = -1;
    int last_token_ = -1;
    bool done_ = false;
};

struct SyntaxVerdict {
    bool valid = true;
    std::size_t error_index = 0;
    std::string reason;
};

/// Index where the body starts: after SEP if the sequence carries a prefix,
/// after a leading BOS otherwise.
inline std::size_t body_start(std::span<const int> ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == vocab::kSep) return i + 1;
        if (ids[i] == vocab::kBar) break;
    }
    return (!ids.empty() && ids[0] == vocab::kBos) ? 1 : 0;
}

inline SyntaxVerdict validate_syntax(std::span<const int> ids) {
    std::size_t i = 0;
    if (!ids.empty() && ids[0] == vocab::kBos) ++i;
    const std::size_t body = body_start(ids);
    if (body > i) {
        PrefixGrammar prefix;
        for (; i < body; ++i) {
            if (!prefix.advance(ids[i])) return {false, i, "invalid condition prefix token"};
        }
    }
    BodyGrammar g;
    for (; i < ids.size(); ++i) {
        if (g.finished()) return {false, i, "token after EOS"};
        if (!g.advance(ids[i])) {
            const int t = ids[i];
            std::string what = (t >= 0 && t < vocab::kBaseVocabSize) ? vocab::token_name(t) : std::to_string(t);
            return {false, i, "unexpected " + what};
        }
    }
    if (!g.finished()) return {false, ids.size(), "sequence ended before EOS"};
    return {};
}

/// Song with every value moved onto the vocabulary grid: velocities and
/// tempos to bin centers, durations to the nearest bin that still fits
/// before the window end and the next note of the same key.
inline NoteSong snap_to_vocabulary(const NoteSong& song) {
    NoteSong out = song;
    canonicalize(out);
    // A duration may grow only up to the next onset of the same key.
    std::array<std::array<int, 128>, kInstrumentClasses> next_onset;
    for (auto& row : next_onset) row.fill(kSongLength);
    for (std::size_t i = out.notes.size(); i-- > 0;) {
        auto& n = out.notes[i];
        int& limit = next_onset[n.instrument_class][n.pitch];
        n.velocity = vocab::velocity_center(vocab::velocity_bin(n.velocity));
        n.duration = vocab::duration_value(vocab::duration_bin(n.duration, limit - n.onset));
        limit = n.onset;
    }
    for (auto& t : out.tempo_changes) t.bpm = vocab::tempo_center(vocab::tempo_bin(t.bpm));
    canonicalize(out);
    return out;
}

/// Body tokens (ending in EOS) for a valid song.
inline Tokens tokenize(const NoteSong& input) {
    check_song(input);
    const NoteSong song = snap_to_vocabulary(input);
    const auto chords = detect_song_chords(song);
    Tokens out;
    std::size_t note = 0;
    std::size_t tempo = 0;
    int current_bin = -1;
    for (int bar = 0; bar < kBarsPerSong; ++bar) {
        out.push_back(vocab::kBar);
        for (int p = 0; p < kPositionsPerBar; ++p) {
            const int abs = bar * kPositionsPerBar + p;
            std::optional<int> tempo_change;
            while (tempo < song.tempo_changes.size() && song.tempo_changes[tempo].position <= abs) {
                tempo_change = vocab::tempo_bin(song.tempo_changes[tempo].bpm);
                ++tempo;
            }
            if (tempo_change && *tempo_change == current_bin) tempo_change.reset();
            std::optional<ChordLabel> chord;
            if (p % kHalfBarLength == 0) chord = chords[abs / kHalfBarLength];
            const bool has_notes = note < song.notes.size() && song.notes[note].onset == abs;
            if (!tempo_change && !chord && !has_notes) continue;

            out.push_back(vocab::position_token(p));
            if (tempo_change) {
                out.push_back(vocab::tempo_token(*tempo_change));
                current_bin = *tempo_change;
            }
            if (chord) out.push_back(vocab::chord_token(*chord));
            for (; note < song.notes.size() && song.notes[note].onset == abs; ++note) {
                const auto& n = song.notes[note];
                out.push_back(vocab::instrument_token(n.instrument_class));
                out.push_back(n.instrument_class == kDrumClass ? vocab::pitch_drum_token(n.pitch) : vocab::pitch_token(n.pitch));
                out.push_back(vocab::velocity_token(vocab::velocity_bin(n.velocity)));
                out.push_back(vocab::duration_token(vocab::duration_bin(n.duration, kSongLength - n.onset)));
            }
        }
    }
    out.push_back(vocab::kEos);
    return out;
}

/// Inverse of tokenize. Accepts a bare body or a full BOS/prefix/SEP sequence;
/// chord tokens are dropped. Throws InvalidSyntax at the first bad index.
inline NoteSong detokenize(std::span<const int> ids) {
    const SyntaxVerdict verdict = validate_syntax(ids);
    if (!verdict.valid) throw Error(ErrorKind::InvalidSyntax, verdict.reason + " at index " + std::to_string(verdict.error_index), verdict.error_index);

    NoteSong song;
    song.tempo_changes.clear();
    int bar = -1;
    int position = 0;
    NoteEvent pending;
    for (std::size_t i = body_start(ids); i < ids.size(); ++i) {
        const int t = ids[i];
        const int v = t < vocab::kEventCount ? vocab::value_of(t) : 0;
        switch (vocab::category_of(t)) {
            case TokenCategory::Bar: ++bar; break;
            case TokenCategory::Position: position = bar * kPositionsPerBar + v; break;
            case TokenCategory::Tempo: song.tempo_changes.push_back({position, vocab::tempo_center(v)}); break;
            case TokenCategory::Instrument:
                pending = NoteEvent{};
                pending.instrument_class = v;
                pending.onset = position;
                break;
            case TokenCategory::Pitch:
            case TokenCategory::PitchDrum: pending.pitch = v; break;
            case TokenCategory::Velocity: pending.velocity = vocab::velocity_center(v); break;
            case TokenCategory::Duration:
                pending.duration = vocab::duration_value(v);
                song.notes.push_back(pending);
                break;
            default: break;
        }
    }
    canonicalize(song);
    return song;
}

}  // namespace remigen
