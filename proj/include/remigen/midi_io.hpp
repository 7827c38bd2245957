#pragma once

// Standard MIDI File reading (formats 0 and 1) and writing (format 1),
// quantized to the 48-units-per-bar grid used by the tokenizer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "remigen/error.hpp"
#include "remigen/song.hpp"

namespace remigen {

namespace midi {

inline constexpr int kWriteTicksPerQuarter = 12;  // one tick per position unit
inline constexpr int kDrumChannel = 9;
inline constexpr double kMicrosPerMinute = 60'000'000.0;

/// BPM value that survives a write/read cycle through an integer
/// microseconds-per-quarter tempo meta event.
inline std::uint32_t bpm_to_micros(double bpm) {
    const double us = std::round(kMicrosPerMinute / bpm);
    return static_cast<std::uint32_t>(std::clamp(us, 1.0, 16777215.0));
}
inline double micros_to_bpm(std::uint32_t micros) { return kMicrosPerMinute / static_cast<double>(micros); }
inline double representable_bpm(double bpm) { return micros_to_bpm(bpm_to_micros(bpm)); }

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    bool at_end() const { return pos_ >= bytes_.size(); }

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint8_t peek() const {
        if (at_end()) throw Error(ErrorKind::MalformedMidi, "unexpected end of data");
        return bytes_[pos_];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>((bytes_[pos_] << 8) | bytes_[pos_ + 1]);
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_ + i];
        pos_ += 4;
        return v;
    }
    std::uint32_t vlq() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            const std::uint8_t b = u8();
            v = (v << 7) | (b & 0x7F);
            if (!(b & 0x80)) return v;
        }
        throw Error(ErrorKind::MalformedMidi, "variable-length quantity longer than 4 bytes");
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw Error(ErrorKind::MalformedMidi, "unexpected end of data");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        u8(static_cast<std::uint8_t>(v >> 8));
        u8(static_cast<std::uint8_t>(v));
    }
    void u32(std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) u8(static_cast<std::uint8_t>(v >> s));
    }
    void vlq(std::uint32_t v) {
        std::uint8_t buf[5];
        int n = 0;
        buf[n++] = static_cast<std::uint8_t>(v & 0x7F);
        while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
        while (n > 0) u8(buf[--n]);
    }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    std::vector<std::uint8_t>& data() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

enum class EventKind { NoteOn, NoteOff, Program, Tempo, Other };

struct TimedEvent {
    std::uint64_t tick = 0;
    int track = 0;
    int order = 0;
    EventKind kind = EventKind::Other;
    int channel = 0;
    int a = 0;  // pitch / program
    int b = 0;  // velocity
    std::uint32_t tempo_micros = 0;
};

struct SmfContents {
    int format = 0;
    int ticks_per_quarter = 0;
    std::vector<TimedEvent> events;  // sorted by (tick, track, order)
    std::uint64_t last_tick = 0;
};

inline void read_track(ByteReader& r, int track, SmfContents& out) {
    std::uint64_t tick = 0;
    std::uint8_t running = 0;
    int order = 0;
    while (!r.at_end()) {
        tick += r.vlq();
        std::uint8_t status = r.peek();
        if (status & 0x80) {
            r.u8();
        } else {
            if (!running) throw Error(ErrorKind::MalformedMidi, "data byte without running status");
            status = running;
        }
        TimedEvent ev;
        ev.tick = tick;
        ev.track = track;
        ev.order = order++;
        if (status == 0xFF) {
            running = 0;
            const std::uint8_t type = r.u8();
            const std::uint32_t len = r.vlq();
            auto data = r.take(len);
            if (type == 0x2F) {
                out.last_tick = std::max(out.last_tick, tick);
                return;
            }
            if (type == 0x51) {
                if (len != 3) throw Error(ErrorKind::MalformedMidi, "tempo meta event must have length 3");
                ev.kind = EventKind::Tempo;
                ev.tempo_micros = (std::uint32_t{data[0]} << 16) | (std::uint32_t{data[1]} << 8) | data[2];
                if (ev.tempo_micros == 0) throw Error(ErrorKind::MalformedMidi, "zero tempo");
                out.events.push_back(ev);
            } else if (type == 0x58) {
                if (len < 2) throw Error(ErrorKind::MalformedMidi, "time signature meta event too short");
                if (data[0] != 4 || data[1] != 2) {
                    throw Error(ErrorKind::UnsupportedTimeSignature,
                                "time signature " + std::to_string(data[0]) + "/" + std::to_string(1 << data[1]));
                }
            }
        } else if (status == 0xF0 || status == 0xF7) {
            running = 0;
            r.take(r.vlq());
        } else if (status >= 0xF1) {
            throw Error(ErrorKind::MalformedMidi, "system message inside track");
        } else {
            running = status;
            const int hi = status & 0xF0;
            ev.channel = status & 0x0F;
            const int d0 = r.u8() & 0x7F;
            const int d1 = (hi == 0xC0 || hi == 0xD0) ? 0 : (r.u8() & 0x7F);
            if (hi == 0x90 && d1 > 0) {
                ev.kind = EventKind::NoteOn;
            } else if (hi == 0x80 || hi == 0x90) {
                ev.kind = EventKind::NoteOff;
            } else if (hi == 0xC0) {
                ev.kind = EventKind::Program;
            }
            ev.a = d0;
            ev.b = d1;
            if (ev.kind != EventKind::Other) out.events.push_back(ev);
        }
        out.last_tick = std::max(out.last_tick, tick);
    }
}

/// Low-level SMF decode: header plus the note, program and tempo events of
/// every track merged into one timeline.
inline SmfContents read_smf(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.remaining() < 14) throw Error(ErrorKind::MalformedMidi, "file too short for MThd header");
    auto id = r.take(4);
    if (std::string(id.begin(), id.end()) != "MThd") throw Error(ErrorKind::MalformedMidi, "missing MThd");
    const std::uint32_t header_len = r.u32();
    if (header_len < 6) throw Error(ErrorKind::MalformedMidi, "MThd chunk shorter than 6 bytes");
    SmfContents out;
    out.format = r.u16();
    const int ntracks = r.u16();
    const std::uint16_t division = r.u16();
    r.take(header_len - 6);
    if (out.format > 1) throw Error(ErrorKind::MalformedMidi, "SMF format " + std::to_string(out.format) + " unsupported");
    if (division & 0x8000) throw Error(ErrorKind::MalformedMidi, "SMPTE time division unsupported");
    if (division == 0) throw Error(ErrorKind::MalformedMidi, "zero ticks per quarter");
    out.ticks_per_quarter = division;

    for (int t = 0; t < ntracks;) {
        if (r.remaining() < 8) throw Error(ErrorKind::MalformedMidi, "missing track chunk");
        auto cid = r.take(4);
        const std::uint32_t len = r.u32();
        if (r.remaining() < len) throw Error(ErrorKind::MalformedMidi, "track chunk exceeds file size");
        auto body = r.take(len);
        if (std::string(cid.begin(), cid.end()) != "MTrk") continue;  // unknown chunk
        ByteReader tr(body);
        read_track(tr, t, out);
        ++t;
    }
    std::stable_sort(out.events.begin(), out.events.end(), [](const TimedEvent& x, const TimedEvent& y) {
        return std::tie(x.tick, x.track, x.order) < std::tie(y.tick, y.track, y.order);
    });
    return out;
}

inline std::int64_t round_div(std::int64_t num, std::int64_t den) { return (2 * num + den) / (2 * den); }

}  // namespace midi

/// Parses an SMF (format 0 or 1) into consecutive 4-bar windows quantized to
/// 48 positions per bar. Windows without notes are omitted.
inline std::vector<NoteSong> parse_midi(std::span<const std::uint8_t> bytes) {
    using namespace midi;
    const SmfContents smf = read_smf(bytes);
    const std::int64_t tpq = smf.ticks_per_quarter;
    auto to_units = [&](std::uint64_t ticks) {
        return round_div(static_cast<std::int64_t>(ticks) * (kPositionsPerBar / 4), tpq);
    };

    struct OpenNote {
        std::uint64_t tick;
        int velocity;
        int program;
    };
    struct RawNote {
        std::uint64_t on, off;
        int channel, program, pitch, velocity;
    };
    std::array<int, 16> program{};
    std::map<std::pair<int, int>, std::deque<OpenNote>> open;
    std::vector<RawNote> raw;
    std::vector<std::pair<std::int64_t, double>> tempos;  // (unit position, bpm)

    for (const auto& ev : smf.events) {
        switch (ev.kind) {
            case EventKind::Program: program[ev.channel] = ev.a; break;
            case EventKind::Tempo: tempos.emplace_back(to_units(ev.tick), micros_to_bpm(ev.tempo_micros)); break;
            case EventKind::NoteOn: open[{ev.channel, ev.a}].push_back({ev.tick, ev.b, program[ev.channel]}); break;
            case EventKind::NoteOff: {
                auto it = open.find({ev.channel, ev.a});
                if (it == open.end() || it->second.empty()) break;
                // Oldest open note whose program matches the channel's
                // current one; otherwise the oldest.
                auto& q = it->second;
                auto match = std::find_if(q.begin(), q.end(), [&](const OpenNote& o) { return o.program == program[ev.channel]; });
                if (match == q.end()) match = q.begin();
                const OpenNote on = *match;
                q.erase(match);
                raw.push_back({on.tick, ev.tick, ev.channel, on.program, ev.a, on.velocity});
                break;
            }
            case EventKind::Other: break;
        }
    }
    for (auto& [key, stack] : open) {
        for (const auto& on : stack) raw.push_back({on.tick, smf.last_tick, key.first, on.program, key.second, on.velocity});
    }

    std::map<std::int64_t, NoteSong> windows;
    for (const auto& n : raw) {
        const std::int64_t onset = to_units(n.on);
        const std::int64_t duration = std::max<std::int64_t>(1, to_units(n.off - n.on));
        const std::int64_t w = onset / kSongLength;
        NoteEvent ev;
        ev.instrument_class = n.channel == kDrumChannel ? kDrumClass : n.program / 8;
        ev.pitch = n.pitch;
        ev.velocity = n.velocity;
        ev.onset = static_cast<int>(onset - w * kSongLength);
        ev.duration = static_cast<int>(std::min<std::int64_t>(duration, kSongLength - ev.onset));
        windows[w].notes.push_back(ev);
    }

    std::vector<NoteSong> songs;
    for (auto& [w, song] : windows) {
        const std::int64_t start = w * kSongLength;
        song.tempo_changes.clear();
        double current = kDefaultBpm;
        for (const auto& [pos, bpm] : tempos) {
            if (pos <= start) current = bpm;
        }
        song.tempo_changes.push_back({0, current});
        for (const auto& [pos, bpm] : tempos) {
            if (pos > start && pos < start + kSongLength) song.tempo_changes.push_back({static_cast<int>(pos - start), bpm});
        }
        canonicalize(song);
        songs.push_back(std::move(song));
    }
    return songs;
}

/// Writes a song as SMF format 1 at 12 ticks per quarter, repeating the
/// 4-bar content `repetitions` times.
inline std::vector<std::uint8_t> write_midi(const NoteSong& song, int repetitions = 1) {
    using namespace midi;
    check_song(song);
    if (repetitions < 1) throw Error(ErrorKind::InvalidRequest, "repetitions must be >= 1");

    std::vector<int> classes;
    for (const auto& n : song.notes) classes.push_back(n.instrument_class);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    // 15 melodic channels; with all 16 melodic classes present the first and
    // last share a channel and carry a program change before every note on
    // and note off.
    constexpr std::array<int, 15> kMelodicChannels{0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15};
    std::map<int, int> channel_of;
    std::map<int, int> channel_users;
    int melodic_rank = 0;
    for (int c : classes) {
        const int ch = c == kDrumClass ? kDrumChannel : kMelodicChannels[melodic_rank++ % kMelodicChannels.size()];
        channel_of[c] = ch;
        ++channel_users[ch];
    }

    const std::uint32_t total = static_cast<std::uint32_t>(kSongLength * repetitions);
    ByteWriter w;
    w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("MThd"), 4));
    w.u32(6);
    w.u16(1);
    w.u16(static_cast<std::uint16_t>(1 + classes.size()));
    w.u16(kWriteTicksPerQuarter);

    auto write_chunk = [&](const std::vector<std::uint8_t>& body) {
        w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("MTrk"), 4));
        w.u32(static_cast<std::uint32_t>(body.size()));
        w.bytes(body);
    };

    {
        ByteWriter t;
        t.vlq(0);
        for (std::uint8_t b : {0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08}) t.u8(b);
        std::uint32_t last = 0;
        for (int r = 0; r < repetitions; ++r) {
            for (const auto& tc : song.tempo_changes) {
                const std::uint32_t tick = static_cast<std::uint32_t>(tc.position + r * kSongLength);
                const std::uint32_t us = bpm_to_micros(tc.bpm);
                t.vlq(tick - last);
                last = tick;
                for (std::uint8_t b : {0xFF, 0x51, 0x03}) t.u8(b);
                t.u8(static_cast<std::uint8_t>(us >> 16));
                t.u8(static_cast<std::uint8_t>(us >> 8));
                t.u8(static_cast<std::uint8_t>(us));
            }
        }
        t.vlq(total - last);
        for (std::uint8_t b : {0xFF, 0x2F, 0x00}) t.u8(b);
        write_chunk(t.data());
    }

    struct OutEvent {
        std::uint32_t tick;
        int rank;  // 0 = note off, 1 = note on
        int seq;
        std::array<std::uint8_t, 3> msg;
    };
    for (int c : classes) {
        const int ch = channel_of[c];
        const bool shared = channel_users[ch] > 1;
        const auto program = static_cast<std::uint8_t>(c * 8);
        std::vector<OutEvent> events;
        int seq = 0;
        for (int r = 0; r < repetitions; ++r) {
            for (const auto& n : song.notes) {
                if (n.instrument_class != c) continue;
                const auto on = static_cast<std::uint32_t>(n.onset + r * kSongLength);
                const auto off = on + static_cast<std::uint32_t>(n.duration);
                const auto p = static_cast<std::uint8_t>(n.pitch);
                events.push_back({on, 1, seq++, {static_cast<std::uint8_t>(0x90 | ch), p, static_cast<std::uint8_t>(n.velocity)}});
                events.push_back({off, 0, seq++, {static_cast<std::uint8_t>(0x80 | ch), p, 0x40}});
            }
        }
        std::sort(events.begin(), events.end(), [](const OutEvent& a, const OutEvent& b) {
            return std::tie(a.tick, a.rank, a.seq) < std::tie(b.tick, b.rank, b.seq);
        });
        ByteWriter t;
        std::uint32_t last = 0;
        if (c != kDrumClass && !shared) {
            t.vlq(0);
            t.u8(static_cast<std::uint8_t>(0xC0 | ch));
            t.u8(program);
        }
        for (const auto& e : events) {
            t.vlq(e.tick - last);
            last = e.tick;
            if (shared) {
                t.u8(static_cast<std::uint8_t>(0xC0 | ch));
                t.u8(program);
                t.vlq(0);
            }
            for (std::uint8_t b : e.msg) t.u8(b);
        }
        t.vlq(total - last);
        for (std::uint8_t b : {0xFF, 0x2F, 0x00}) t.u8(b);
        write_chunk(t.data());
    }
    return std::move(w.data());
}

}  // namespace remigen
