#pragma once

// NoteSong <-> JSON:
//   {"bar_count": 4, "time_signature": [4, 4],
//    "tempo_changes": [{"position": 0, "bpm": 120.0}],
//    "notes": [{"track": 0, "instrument": 0, "pitch": 60, "velocity": 64, "onset": 0, "duration": 12}]}

#include <algorithm>
#include <string>

#include <json.hpp>

#include "remigen/error.hpp"
#include "remigen/song.hpp"

namespace remigen {

inline nlohmann::json to_json(const NoteSong& song) {
    auto tempos = nlohmann::json::array();
    for (const auto& t : song.tempo_changes) tempos.push_back({{"position", t.position}, {"bpm", t.bpm}});
    auto notes = nlohmann::json::array();
    for (const auto& n : song.notes) {
        notes.push_back({{"track", n.track_index},
                         {"instrument", n.instrument_class},
                         {"pitch", n.pitch},
                         {"velocity", n.velocity},
                         {"onset", n.onset},
                         {"duration", n.duration}});
    }
    return {{"bar_count", song.bar_count}, {"time_signature", {4, 4}}, {"tempo_changes", tempos}, {"notes", notes}};
}

/// Notes may arrive in any order; they are sorted and given track indices.
/// Every other invariant violation raises InvalidSong naming the field.
inline NoteSong song_from_json(const nlohmann::json& j) {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidSong, m); };
    if (!j.is_object()) fail("song: must be an object");
    auto integer = [&](const nlohmann::json& obj, const char* key, const std::string& path) {
        if (!obj.contains(key) || !obj[key].is_number_integer()) fail(path + "." + key + ": must be an integer");
        return obj[key].get<long long>();
    };
    auto clamp_int = [](long long v) { return static_cast<int>(std::clamp<long long>(v, -1'000'000, 1'000'000)); };

    NoteSong song;
    if (j.contains("bar_count")) song.bar_count = clamp_int(integer(j, "bar_count", "song"));
    if (j.contains("time_signature") && j["time_signature"] != nlohmann::json::array({4, 4}))
        fail("time_signature: only [4, 4] is supported");
    if (j.contains("tempo_changes")) {
        const auto& arr = j["tempo_changes"];
        if (!arr.is_array()) fail("tempo_changes: must be an array");
        song.tempo_changes.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = "tempo_changes[" + std::to_string(i) + "]";
            if (!arr[i].is_object()) fail(path + ": must be an object");
            TempoChange t;
            t.position = clamp_int(integer(arr[i], "position", path));
            if (!arr[i].contains("bpm") || !arr[i]["bpm"].is_number()) fail(path + ".bpm: must be a number");
            t.bpm = arr[i]["bpm"].get<double>();
            song.tempo_changes.push_back(t);
        }
    }
    if (!j.contains("notes") || !j["notes"].is_array()) fail("notes: must be an array");
    const auto& arr = j["notes"];
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = "notes[" + std::to_string(i) + "]";
        const auto& e = arr[i];
        if (!e.is_object()) fail(path + ": must be an object");
        NoteEvent n;
        n.instrument_class = clamp_int(integer(e, "instrument", path));
        n.pitch = clamp_int(integer(e, "pitch", path));
        n.velocity = clamp_int(integer(e, "velocity", path));
        n.onset = clamp_int(integer(e, "onset", path));
        n.duration = clamp_int(integer(e, "duration", path));
        song.notes.push_back(n);
    }
    // Range checks refer to the caller's indices, so run them before sorting.
    NoteSong single = song;
    single.notes.clear();
    check_song(single);
    for (std::size_t i = 0; i < song.notes.size(); ++i) {
        single.notes = {song.notes[i]};
        if (auto v = find_violation(single)) fail("notes[" + std::to_string(i) + "]" + v->substr(8));
    }
    std::stable_sort(song.notes.begin(), song.notes.end(), canonical_less);
    assign_track_indices(song);
    check_song(song);
    return song;
}

}  // namespace remigen
