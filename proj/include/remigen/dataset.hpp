#pragma once

// On-disk corpus: one pair of files per 4-bar window,
//   <stem>_w<k>.tokens.json  body token ids
//   <stem>_w<k>.meta.json    {"source", "window", "conditions"}

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "remigen/conditions.hpp"
#include "remigen/error.hpp"
#include "remigen/midi_io.hpp"
#include "remigen/remi.hpp"
#include "remigen/train.hpp"

namespace remigen {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot read " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::Io, "cannot read " + path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + path.string());
    f << j.dump() << '\n';
}

struct IngestSummary {
    int files = 0;
    int skipped_time_signature = 0;
    int skipped_malformed = 0;
    int windows = 0;
    int empty_windows = 0;
};

inline nlohmann::json to_json(const IngestSummary& s) {
    return {{"files", s.files},
            {"skipped_time_signature", s.skipped_time_signature},
            {"skipped_malformed", s.skipped_malformed},
            {"windows", s.windows},
            {"empty_windows", s.empty_windows}};
}

inline bool is_midi_path(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".mid" || ext == ".midi";
}

/// Converts every MIDI file under `input` (sorted by path). Non-4/4 and
/// malformed files are skipped and counted; windows without notes are
/// dropped.
inline IngestSummary ingest_directory(const fs::path& input, const fs::path& output) {
    if (!fs::is_directory(input)) throw Error(ErrorKind::Io, "not a directory: " + input.string());
    fs::create_directories(output);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(input)) {
        if (e.is_regular_file() && is_midi_path(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    IngestSummary s;
    for (const auto& path : files) {
        ++s.files;
        std::vector<NoteSong> windows;
        try {
            windows = parse_midi(read_bytes(path));
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::UnsupportedTimeSignature) {
                ++s.skipped_time_signature;
                continue;
            }
            if (e.kind() == ErrorKind::MalformedMidi) {
                ++s.skipped_malformed;
                continue;
            }
            throw;
        }
        const std::string stem = path.stem().string();
        for (std::size_t w = 0; w < windows.size(); ++w) {
            if (windows[w].notes.empty()) {
                ++s.empty_windows;
                continue;
            }
            const std::string base = stem + "_w" + std::to_string(w);
            write_json(output / (base + ".tokens.json"), tokenize(windows[w]));
            write_json(output / (base + ".meta.json"),
                       {{"source", path.filename().string()}, {"window", w}, {"conditions", to_json(extract_metadata(windows[w]))}});
            ++s.windows;
        }
    }
    return s;
}

/// Loads every *.tokens.json with its metadata sidecar, sorted by name.
inline std::vector<TrainingExample> load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "not a directory: " + dir.string());
    std::vector<fs::path> files;
    const std::string suffix = ".tokens.json";
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.size() > suffix.size() && name.ends_with(suffix)) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<TrainingExample> out;
    for (const auto& f : files) {
        const std::string name = f.filename().string();
        const fs::path meta = f.parent_path() / (name.substr(0, name.size() - suffix.size()) + ".meta.json");
        TrainingExample ex;
        ex.body = read_json(f).get<Tokens>();
        const auto v = validate_syntax(ex.body);
        if (!v.valid) throw Error(ErrorKind::InvalidSyntax, f.string() + ": " + v.reason, v.error_index);
        ex.conditions = conditions_from_json(read_json(meta).at("conditions"));
        out.push_back(std::move(ex));
    }
    if (out.empty()) throw Error(ErrorKind::EmptyCorpus, "no token files in " + dir.string());
    return out;
}

}  // namespace remigen
