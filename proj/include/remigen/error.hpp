#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace remigen {

enum class ErrorKind {
    MalformedMidi,
    UnsupportedTimeSignature,
    InvalidSong,
    InvalidSyntax,
    EmptySong,
    EmptyCorpus,
    UnknownToken,
    SequenceTooLong,
    EmptyMask,
    NoValidToken,
    DegenerateManifold,
    InvalidConfig,
    InvalidRequest,
    ModelMismatch,
    ModelNotLoaded,
    Io,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MalformedMidi: return "MalformedMidi";
        case ErrorKind::UnsupportedTimeSignature: return "UnsupportedTimeSignature";
        case ErrorKind::InvalidSong: return "InvalidSong";
        case ErrorKind::InvalidSyntax: return "InvalidSyntax";
        case ErrorKind::EmptySong: return "EmptySong";
        case ErrorKind::EmptyCorpus: return "EmptyCorpus";
        case ErrorKind::UnknownToken: return "UnknownToken";
        case ErrorKind::SequenceTooLong: return "SequenceTooLong";
        case ErrorKind::EmptyMask: return "EmptyMask";
        case ErrorKind::NoValidToken: return "NoValidToken";
        case ErrorKind::DegenerateManifold: return "DegenerateManifold";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::InvalidRequest: return "InvalidRequest";
        case ErrorKind::ModelMismatch: return "ModelMismatch";
        case ErrorKind::ModelNotLoaded: return "ModelNotLoaded";
        case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

/// Exception carrying a machine-readable category. `index` is set for errors
/// tied to a position in a token sequence.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::optional<std::size_t> index = std::nullopt)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message), index_(index) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::optional<std::size_t> index() const noexcept { return index_; }
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
    std::optional<std::size_t> index_;
};

}  // namespace remigen
