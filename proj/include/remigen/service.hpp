#pragma once

// HTTP/JSON front end. Handlers are plain functions from request body to
// Reply so they can be exercised without a socket; mount() wires them into
// an httplib server.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "remigen/checkpoint.hpp"
#include "remigen/conditions.hpp"
#include "remigen/error.hpp"
#include "remigen/inference.hpp"
#include "remigen/metrics.hpp"
#include "remigen/midi_io.hpp"
#include "remigen/remi.hpp"
#include "remigen/song_json.hpp"
#include "remigen/vocab.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that clashes with Eigen.
#include <httplib.h>

namespace remigen {

inline constexpr int kMaxSamplesPerRequest = 16;
inline constexpr int kMaxRepetitions = 64;

struct Reply {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

struct GenerateRequest {
    ConditionSet conditions;
    int num_samples = 1;
    int repetitions = 1;
    double temperature = 1.0;
    int top_k = 5;
    SamplingMode mode = SamplingMode::TopK;
    std::optional<std::uint64_t> seed;
};

inline GenerateRequest generate_request_from_json(const nlohmann::json& j) {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidRequest, m); };
    if (!j.is_object()) fail("request: must be an object");
    static const std::set<std::string> known{"conditions", "num_samples", "repetitions", "temperature", "top_k", "mode", "seed"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) fail(key + ": unknown field");
    }
    GenerateRequest r;
    if (j.contains("conditions")) r.conditions = conditions_from_json(j["conditions"]);
    auto integer = [&](const char* key, int lo, int hi, int fallback) {
        if (!j.contains(key)) return fallback;
        if (!j[key].is_number_integer() || j[key].get<long long>() < lo || j[key].get<long long>() > hi)
            fail(std::string(key) + ": must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return j[key].get<int>();
    };
    r.num_samples = integer("num_samples", 1, kMaxSamplesPerRequest, r.num_samples);
    r.repetitions = integer("repetitions", 1, kMaxRepetitions, r.repetitions);
    r.top_k = integer("top_k", 1, vocab::kBaseVocabSize, r.top_k);
    if (j.contains("temperature")) {
        if (!j["temperature"].is_number() || !(j["temperature"].get<double>() > 0.0)) fail("temperature: must be a positive number");
        r.temperature = j["temperature"].get<double>();
    }
    if (j.contains("mode")) {
        const auto m = j["mode"].is_string() ? j["mode"].get<std::string>() : std::string();
        if (m == "greedy") r.mode = SamplingMode::Greedy;
        else if (m == "top_k") r.mode = SamplingMode::TopK;
        else fail("mode: must be \"greedy\" or \"top_k\"");
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) fail("seed: must be a non-negative integer");
        r.seed = j["seed"].get<std::uint64_t>();
    }
    return r;
}

inline nlohmann::json to_json(const ControllabilityReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"I", opt(r.instrument_jaccard)}, {"MP", opt(r.pitch_error)},   {"MT", opt(r.tempo_error)},
            {"MV", opt(r.velocity_error)},    {"MD", opt(r.duration_error)}, {"SC", opt(r.strict_chord)},
            {"RC", opt(r.relaxed_chord)},     {"n_samples", r.n_samples},    {"n_excluded_syntax", r.n_excluded_syntax}};
}

inline Reply json_reply(int status, const nlohmann::json& j) { return {status, "application/json", j.dump()}; }

inline Reply error_reply(int status, ErrorKind kind, const std::string& message, std::optional<int> sample = std::nullopt) {
    nlohmann::json e{{"kind", to_string(kind)}, {"message", message}};
    if (sample) e["sample_index"] = *sample;
    return json_reply(status, {{"error", e}});
}

inline int status_for(ErrorKind k) {
    switch (k) {
        case ErrorKind::InvalidRequest:
        case ErrorKind::InvalidSong:
        case ErrorKind::InvalidConfig:
        case ErrorKind::UnknownToken:
            return 400;
        default:
            return 500;
    }
}

class Service {
public:
    Service() = default;
    explicit Service(Checkpoint ck) { load(std::move(ck)); }

    void load(Checkpoint ck) {
        ck.config.validate();
        if (ck.bpe.merged_vocab_size() > ck.config.vocab_size)
            throw Error(ErrorKind::ModelMismatch, "BPE vocabulary larger than model vocabulary");
        model_ = std::make_shared<const Checkpoint>(std::move(ck));
    }

    bool ready() const { return model_ != nullptr; }

    Reply health() const { return json_reply(200, {{"ready", ready()}}); }

    Reply vocab_info() const { return json_reply(200, vocab::to_json()); }

    Reply model_info() const {
        if (!model_) return error_reply(503, ErrorKind::ModelNotLoaded, "no model loaded");
        return json_reply(200, {{"config", to_json(model_->config)},
                                {"vocab_hash", vocab::hash()},
                                {"bpe_vocab_size", model_->bpe.merged_vocab_size()},
                                {"bpe_merges", model_->bpe.merges().size()},
                                {"metadata", model_->metadata}});
    }

    Reply generate(const std::string& body) const {
        if (!model_) return error_reply(503, ErrorKind::ModelNotLoaded, "no model loaded");
        GenerateRequest req;
        try {
            req = generate_request_from_json(nlohmann::json::parse(body));
        } catch (const nlohmann::json::exception& e) {
            return error_reply(400, ErrorKind::InvalidRequest, e.what());
        } catch (const Error& e) {
            return error_reply(status_for(e.kind()), e.kind(), e.message());
        }
        const std::uint64_t seed = req.seed ? *req.seed : std::random_device{}();
        SamplerConfig sampler;
        sampler.mode = req.mode;
        sampler.k = req.top_k;
        sampler.temperature = req.temperature;
        sampler.grammar_mask = true;

        auto samples = nlohmann::json::array();
        ControllabilityAccumulator acc;
        for (int i = 0; i < req.num_samples; ++i) {
            try {
                const auto g = remigen::generate(model_->params, model_->config, model_->bpe, req.conditions, sampler, seed + static_cast<std::uint64_t>(i));
                const auto verdict = validate_syntax(g.body);
                if (!g.finished || !verdict.valid) {
                    return error_reply(500, ErrorKind::SequenceTooLong, "sample did not complete within the token budget", i);
                }
                const NoteSong song = detokenize(g.body);
                acc.add(req.conditions, g.body);
                const auto midi = write_midi(song, req.repetitions);
                nlohmann::json detected = nlohmann::json::object();
                if (!song.notes.empty()) detected = to_json(extract_metadata(song));
                samples.push_back({{"index", i},
                                   {"midi_base64", httplib::detail::base64_encode(std::string(midi.begin(), midi.end()))},
                                   {"song", to_json(song)},
                                   {"detected", detected},
                                   {"tokens", g.body},
                                   {"token_count", g.body.size()},
                                   {"syntax_valid", verdict.valid}});
            } catch (const Error& e) {
                return error_reply(e.kind() == ErrorKind::NoValidToken ? 500 : status_for(e.kind()), e.kind(), e.message(), i);
            }
        }
        return json_reply(200, {{"samples", samples},
                                {"seed", seed},
                                {"requested", to_json(quantize(req.conditions))},
                                {"controllability", to_json(acc.report())}});
    }

    /// Body: {"song": NoteSong JSON, "repetitions": n} or a bare NoteSong
    /// object. Replies with MIDI bytes.
    Reply render(const std::string& body) const {
        try {
            const auto j = nlohmann::json::parse(body);
            if (!j.is_object()) throw Error(ErrorKind::InvalidRequest, "request: must be an object");
            int reps = 1;
            if (j.contains("repetitions")) {
                if (!j["repetitions"].is_number_integer() || j["repetitions"].get<int>() < 1 || j["repetitions"].get<int>() > kMaxRepetitions)
                    throw Error(ErrorKind::InvalidRequest, "repetitions: must be an integer in [1, " + std::to_string(kMaxRepetitions) + "]");
                reps = j["repetitions"].get<int>();
            }
            const NoteSong song = song_from_json(j.contains("song") ? j["song"] : j);
            const auto midi = write_midi(song, reps);
            return {200, "audio/midi", std::string(midi.begin(), midi.end())};
        } catch (const nlohmann::json::exception& e) {
            return error_reply(400, ErrorKind::InvalidRequest, e.what());
        } catch (const Error& e) {
            return error_reply(status_for(e.kind()), e.kind(), e.message());
        }
    }

    /// Registers the API routes and, when given, a static directory at "/".
    void mount(httplib::Server& server, const std::string& static_dir = {}) const {
        auto send = [](httplib::Response& res, const Reply& r) {
            res.status = r.status;
            res.set_content(r.body, r.content_type);
        };
        server.Get("/api/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
        server.Get("/api/vocab", [this, send](const httplib::Request&, httplib::Response& res) { send(res, vocab_info()); });
        server.Get("/api/model-info", [this, send](const httplib::Request&, httplib::Response& res) { send(res, model_info()); });
        server.Post("/api/generate", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, generate(req.body)); });
        server.Post("/api/render", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, render(req.body)); });
        if (!static_dir.empty() && !server.set_mount_point("/", static_dir))
            throw Error(ErrorKind::Io, "static directory not found: " + static_dir);
    }

private:
    std::shared_ptr<const Checkpoint> model_;
};

}  // namespace remigen
