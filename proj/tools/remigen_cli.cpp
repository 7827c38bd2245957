#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "remigen/remigen.hpp"
#include "remigen/service.hpp"

using namespace remigen;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    json j = read_json(path);
    if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, path + ": must be an object with \"model\" and \"train\" sections");
    return j;
}

/// Accepts inline JSON or @path.
json parse_inline_json(const std::string& text) {
    if (!text.empty() && text[0] == '@') return read_json(text.substr(1));
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidRequest, std::string("conditions: ") + e.what());
    }
}

BpeModel load_bpe(const std::string& path) {
    if (path.empty()) return identity_bpe();
    return BpeModel::from_json(read_json(path));
}

std::string sample_path(const std::string& out, int index, int count) {
    if (count == 1) return out;
    const fs::path p(out);
    return (p.parent_path() / (p.stem().string() + "_" + std::to_string(index) + p.extension().string())).string();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"remigen: metadata-conditioned 4-bar multitrack MIDI generation"};
    app.require_subcommand(1);

    std::string in_dir, out_path, data_dir, bpe_path, config_path, model_path, log_path, format = "csv";
    std::uint64_t seed = 0;
    bool seed_given = false;

    auto* vocab_cmd = app.add_subcommand("vocab", "Print the token vocabulary and bin tables as JSON");

    auto* synth_cmd = app.add_subcommand("synth", "Write a seeded synthetic corpus of 4-bar MIDI files");
    int synth_count = 100;
    synth_cmd->add_option("--count", synth_count, "Number of pieces")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--seed", seed, "Random seed");
    synth_cmd->add_option("--output,-o", out_path, "Output directory")->required();

    auto* ingest_cmd = app.add_subcommand("ingest", "Convert a MIDI directory into token and metadata files");
    ingest_cmd->add_option("--input,-i", in_dir, "Directory of .mid files")->required();
    ingest_cmd->add_option("--output,-o", out_path, "Output directory")->required();

    auto* tokenize_cmd = app.add_subcommand("tokenize", "Print the token sequence of each 4-bar window of a MIDI file");
    std::string midi_file;
    bool names = false;
    tokenize_cmd->add_option("file", midi_file, "MIDI file")->required();
    tokenize_cmd->add_flag("--names", names, "Print token names instead of ids");

    auto* bpe_cmd = app.add_subcommand("bpe-train", "Learn BPE merges over ingested token files");
    double ratio = 0.66;
    bpe_cmd->add_option("--data,-d", data_dir, "Ingested directory")->required();
    bpe_cmd->add_option("--ratio", ratio, "Target compressed/original length ratio")->check(CLI::Range(0.0, 1.0));
    bpe_cmd->add_option("--output,-o", out_path, "BPE model JSON")->required();

    auto* train_cmd = app.add_subcommand("train", "Train a model on ingested token files");
    train_cmd->add_option("--data,-d", data_dir, "Ingested directory")->required();
    train_cmd->add_option("--bpe", bpe_path, "BPE model JSON (default: no merges)");
    train_cmd->add_option("--config,-c", config_path, "JSON file with \"model\" and \"train\" sections");
    train_cmd->add_option("--seed", seed, "Random seed (overrides train.seed)")->each([&](const std::string&) { seed_given = true; });
    train_cmd->add_option("--output,-o", out_path, "Checkpoint path")->required();
    train_cmd->add_option("--log", log_path, "Step log CSV (step,lr,loss)");

    auto* gen_cmd = app.add_subcommand("generate", "Generate MIDI from a checkpoint");
    std::string conditions_text = "{}", mode = "top_k";
    int top_k = 5, num_samples = 1, repetitions = 1, max_new_tokens = 1024;
    double temperature = 1.0;
    bool no_mask = false;
    gen_cmd->add_option("--model,-m", model_path, "Checkpoint path")->required();
    gen_cmd->add_option("--conditions", conditions_text, "Condition JSON, inline or @file");
    gen_cmd->add_option("--mode", mode, "greedy or top_k")->check(CLI::IsMember({"greedy", "top_k"}));
    gen_cmd->add_option("--top-k", top_k, "k for top-k sampling")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--temperature", temperature, "Sampling temperature");
    gen_cmd->add_option("--num-samples,-n", num_samples, "Number of samples")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--repetitions", repetitions, "Times the 4 bars are repeated in the MIDI")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--max-new-tokens", max_new_tokens, "Token budget per sample")->check(CLI::PositiveNumber);
    gen_cmd->add_flag("--no-grammar-mask", no_mask, "Sample without the syntax mask");
    gen_cmd->add_option("--seed", seed, "Random seed");
    gen_cmd->add_option("--output,-o", out_path, "Output .mid path (suffixed _i for several samples)")->required();

    auto* eval_cmd = app.add_subcommand("evaluate", "Compute a perplexity/density/coverage/controllability report row");
    std::string regime = "superset", embed_prefix;
    bool drop_trained = false, header = false, eval_mask = false;
    int limit = 0;
    eval_cmd->add_option("--model,-m", model_path, "Checkpoint path")->required();
    eval_cmd->add_option("--data,-d", data_dir, "Ingested held-out directory")->required();
    eval_cmd->add_option("--regime", regime, "superset or subset")->check(CLI::IsMember({"superset", "subset"}));
    eval_cmd->add_flag("--drop-trained", drop_trained, "Label the row as coming from a drop-trained model");
    eval_cmd->add_option("--limit", limit, "Use at most this many held-out windows");
    eval_cmd->add_option("--seed", seed, "Random seed");
    eval_cmd->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    eval_cmd->add_flag("--header", header, "Print the CSV header line first");
    eval_cmd->add_flag("--grammar-mask", eval_mask, "Generate with the syntax mask on");
    eval_cmd->add_option("--dump-embeddings", embed_prefix, "Write real/generated embeddings with this path prefix");
    eval_cmd->add_option("--output,-o", out_path, "Write the report here instead of stdout");

    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API (model path also read from REMIGEN_MODEL)");
    std::string host = "127.0.0.1", static_dir;
    int port = 8080;
    serve_cmd->add_option("--model,-m", model_path, "Checkpoint path");
    serve_cmd->add_option("--host", host, "Bind address");
    serve_cmd->add_option("--port,-p", port, "Port")->check(CLI::Range(1, 65535));
    serve_cmd->add_option("--static", static_dir, "Directory served at /");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*vocab_cmd) {
            std::cout << vocab::to_json().dump(2) << '\n';
        } else if (*synth_cmd) {
            fs::create_directories(out_path);
            const auto pieces = synth::make_corpus(synth_count, seed);
            for (std::size_t i = 0; i < pieces.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof name, "synth_%05zu.mid", i);
                write_bytes(fs::path(out_path) / name, write_midi(pieces[i].song));
            }
            std::cout << json{{"pieces", pieces.size()}, {"seed", seed}}.dump() << '\n';
        } else if (*ingest_cmd) {
            const auto s = ingest_directory(in_dir, out_path);
            std::cout << to_json(s).dump() << '\n';
        } else if (*tokenize_cmd) {
            const auto windows = parse_midi(read_bytes(midi_file));
            for (const auto& w : windows) {
                if (w.notes.empty()) {
                    std::cout << "[]\n";
                    continue;
                }
                const Tokens t = tokenize(w);
                if (!names) {
                    std::cout << json(t).dump() << '\n';
                    continue;
                }
                auto arr = json::array();
                for (int id : t) arr.push_back(vocab::token_name(id));
                std::cout << arr.dump() << '\n';
            }
        } else if (*bpe_cmd) {
            const auto data = load_dataset(data_dir);
            std::vector<Tokens> bodies;
            std::size_t before = 0, after = 0;
            for (const auto& ex : data) bodies.push_back(ex.body);
            const BpeModel bpe = bpe_train(bodies, ratio);
            for (const auto& b : bodies) {
                before += b.size();
                after += bpe.encode(b).size();
            }
            write_json(out_path, bpe.to_json());
            std::cout << json{{"merges", bpe.merges().size()}, {"ratio", static_cast<double>(after) / static_cast<double>(before)}}.dump() << '\n';
        } else if (*train_cmd) {
            const json cfg = load_config(config_path);
            ModelConfig mc = model_config_from_json(cfg.value("model", json::object()));
            TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
            if (seed_given) tc.seed = seed;
            const BpeModel bpe = load_bpe(bpe_path);
            if (!cfg.contains("model") || !cfg["model"].contains("vocab_size")) mc.vocab_size = bpe.merged_vocab_size();
            const auto data = load_dataset(data_dir);
            std::ofstream log;
            if (!log_path.empty()) {
                log.open(log_path);
                if (!log) throw Error(ErrorKind::Io, "cannot write " + log_path);
                log << "step,lr,loss\n";
            }
            auto result = train<float>(tc, mc, data, bpe, [&](const StepLog& s) {
                if (log.is_open()) log << s.step << ',' << s.lr << ',' << s.loss << '\n';
                if (s.step % 50 == 0 || s.step == tc.total_steps) std::cerr << "step " << s.step << " loss " << s.loss << '\n';
            });
            Checkpoint ck{mc, std::move(result.params), bpe, {{"train", to_json(tc)}, {"examples", data.size()}}};
            save_checkpoint(out_path, ck);
        } else if (*gen_cmd) {
            const Checkpoint ck = load_checkpoint(model_path);
            const ConditionSet conds = conditions_from_json(parse_inline_json(conditions_text));
            SamplerConfig sc;
            sc.mode = mode == "greedy" ? SamplingMode::Greedy : SamplingMode::TopK;
            sc.k = top_k;
            sc.temperature = temperature;
            sc.max_new_tokens = max_new_tokens;
            sc.grammar_mask = !no_mask;
            auto report = json::array();
            for (int i = 0; i < num_samples; ++i) {
                const auto g = generate(ck.params, ck.config, ck.bpe, conds, sc, seed + static_cast<std::uint64_t>(i));
                const auto v = validate_syntax(g.body);
                if (!v.valid) throw Error(ErrorKind::InvalidSyntax, "sample " + std::to_string(i) + ": " + v.reason, v.error_index);
                const NoteSong song = detokenize(g.body);
                const std::string path = sample_path(out_path, i, num_samples);
                write_bytes(path, write_midi(song, repetitions));
                report.push_back({{"path", path}, {"notes", song.notes.size()}, {"tokens", g.body.size()}});
            }
            std::cout << report.dump() << '\n';
        } else if (*eval_cmd) {
            const Checkpoint ck = load_checkpoint(model_path);
            auto data = load_dataset(data_dir);
            if (limit > 0 && static_cast<std::size_t>(limit) < data.size()) data.resize(static_cast<std::size_t>(limit));
            EvalConfig ec;
            ec.regime = parse_regime(regime);
            ec.drop_trained = drop_trained;
            ec.seed = seed;
            ec.grammar_mask = eval_mask;
            ec.keep_embeddings = !embed_prefix.empty();
            const EvalRow row = evaluate_table(ck.params, ck.config, ck.bpe, data, ec);
            std::string text;
            if (format == "json") text = to_json(row).dump() + "\n";
            else text = (header ? csv_header() + "\n" : std::string()) + csv_row(row) + "\n";
            if (!embed_prefix.empty()) {
                write_embeddings(embed_prefix + "real.f32", row.real_embeddings);
                write_embeddings(embed_prefix + "generated.f32", row.generated_embeddings);
            }
            if (out_path.empty()) std::cout << text;
            else std::ofstream(out_path) << text;
        } else if (*serve_cmd) {
            if (model_path.empty()) {
                if (const char* env = std::getenv("REMIGEN_MODEL")) model_path = env;
            }
            Service service;
            if (!model_path.empty()) service.load(load_checkpoint(model_path));
            httplib::Server server;
            service.mount(server, static_dir);
            std::cerr << "listening on " << host << ':' << port << (service.ready() ? "" : " (no model loaded)") << '\n';
            if (!server.listen(host, port)) throw Error(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: Io: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
