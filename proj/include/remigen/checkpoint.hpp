#pragma once

// Checkpoint layout:
//   "RMGC" | u32 version | u32 header length | JSON header | f32 tensors
// All integers and floats little-endian. Tensors follow ModelParams::visit
// order; the header lists their names and sizes, the ModelConfig, the
// vocabulary hash and the BPE model.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "remigen/bpe.hpp"
#include "remigen/error.hpp"
#include "remigen/model.hpp"
#include "remigen/vocab.hpp"

namespace remigen {

inline constexpr char kCheckpointMagic[4] = {'R', 'M', 'G', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ModelParams<float> params;
    BpeModel bpe;
    nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

inline void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
    return v;
}

inline void put_f32(std::vector<char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
    nlohmann::json header;
    header["config"] = to_json(ck.config);
    header["vocab_hash"] = vocab::hash();
    header["bpe"] = ck.bpe.to_json();
    header["metadata"] = ck.metadata;
    auto tensors = nlohmann::json::array();
    ck.params.visit([&](const std::string& name, const float*, Eigen::Index n, bool) { tensors.push_back({{"name", name}, {"size", n}}); });
    header["tensors"] = tensors;
    const std::string h = header.dump();

    std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
    out.insert(out.end(), h.begin(), h.end());
    ck.params.visit([&](const std::string&, const float* d, Eigen::Index n, bool) {
        for (Eigen::Index i = 0; i < n; ++i) detail::put_f32(out, d[i]);
    });
    return out;
}

/// Throws ModelMismatch when the stored vocabulary hash differs from the
/// running vocabulary.
inline Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
    auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, "checkpoint: " + m); };
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) bad("bad magic");
    if (detail::get_u32(bytes.data() + 4) != kCheckpointVersion) bad("unsupported version");
    const std::uint32_t hlen = detail::get_u32(bytes.data() + 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(hlen)) bad("truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
    } catch (const nlohmann::json::exception& e) {
        bad(std::string("header: ") + e.what());
    }
    if (header.at("vocab_hash").get<std::string>() != vocab::hash()) {
        throw Error(ErrorKind::ModelMismatch, "checkpoint vocabulary hash " + header.at("vocab_hash").get<std::string>() +
                                                  " does not match " + vocab::hash());
    }
    Checkpoint ck;
    ck.config = model_config_from_json(header.at("config"));
    ck.bpe = BpeModel::from_json(header.at("bpe"));
    ck.metadata = header.value("metadata", nlohmann::json::object());
    ck.params = zeros_like<float>(ck.config);
    std::size_t offset = 12 + hlen;
    std::size_t index = 0;
    const auto& tensors = header.at("tensors");
    ck.params.visit([&](const std::string& name, float* d, Eigen::Index n, bool) {
        if (index >= tensors.size() || tensors[index].at("name") != name || tensors[index].at("size").get<Eigen::Index>() != n)
            bad("tensor table does not match config at " + name);
        ++index;
        if (bytes.size() < offset + 4 * static_cast<std::size_t>(n)) bad("truncated tensor data");
        for (Eigen::Index i = 0; i < n; ++i) {
            d[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + offset));
            offset += 4;
        }
    });
    if (ck.bpe.merged_vocab_size() > ck.config.vocab_size) bad("BPE vocabulary exceeds model vocabulary");
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot read " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace remigen
