#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "remigen/bpe.hpp"
#include "remigen/conditions.hpp"
#include "remigen/error.hpp"
#include "remigen/model.hpp"
#include "remigen/remi.hpp"

namespace remigen {

/// Incremental decoding with a key/value cache. Produces the same logits as
/// the full-sequence forward, one position at a time.
template <typename T>
class DecodeSession {
public:
    DecodeSession(const ModelParams<T>& p, const ModelConfig& c) : p_(p), c_(c), rope_(rope_table<T>(c)) {
        for (std::size_t i = 0; i < p.layers.size(); ++i) {
            keys_.emplace_back(c.max_seq_len, c.d_model);
            values_.emplace_back(c.max_seq_len, c.d_model);
        }
    }

    int length() const { return length_; }

    /// Feeds one token and returns the unnormalized next-token logits.
    const RowVector<T>& step(int token) {
        if (length_ >= c_.max_seq_len) throw Error(ErrorKind::SequenceTooLong, "decode session reached max_seq_len");
        if (token < 0 || token >= c_.vocab_size) throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(token));
        const int H = c_.n_heads, dh = c_.d_head, pos = length_;
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        Matrix<T> x = p_.embedding.row(token);
        for (std::size_t li = 0; li < p_.layers.size(); ++li) {
            const auto& w = p_.layers[li];
            const Matrix<T> h = rms_norm(x, w.attn_norm, c_.norm_eps);
            Matrix<T> q = h * w.wq;
            Matrix<T> k = h * w.wk;
            apply_rope(q, rope_, H, dh, pos);
            apply_rope(k, rope_, H, dh, pos);
            keys_[li].row(pos) = k.row(0);
            values_[li].row(pos).noalias() = h * w.wv;
            Matrix<T> attn(1, c_.d_model);
            for (int hd = 0; hd < H; ++hd) {
                const auto K = keys_[li].block(0, hd * dh, pos + 1, dh);
                RowVector<T> s = (q.middleCols(hd * dh, dh) * K.transpose()) * scale;
                const T mx = s.maxCoeff();
                s = (s.array() - mx).exp();
                s /= s.sum();
                attn.middleCols(hd * dh, dh).noalias() = s * values_[li].block(0, hd * dh, pos + 1, dh);
            }
            x.noalias() += attn * w.wo;
            const Matrix<T> h2 = rms_norm(x, w.ffn_norm, c_.norm_eps);
            x.noalias() += swiglu(h2, w.w_gate, w.w_up, w.w_down);
        }
        logits_.noalias() = rms_norm(x, p_.final_norm, c_.norm_eps) * p_.output;
        ++length_;
        return logits_;
    }

private:
    const ModelParams<T>& p_;
    const ModelConfig& c_;
    const RopeTable<T>& rope_;
    std::vector<Matrix<T>> keys_, values_;
    RowVector<T> logits_;
    int length_ = 0;
};

enum class SamplingMode { Greedy, TopK };

struct SamplerConfig {
    SamplingMode mode = SamplingMode::Greedy;
    int k = 5;
    double temperature = 1.0;
    int max_new_tokens = 1024;  // counted in base tokens
    bool grammar_mask = false;

    void validate() const {
        if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidConfig, "temperature must be > 0");
        if (k < 1) throw Error(ErrorKind::InvalidConfig, "k must be >= 1");
        if (max_new_tokens < 1) throw Error(ErrorKind::InvalidConfig, "max_new_tokens must be >= 1");
    }
};

/// Ids of the k largest logits among allowed ids, largest first, ties to the
/// lower id.
template <typename T>
std::vector<int> top_k_ids(std::span<const T> logits, int k, std::span<const std::uint8_t> allowed = {}) {
    std::vector<int> ids;
    for (int i = 0; i < static_cast<int>(logits.size()); ++i) {
        if (allowed.empty() || allowed[i]) ids.push_back(i);
    }
    const auto cmp = [&](int a, int b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); };
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(k), ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(), cmp);
    ids.resize(n);
    return ids;
}

/// Picks the next token. Greedy takes the argmax (lowest id on ties); top-k
/// samples from the k best after dividing logits by the temperature.
template <typename T, class Rng>
int select_token(std::span<const T> logits, const SamplerConfig& cfg, Rng& rng, std::span<const std::uint8_t> allowed = {}) {
    const auto best = top_k_ids(logits, cfg.mode == SamplingMode::Greedy ? 1 : cfg.k, allowed);
    if (best.empty()) throw Error(ErrorKind::NoValidToken, "no token permitted at this step");
    if (cfg.mode == SamplingMode::Greedy || best.size() == 1) return best.front();
    const double top = static_cast<double>(logits[best.front()]);
    std::vector<double> weights;
    weights.reserve(best.size());
    for (int id : best) weights.push_back(std::exp((static_cast<double>(logits[id]) - top) / cfg.temperature));
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    for (std::size_t i = 0; i < best.size(); ++i) {
        if (u < weights[i]) return best[i];
        u -= weights[i];
    }
    return best.back();
}

struct GenerationResult {
    Tokens prefix;  // BOS + condition prefix + SEP
    Tokens body;    // generated base tokens
    bool finished = false;  // EOS produced within max_new_tokens
    int model_tokens = 0;   // tokens sampled in model space (BPE ids)
};

/// Autoregressive generation from BOS + encode_prefix(conds). With a BPE
/// model the network emits merged ids which are expanded for the grammar and
/// the returned body.
template <typename T>
GenerationResult generate(const ModelParams<T>& p, const ModelConfig& c, const BpeModel& bpe, const ConditionSet& conds,
                          const SamplerConfig& sampler, std::uint64_t seed) {
    sampler.validate();
    if (bpe.merged_vocab_size() > c.vocab_size) throw Error(ErrorKind::ModelMismatch, "BPE vocabulary larger than model vocabulary");
    std::mt19937_64 rng(seed);
    GenerationResult out;
    out.prefix.push_back(vocab::kBos);
    const Tokens prefix = encode_prefix(conds);
    out.prefix.insert(out.prefix.end(), prefix.begin(), prefix.end());

    DecodeSession<T> session(p, c);
    const RowVector<T>* logits = nullptr;
    for (int t : out.prefix) logits = &session.step(t);

    BodyGrammar grammar;
    const int model_vocab = bpe.merged_vocab_size();
    std::vector<std::uint8_t> allowed;
    while (static_cast<int>(out.body.size()) < sampler.max_new_tokens) {
        std::span<const T> scores(logits->data(), static_cast<std::size_t>(model_vocab));
        if (sampler.grammar_mask) {
            // Base tokens left, and model tokens left counting a final EOS
            // that needs no further step.
            const int base_left = sampler.max_new_tokens - static_cast<int>(out.body.size());
            const int model_left = c.max_seq_len - session.length() + 1;
            allowed.assign(static_cast<std::size_t>(model_vocab), 0);
            for (int id = 0; id < model_vocab; ++id) {
                const auto& e = bpe.expansion(id);
                BodyGrammar probe = grammar;
                bool ok = true;
                for (int b : e) {
                    if (!probe.advance(b)) {
                        ok = false;
                        break;
                    }
                }
                const int rest = probe.min_tokens_to_finish();
                allowed[id] = ok && static_cast<int>(e.size()) + rest <= base_left && 1 + rest <= model_left;
            }
        }
        const int next = select_token(scores, sampler, rng, sampler.grammar_mask ? std::span<const std::uint8_t>(allowed) : std::span<const std::uint8_t>());
        ++out.model_tokens;
        const auto& e = bpe.expansion(next);
        for (int b : e) {
            out.body.push_back(b);
            grammar.advance(b);
        }
        if (next == vocab::kEos) {
            out.finished = true;
            break;
        }
        if (session.length() >= c.max_seq_len) break;
        logits = &session.step(next);
    }
    return out;
}

}  // namespace remigen
