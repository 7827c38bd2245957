#pragma once

// Byte-pair encoding over REMI+ body tokens. The condition prefix and special
// tokens pass through untouched, and merges never span a Bar boundary: the
// body is split into segments that each start at a Bar token.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "remigen/error.hpp"
#include "remigen/remi.hpp"
#include "remigen/vocab.hpp"

namespace remigen {

struct BpeMerge {
    int left = 0;
    int right = 0;
    int id = 0;

    bool operator==(const BpeMerge&) const = default;
};

class BpeModel {
public:
    BpeModel() : base_vocab_size_(vocab::kBaseVocabSize) { rebuild(); }
    BpeModel(int base_vocab_size, std::vector<BpeMerge> merges) : base_vocab_size_(base_vocab_size), merges_(std::move(merges)) {
        rebuild();
    }

    int base_vocab_size() const { return base_vocab_size_; }
    int merged_vocab_size() const { return base_vocab_size_ + static_cast<int>(merges_.size()); }
    const std::vector<BpeMerge>& merges() const { return merges_; }
    bool is_identity() const { return merges_.empty(); }

    /// Base tokens a (possibly merged) id stands for.
    const std::vector<int>& expansion(int id) const {
        if (id < 0 || id >= merged_vocab_size()) throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(id));
        return expansions_[id];
    }

    Tokens encode(std::span<const int> seq) const {
        for (int t : seq) {
            if (t < 0 || t >= base_vocab_size_) throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(t) + " outside base vocabulary");
        }
        Tokens out;
        out.reserve(seq.size());
        const std::size_t body = body_start(seq);
        out.insert(out.end(), seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(body));
        std::vector<int> segment;
        auto flush = [&] {
            apply_merges(segment);
            out.insert(out.end(), segment.begin(), segment.end());
            segment.clear();
        };
        for (std::size_t i = body; i < seq.size(); ++i) {
            const int t = seq[i];
            if (t == vocab::kBar || t >= vocab::kEventCount) flush();
            if (t >= vocab::kEventCount) {
                out.push_back(t);
            } else {
                segment.push_back(t);
            }
        }
        flush();
        return out;
    }

    Tokens decode(std::span<const int> seq) const {
        Tokens out;
        out.reserve(seq.size() * 2);
        for (int t : seq) {
            const auto& e = expansion(t);
            out.insert(out.end(), e.begin(), e.end());
        }
        return out;
    }

    /// Applies merges in learned order to one segment. Equivalent to one
    /// left-to-right pass per merge, skipping merges with no occurrence.
    void apply_merges(std::vector<int>& segment) const {
        if (merges_.empty()) return;
        int last_rank = -1;
        while (segment.size() >= 2) {
            int best = std::numeric_limits<int>::max();
            for (std::size_t i = 0; i + 1 < segment.size(); ++i) {
                auto it = rank_.find(key(segment[i], segment[i + 1]));
                if (it != rank_.end() && it->second > last_rank && it->second < best) best = it->second;
            }
            if (best == std::numeric_limits<int>::max()) break;
            const auto& m = merges_[best];
            std::size_t w = 0;
            for (std::size_t r = 0; r < segment.size();) {
                if (r + 1 < segment.size() && segment[r] == m.left && segment[r + 1] == m.right) {
                    segment[w++] = m.id;
                    r += 2;
                } else {
                    segment[w++] = segment[r++];
                }
            }
            segment.resize(w);
            last_rank = best;
        }
    }

    nlohmann::json to_json() const {
        auto arr = nlohmann::json::array();
        for (const auto& m : merges_) arr.push_back({m.left, m.right, m.id});
        return {{"base_vocab_size", base_vocab_size_}, {"merges", arr}};
    }

    static BpeModel from_json(const nlohmann::json& j) {
        const int base = j.at("base_vocab_size").get<int>();
        std::vector<BpeMerge> merges;
        for (const auto& m : j.at("merges")) {
            const BpeMerge merge{m.at(0).get<int>(), m.at(1).get<int>(), m.at(2).get<int>()};
            const int next = base + static_cast<int>(merges.size());
            if (merge.id != next || merge.left < 0 || merge.right < 0 || merge.left >= next || merge.right >= next)
                throw Error(ErrorKind::InvalidConfig, "BPE merge " + std::to_string(merges.size()) + " references undefined ids");
            merges.push_back(merge);
        }
        return BpeModel(base, std::move(merges));
    }

    bool operator==(const BpeModel& o) const { return base_vocab_size_ == o.base_vocab_size_ && merges_ == o.merges_; }

private:
    static std::uint64_t key(int a, int b) { return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b); }

    void rebuild() {
        expansions_.assign(merged_vocab_size(), {});
        for (int i = 0; i < base_vocab_size_; ++i) expansions_[i] = {i};
        rank_.clear();
        for (std::size_t r = 0; r < merges_.size(); ++r) {
            const auto& m = merges_[r];
            auto e = expansions_[m.left];
            e.insert(e.end(), expansions_[m.right].begin(), expansions_[m.right].end());
            expansions_[m.id] = std::move(e);
            rank_[key(m.left, m.right)] = static_cast<int>(r);
        }
    }

    int base_vocab_size_;
    std::vector<BpeMerge> merges_;
    std::vector<std::vector<int>> expansions_{};
    std::unordered_map<std::uint64_t, int> rank_;
};

inline BpeModel identity_bpe() {
    return BpeModel(vocab::kBaseVocabSize, {});
}

/// Greedy merge learning: repeatedly merges the most frequent adjacent body
/// pair (ties to the lowest pair) until total encoded length / total base
/// length <= target_ratio or no pair occurs at least twice.
inline BpeModel bpe_train(std::span<const Tokens> corpus, double target_ratio) {
    if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "BPE training corpus is empty");
    if (!(target_ratio > 0.0 && target_ratio <= 1.0)) throw Error(ErrorKind::InvalidConfig, "target_ratio must be in (0, 1]");

    // Identical segments are merged identically, so train on unique segments
    // weighted by their count.
    std::map<std::vector<int>, std::int64_t> counts;
    std::int64_t base_total = 0;
    std::int64_t fixed = 0;  // prefix and special tokens, never merged
    for (const auto& seq : corpus) {
        base_total += static_cast<std::int64_t>(seq.size());
        const std::size_t body = body_start(seq);
        fixed += static_cast<std::int64_t>(body);
        std::vector<int> segment;
        for (std::size_t i = body; i < seq.size(); ++i) {
            const int t = seq[i];
            if (t < 0 || t >= vocab::kBaseVocabSize) throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(t));
            if ((t == vocab::kBar || t >= vocab::kEventCount) && !segment.empty()) {
                ++counts[segment];
                segment.clear();
            }
            if (t >= vocab::kEventCount) ++fixed;
            else segment.push_back(t);
        }
        if (!segment.empty()) ++counts[segment];
    }
    std::vector<std::pair<std::vector<int>, std::int64_t>> words(counts.begin(), counts.end());

    auto encoded_total = [&] {
        std::int64_t n = fixed;
        for (const auto& [w, c] : words) n += c * static_cast<std::int64_t>(w.size());
        return n;
    };

    std::vector<BpeMerge> merges;
    int next_id = vocab::kBaseVocabSize;
    while (static_cast<double>(encoded_total()) / static_cast<double>(base_total) > target_ratio) {
        std::unordered_map<std::uint64_t, std::int64_t> pairs;
        for (const auto& [w, c] : words) {
            for (std::size_t i = 0; i + 1 < w.size(); ++i) {
                pairs[(static_cast<std::uint64_t>(w[i]) << 32) | static_cast<std::uint32_t>(w[i + 1])] += c;
            }
        }
        std::uint64_t best_key = 0;
        std::int64_t best_count = 0;
        for (const auto& [k, c] : pairs) {
            if (c > best_count || (c == best_count && k < best_key)) {
                best_key = k;
                best_count = c;
            }
        }
        const std::pair<int, int> best{static_cast<int>(best_key >> 32), static_cast<int>(best_key & 0xFFFFFFFFu)};
        if (best_count < 2) break;
        const BpeMerge m{best.first, best.second, next_id++};
        merges.push_back(m);
        for (auto& [w, c] : words) {
            std::size_t out = 0;
            for (std::size_t r = 0; r < w.size();) {
                if (r + 1 < w.size() && w[r] == m.left && w[r + 1] == m.right) {
                    w[out++] = m.id;
                    r += 2;
                } else {
                    w[out++] = w[r++];
                }
            }
            w.resize(out);
        }
    }
    return BpeModel(vocab::kBaseVocabSize, std::move(merges));
}

}  // namespace remigen
