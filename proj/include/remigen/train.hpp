#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "remigen/bpe.hpp"
#include "remigen/conditions.hpp"
#include "remigen/error.hpp"
#include "remigen/model.hpp"

namespace remigen {

struct TrainConfig {
    int batch_size = 16;
    int total_steps = 1000;
    int warmup_steps = 100;  // 2,000 at full scale
    double peak_lr = 3e-4;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;  // global norm; <= 0 disables
    double drop_probability = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, m); };
        if (batch_size < 1) fail("batch_size must be >= 1");
        if (total_steps < 1) fail("total_steps must be >= 1");
        if (warmup_steps < 0 || warmup_steps >= total_steps) fail("warmup_steps must be in [0, total_steps)");
        if (!(peak_lr > 0.0)) fail("peak_lr must be > 0");
        if (!(drop_probability >= 0.0 && drop_probability <= 1.0)) fail("drop_probability must be in [0, 1]");
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size}, {"total_steps", c.total_steps}, {"warmup_steps", c.warmup_steps},
            {"peak_lr", c.peak_lr},       {"weight_decay", c.weight_decay}, {"beta1", c.beta1},
            {"beta2", c.beta2},           {"adam_eps", c.adam_eps},       {"grad_clip", c.grad_clip},
            {"drop_probability", c.drop_probability}, {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.drop_probability = j.value("drop_probability", c.drop_probability);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

/// Linear warmup from 0 to peak over warmup_steps, then linear decay to 0 at
/// total_steps.
inline double learning_rate(const TrainConfig& c, int step) {
    if (step <= 0) return 0.0;
    if (step >= c.total_steps) return 0.0;
    if (step <= c.warmup_steps) return c.peak_lr * step / std::max(1, c.warmup_steps);
    return c.peak_lr * static_cast<double>(c.total_steps - step) / static_cast<double>(c.total_steps - c.warmup_steps);
}

/// Decoupled weight decay Adam; decay applies to matrices only.
template <typename T>
class AdamW {
public:
    AdamW(const ModelConfig& mc, const TrainConfig& tc) : tc_(tc), m_(zeros_like<T>(mc)), v_(zeros_like<T>(mc)) {}

    void step(ModelParams<T>& params, const ModelParams<T>& grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(tc_.beta1, t_);
        const double bc2 = 1.0 - std::pow(tc_.beta2, t_);
        std::vector<T*> ms, vs;
        std::vector<const T*> gs;
        m_.visit([&](const std::string&, T* d, Eigen::Index, bool) { ms.push_back(d); });
        v_.visit([&](const std::string&, T* d, Eigen::Index, bool) { vs.push_back(d); });
        grads.visit([&](const std::string&, const T* d, Eigen::Index, bool) { gs.push_back(d); });
        std::size_t k = 0;
        const T b1 = static_cast<T>(tc_.beta1), b2 = static_cast<T>(tc_.beta2);
        params.visit([&](const std::string&, T* p, Eigen::Index n, bool is_matrix) {
            T* m = ms[k];
            T* v = vs[k];
            const T* g = gs[k];
            ++k;
            const T decay = is_matrix ? static_cast<T>(1.0 - lr * tc_.weight_decay) : T(1);
            const T step_size = static_cast<T>(lr / bc1);
            const T inv_bc2 = static_cast<T>(1.0 / bc2);
            const T eps = static_cast<T>(tc_.adam_eps);
            for (Eigen::Index i = 0; i < n; ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                p[i] = p[i] * decay - step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
            }
        });
    }

private:
    TrainConfig tc_;
    ModelParams<T> m_, v_;
    int t_ = 0;
};

struct TrainingExample {
    ConditionSet conditions;  // all categories the song provides
    Tokens body;              // base tokens, ending in EOS
};

/// Model input plus a mask marking positions whose next token is a body
/// token (condition-prefix predictions are excluded).
struct AssembledSequence {
    Tokens ids;
    std::vector<std::uint8_t> loss_mask;

    bool operator==(const AssembledSequence&) const = default;
};

/// BOS + encode_prefix(conds) + body, with the body BPE-encoded.
inline AssembledSequence assemble_sequence(const ConditionSet& conds, std::span<const int> body, const BpeModel& bpe) {
    AssembledSequence s;
    s.ids.push_back(vocab::kBos);
    const Tokens prefix = encode_prefix(conds);
    s.ids.insert(s.ids.end(), prefix.begin(), prefix.end());
    const std::size_t sep = s.ids.size() - 1;
    const Tokens encoded = bpe.encode(body);
    s.ids.insert(s.ids.end(), encoded.begin(), encoded.end());
    s.loss_mask.assign(s.ids.size(), 0);
    for (std::size_t t = sep; t + 1 < s.ids.size(); ++t) s.loss_mask[t] = 1;
    return s;
}

/// Deterministic stream of training batches: examples are visited in
/// per-epoch shuffled order and each visit draws a fresh condition drop.
class BatchStream {
public:
    BatchStream(std::span<const TrainingExample> data, const TrainConfig& cfg, const BpeModel& bpe)
        : data_(data), cfg_(cfg), bpe_(bpe), order_rng_(cfg.seed), drop_rng_(cfg.seed ^ 0x9E3779B97F4A7C15ULL) {
        if (data.empty()) throw Error(ErrorKind::EmptyCorpus, "training set is empty");
        order_.resize(data.size());
        reshuffle();
    }

    std::vector<AssembledSequence> next() {
        std::vector<AssembledSequence> batch;
        for (int b = 0; b < cfg_.batch_size; ++b) {
            if (cursor_ == order_.size()) reshuffle();
            const auto& ex = data_[order_[cursor_++]];
            const ConditionSet kept = apply_drop(ex.conditions, cfg_.drop_probability, drop_rng_);
            batch.push_back(assemble_sequence(kept, ex.body, bpe_));
        }
        return batch;
    }

private:
    void reshuffle() {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), order_rng_);
        cursor_ = 0;
    }

    std::span<const TrainingExample> data_;
    TrainConfig cfg_;
    const BpeModel& bpe_;
    std::mt19937_64 order_rng_;
    std::mt19937_64 drop_rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

struct StepLog {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

template <typename T>
struct TrainResult {
    ModelParams<T> params;
    std::vector<StepLog> log;
};

/// One optimizer step over a batch; returns the mean masked NLL.
template <typename T>
double train_step(ModelParams<T>& params, ModelParams<T>& grads, AdamW<T>& opt, const ModelConfig& mc, const TrainConfig& tc,
                  const std::vector<AssembledSequence>& batch, double lr) {
    int count = 0;
    for (const auto& s : batch) {
        for (std::size_t t = 0; t + 1 < s.ids.size(); ++t) count += s.loss_mask[t];
    }
    if (count == 0) throw Error(ErrorKind::EmptyMask, "batch has no body tokens");
    grads.set_zero();
    double total = 0.0;
    for (const auto& s : batch) total += masked_nll(params, mc, s.ids, s.loss_mask, &grads, 1.0 / count).first;
    if (tc.grad_clip > 0.0) {
        double sq = 0.0;
        grads.visit([&](const std::string&, const T* d, Eigen::Index n, bool) {
            for (Eigen::Index i = 0; i < n; ++i) sq += static_cast<double>(d[i]) * d[i];
        });
        const double norm = std::sqrt(sq);
        if (norm > tc.grad_clip) {
            const T s = static_cast<T>(tc.grad_clip / norm);
            grads.visit([&](const std::string&, T* d, Eigen::Index n, bool) {
                for (Eigen::Index i = 0; i < n; ++i) d[i] *= s;
            });
        }
    }
    opt.step(params, grads, lr);
    return total / count;
}

/// Full training run. `on_step` (optional) sees each log entry as it is made.
template <typename T>
TrainResult<T> train(const TrainConfig& tc, const ModelConfig& mc, std::span<const TrainingExample> data, const BpeModel& bpe,
                     const std::function<void(const StepLog&)>& on_step = {}) {
    tc.validate();
    mc.validate();
    if (bpe.merged_vocab_size() > mc.vocab_size) throw Error(ErrorKind::InvalidConfig, "model vocab_size smaller than the BPE vocabulary");
    TrainResult<T> result{init_params<T>(mc, tc.seed), {}};
    ModelParams<T> grads = zeros_like<T>(mc);
    AdamW<T> opt(mc, tc);
    BatchStream stream(data, tc, bpe);
    for (int step = 1; step <= tc.total_steps; ++step) {
        const auto batch = stream.next();
        const double lr = learning_rate(tc, step);
        const double l = train_step(result.params, grads, opt, mc, tc, batch, lr);
        result.log.push_back({step, lr, l});
        if (on_step) on_step(result.log.back());
    }
    return result;
}

}  // namespace remigen
