#pragma once

// Decoder-only transformer: pre-norm RMSNorm blocks with causal multi-head
// attention (rotary position embeddings on Q and K) and a SwiGLU feed-forward.
// No biases; the output projection is untied from the token embedding.
//
// Row vector convention: activations are (sequence x d_model) and a linear
// layer is `x * W` with W stored (d_in x d_out).

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "remigen/error.hpp"
#include "remigen/vocab.hpp"

namespace remigen {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct ModelConfig {
    int n_layers = 4;
    int d_model = 128;
    int n_heads = 4;
    int d_head = 32;
    int ffn_dim = 0;  // 0 = 2/3 * 4 * d_model rounded up to a multiple of 8
    int vocab_size = vocab::kBaseVocabSize;
    int max_seq_len = 1280;
    double rope_base = 10000.0;
    double norm_eps = 1e-6;

    int hidden_dim() const {
        if (ffn_dim > 0) return ffn_dim;
        const int h = (8 * d_model + 2) / 3;
        return (h + 7) / 8 * 8;
    }

    void validate() const {
        auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, m); };
        if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_head < 1) fail("model dimensions must be positive");
        if (d_model != n_heads * d_head) fail("d_model must equal n_heads * d_head");
        if (d_head % 2 != 0) fail("d_head must be even for rotary embeddings");
        if (vocab_size < vocab::kBaseVocabSize) fail("vocab_size smaller than the base vocabulary");
        if (max_seq_len < 2) fail("max_seq_len must be >= 2");
        if (!(rope_base > 1.0)) fail("rope_base must be > 1");
        if (!(norm_eps >= 0.0)) fail("norm_eps must be >= 0");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers}, {"d_model", c.d_model}, {"n_heads", c.n_heads},   {"d_head", c.d_head},
            {"ffn_dim", c.hidden_dim()}, {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
            {"rope_base", c.rope_base},   {"norm_eps", c.norm_eps}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = j.value("n_layers", c.n_layers);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_head = j.value("d_head", c.d_head);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.rope_base = j.value("rope_base", c.rope_base);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.validate();
    return c;
}

template <typename T>
struct LayerParams {
    RowVector<T> attn_norm;
    Matrix<T> wq, wk, wv, wo;
    RowVector<T> ffn_norm;
    Matrix<T> w_gate, w_up, w_down;
};

template <typename T>
struct ModelParams {
    Matrix<T> embedding;  // vocab x d
    std::vector<LayerParams<T>> layers;
    RowVector<T> final_norm;
    Matrix<T> output;  // d x vocab

    /// Visits every tensor in a fixed order as (name, data, size, is_matrix).
    template <class F>
    void visit(F&& f) {
        f(std::string("embedding"), embedding.data(), embedding.size(), true);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& l = layers[i];
            const std::string p = "layers." + std::to_string(i) + ".";
            f(p + "attn_norm", l.attn_norm.data(), l.attn_norm.size(), false);
            f(p + "wq", l.wq.data(), l.wq.size(), true);
            f(p + "wk", l.wk.data(), l.wk.size(), true);
            f(p + "wv", l.wv.data(), l.wv.size(), true);
            f(p + "wo", l.wo.data(), l.wo.size(), true);
            f(p + "ffn_norm", l.ffn_norm.data(), l.ffn_norm.size(), false);
            f(p + "w_gate", l.w_gate.data(), l.w_gate.size(), true);
            f(p + "w_up", l.w_up.data(), l.w_up.size(), true);
            f(p + "w_down", l.w_down.data(), l.w_down.size(), true);
        }
        f(std::string("final_norm"), final_norm.data(), final_norm.size(), false);
        f(std::string("output"), output.data(), output.size(), true);
    }
    template <class F>
    void visit(F&& f) const {
        const_cast<ModelParams*>(this)->visit([&](const std::string& n, T* d, Eigen::Index s, bool m) {
            f(n, static_cast<const T*>(d), s, m);
        });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        visit([&](const std::string&, const T*, Eigen::Index s, bool) { n += static_cast<std::size_t>(s); });
        return n;
    }

    void set_zero() {
        visit([](const std::string&, T* d, Eigen::Index s, bool) { std::fill(d, d + s, T(0)); });
    }

    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.embedding = embedding.template cast<U>();
        for (const auto& l : layers) {
            out.layers.push_back({l.attn_norm.template cast<U>(), l.wq.template cast<U>(), l.wk.template cast<U>(),
                                  l.wv.template cast<U>(), l.wo.template cast<U>(), l.ffn_norm.template cast<U>(),
                                  l.w_gate.template cast<U>(), l.w_up.template cast<U>(), l.w_down.template cast<U>()});
        }
        out.final_norm = final_norm.template cast<U>();
        out.output = output.template cast<U>();
        return out;
    }
};

template <typename T>
ModelParams<T> zeros_like(const ModelConfig& c) {
    const int d = c.d_model, h = c.hidden_dim(), v = c.vocab_size;
    ModelParams<T> p;
    p.embedding = Matrix<T>::Zero(v, d);
    for (int i = 0; i < c.n_layers; ++i) {
        p.layers.push_back({RowVector<T>::Zero(d), Matrix<T>::Zero(d, d), Matrix<T>::Zero(d, d), Matrix<T>::Zero(d, d),
                            Matrix<T>::Zero(d, d), RowVector<T>::Zero(d), Matrix<T>::Zero(d, h), Matrix<T>::Zero(d, h),
                            Matrix<T>::Zero(h, d)});
    }
    p.final_norm = RowVector<T>::Zero(d);
    p.output = Matrix<T>::Zero(d, v);
    return p;
}

/// N(0, std) weights, residual output projections (wo, w_down) scaled by
/// 1/sqrt(2 n_layers), unit norm gains.
template <typename T>
ModelParams<T> init_params(const ModelConfig& c, std::uint64_t seed, double std = 0.02) {
    c.validate();
    ModelParams<T> p = zeros_like<T>(c);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double residual = std / std::sqrt(2.0 * c.n_layers);
    auto fill = [&](auto& m, double s) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng) * s);
    };
    fill(p.embedding, std);
    for (auto& l : p.layers) {
        l.attn_norm.setOnes();
        l.ffn_norm.setOnes();
        fill(l.wq, std);
        fill(l.wk, std);
        fill(l.wv, std);
        fill(l.wo, residual);
        fill(l.w_gate, std);
        fill(l.w_up, std);
        fill(l.w_down, residual);
    }
    p.final_norm.setOnes();
    fill(p.output, std);
    return p;
}

// ---------------------------------------------------------------------------
// Building blocks

/// Row-wise RMSNorm: y = x / sqrt(mean(x^2) + eps) * gain. Writes the
/// per-row inverse RMS into `inv_rms` when given.
template <typename T>
Matrix<T> rms_norm(const Matrix<T>& x, const RowVector<T>& gain, double eps, ColVector<T>* inv_rms = nullptr) {
    Matrix<T> y(x.rows(), x.cols());
    if (inv_rms) inv_rms->resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T ms = x.row(r).squaredNorm() / static_cast<T>(x.cols());
        const T inv = T(1) / std::sqrt(ms + static_cast<T>(eps));
        y.row(r) = (x.row(r) * inv).cwiseProduct(gain);
        if (inv_rms) (*inv_rms)(r) = inv;
    }
    return y;
}

/// Backward of rms_norm; accumulates into dgain and returns dx.
template <typename T>
Matrix<T> rms_norm_backward(const Matrix<T>& x, const RowVector<T>& gain, const ColVector<T>& inv_rms, const Matrix<T>& dy,
                            RowVector<T>& dgain) {
    const T d = static_cast<T>(x.cols());
    Matrix<T> dx(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T inv = inv_rms(r);
        dgain += dy.row(r).cwiseProduct(x.row(r)) * inv;
        const RowVector<T> dxhat = dy.row(r).cwiseProduct(gain);
        const T dot = dxhat.dot(x.row(r));
        dx.row(r) = dxhat * inv - x.row(r) * (inv * inv * inv * dot / d);
    }
    return dx;
}

template <typename T>
T silu(T a) {
    return a / (T(1) + std::exp(-a));
}

/// SwiGLU feed-forward without biases: (silu(x Wg) * (x Wu)) Wd.
template <typename T>
Matrix<T> swiglu(const Matrix<T>& x, const Matrix<T>& w_gate, const Matrix<T>& w_up, const Matrix<T>& w_down) {
    const Matrix<T> a = x * w_gate;
    const Matrix<T> b = x * w_up;
    return (a.unaryExpr([](T v) { return silu(v); }).cwiseProduct(b)) * w_down;
}

/// Rotary tables: angle(pos, i) = pos * base^(-2i / d_head) for pair i.
template <typename T>
struct RopeTable {
    Matrix<T> cos, sin;  // rows = positions, cols = d_head / 2

    RopeTable() = default;
    RopeTable(int positions, int d_head, double base) : cos(positions, d_head / 2), sin(positions, d_head / 2) {
        for (int p = 0; p < positions; ++p) {
            for (int i = 0; i < d_head / 2; ++i) {
                const double theta = static_cast<double>(p) * std::pow(base, -2.0 * i / d_head);
                cos(p, i) = static_cast<T>(std::cos(theta));
                sin(p, i) = static_cast<T>(std::sin(theta));
            }
        }
    }
};

/// Rotates adjacent pairs (2i, 2i+1) of every head in `x` row r by the angle
/// for position (first_position + r). `inverse` rotates backwards.
template <typename T>
void apply_rope(Matrix<T>& x, const RopeTable<T>& rope, int n_heads, int d_head, int first_position = 0, bool inverse = false) {
    const int half = d_head / 2;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const int pos = first_position + static_cast<int>(r);
        T* row = x.row(r).data();
        for (int h = 0; h < n_heads; ++h) {
            T* v = row + h * d_head;
            for (int i = 0; i < half; ++i) {
                const T c = rope.cos(pos, i);
                const T s = inverse ? -rope.sin(pos, i) : rope.sin(pos, i);
                const T x0 = v[2 * i], x1 = v[2 * i + 1];
                v[2 * i] = x0 * c - x1 * s;
                v[2 * i + 1] = x0 * s + x1 * c;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Full-sequence forward and backward

template <typename T>
struct LayerCache {
    Matrix<T> x_in;
    ColVector<T> inv_rms_attn;
    Matrix<T> h_attn;
    Matrix<T> q, k, v;               // q, k after rotation
    std::vector<Matrix<T>> probs;    // per head, L x L (upper triangle zero)
    Matrix<T> attn;                  // concatenated head outputs
    Matrix<T> x_mid;
    ColVector<T> inv_rms_ffn;
    Matrix<T> h_ffn;
    Matrix<T> gate, up, act;
};

template <typename T>
struct ForwardCache {
    std::vector<int> ids;
    std::vector<LayerCache<T>> layers;
    Matrix<T> x_final;
    ColVector<T> inv_rms_final;
    Matrix<T> hidden;     // after the final RMSNorm
    Matrix<T> log_probs;  // L x vocab
};

template <typename T>
const RopeTable<T>& rope_table(const ModelConfig& c) {
    thread_local RopeTable<T> table;
    thread_local int cached_positions = 0, cached_head = 0;
    thread_local double cached_base = 0.0;
    if (cached_positions != c.max_seq_len || cached_head != c.d_head || cached_base != c.rope_base) {
        table = RopeTable<T>(c.max_seq_len, c.d_head, c.rope_base);
        cached_positions = c.max_seq_len;
        cached_head = c.d_head;
        cached_base = c.rope_base;
    }
    return table;
}

template <typename T>
void log_softmax_rows(Matrix<T>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const T mx = m.row(r).maxCoeff();
        const T lse = mx + std::log((m.row(r).array() - mx).exp().sum());
        m.row(r).array() -= lse;
    }
}

/// Runs the model over `ids`, filling `cache` with everything the backward
/// pass needs. Returns per-position next-token log-probabilities.
template <typename T>
const Matrix<T>& forward(const ModelParams<T>& p, const ModelConfig& c, std::span<const int> ids, ForwardCache<T>& cache) {
    const int L = static_cast<int>(ids.size());
    if (L > c.max_seq_len) throw Error(ErrorKind::SequenceTooLong, std::to_string(L) + " > max_seq_len " + std::to_string(c.max_seq_len));
    if (L == 0) throw Error(ErrorKind::SequenceTooLong, "empty sequence");
    const int H = c.n_heads, dh = c.d_head;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const auto& rope = rope_table<T>(c);

    cache.ids.assign(ids.begin(), ids.end());
    Matrix<T> x(L, c.d_model);
    for (int t = 0; t < L; ++t) {
        if (ids[t] < 0 || ids[t] >= c.vocab_size) throw Error(ErrorKind::UnknownToken, "token id " + std::to_string(ids[t]));
        x.row(t) = p.embedding.row(ids[t]);
    }
    cache.layers.resize(p.layers.size());
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
        const auto& w = p.layers[li];
        auto& lc = cache.layers[li];
        lc.x_in = x;
        lc.h_attn = rms_norm(x, w.attn_norm, c.norm_eps, &lc.inv_rms_attn);
        lc.q.noalias() = lc.h_attn * w.wq;
        lc.k.noalias() = lc.h_attn * w.wk;
        lc.v.noalias() = lc.h_attn * w.wv;
        apply_rope(lc.q, rope, H, dh);
        apply_rope(lc.k, rope, H, dh);
        lc.probs.resize(H);
        lc.attn.resize(L, c.d_model);
        for (int h = 0; h < H; ++h) {
            Matrix<T> s = (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose()) * scale;
            for (int i = 0; i < L; ++i) {
                const T mx = s.row(i).head(i + 1).maxCoeff();
                T sum = 0;
                for (int j = 0; j <= i; ++j) {
                    s(i, j) = std::exp(s(i, j) - mx);
                    sum += s(i, j);
                }
                for (int j = 0; j <= i; ++j) s(i, j) /= sum;
                for (int j = i + 1; j < L; ++j) s(i, j) = 0;
            }
            lc.attn.middleCols(h * dh, dh).noalias() = s * lc.v.middleCols(h * dh, dh);
            lc.probs[h] = std::move(s);
        }
        x.noalias() += lc.attn * w.wo;
        lc.x_mid = x;
        lc.h_ffn = rms_norm(x, w.ffn_norm, c.norm_eps, &lc.inv_rms_ffn);
        lc.gate.noalias() = lc.h_ffn * w.w_gate;
        lc.up.noalias() = lc.h_ffn * w.w_up;
        lc.act = lc.gate.unaryExpr([](T v) { return silu(v); }).cwiseProduct(lc.up);
        x.noalias() += lc.act * w.w_down;
    }
    cache.x_final = x;
    cache.hidden = rms_norm(x, p.final_norm, c.norm_eps, &cache.inv_rms_final);
    cache.log_probs.noalias() = cache.hidden * p.output;
    log_softmax_rows(cache.log_probs);
    return cache.log_probs;
}

template <typename T>
Matrix<T> forward(const ModelParams<T>& p, const ModelConfig& c, std::span<const int> ids) {
    ForwardCache<T> cache;
    forward(p, c, ids, cache);
    return std::move(cache.log_probs);
}

/// Backpropagates d(loss)/d(logits) through a filled cache, accumulating
/// parameter gradients into `g`.
template <typename T>
void backward(const ModelParams<T>& p, const ModelConfig& c, const ForwardCache<T>& cache, const Matrix<T>& dlogits, ModelParams<T>& g) {
    const int L = static_cast<int>(cache.ids.size());
    const int H = c.n_heads, dh = c.d_head;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const auto& rope = rope_table<T>(c);

    g.output.noalias() += cache.hidden.transpose() * dlogits;
    Matrix<T> dhidden = dlogits * p.output.transpose();
    Matrix<T> dx = rms_norm_backward(cache.x_final, p.final_norm, cache.inv_rms_final, dhidden, g.final_norm);

    for (int li = static_cast<int>(p.layers.size()) - 1; li >= 0; --li) {
        const auto& w = p.layers[li];
        const auto& lc = cache.layers[li];
        auto& gw = g.layers[li];

        // feed-forward
        gw.w_down.noalias() += lc.act.transpose() * dx;
        const Matrix<T> dact = dx * w.w_down.transpose();
        Matrix<T> dgate(L, dact.cols()), dup(L, dact.cols());
        for (Eigen::Index i = 0; i < dact.size(); ++i) {
            const T a = lc.gate.data()[i];
            const T sig = T(1) / (T(1) + std::exp(-a));
            const T s = a * sig;
            dup.data()[i] = dact.data()[i] * s;
            dgate.data()[i] = dact.data()[i] * lc.up.data()[i] * sig * (T(1) + a * (T(1) - sig));
        }
        gw.w_gate.noalias() += lc.h_ffn.transpose() * dgate;
        gw.w_up.noalias() += lc.h_ffn.transpose() * dup;
        Matrix<T> dh_ffn = dgate * w.w_gate.transpose();
        dh_ffn.noalias() += dup * w.w_up.transpose();
        dx += rms_norm_backward(lc.x_mid, w.ffn_norm, lc.inv_rms_ffn, dh_ffn, gw.ffn_norm);

        // attention
        gw.wo.noalias() += lc.attn.transpose() * dx;
        const Matrix<T> dattn = dx * w.wo.transpose();
        Matrix<T> dq(L, c.d_model), dk(L, c.d_model), dv(L, c.d_model);
        for (int h = 0; h < H; ++h) {
            const auto& P = lc.probs[h];
            const auto dO = dattn.middleCols(h * dh, dh);
            dv.middleCols(h * dh, dh).noalias() = P.transpose() * dO;
            Matrix<T> dP = dO * lc.v.middleCols(h * dh, dh).transpose();
            for (int i = 0; i < L; ++i) {
                T dot = 0;
                for (int j = 0; j <= i; ++j) dot += dP(i, j) * P(i, j);
                for (int j = 0; j <= i; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot) * scale;
                for (int j = i + 1; j < L; ++j) dP(i, j) = 0;
            }
            dq.middleCols(h * dh, dh).noalias() = dP * lc.k.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh).noalias() = dP.transpose() * lc.q.middleCols(h * dh, dh);
        }
        apply_rope(dq, rope, H, dh, 0, true);
        apply_rope(dk, rope, H, dh, 0, true);
        gw.wq.noalias() += lc.h_attn.transpose() * dq;
        gw.wk.noalias() += lc.h_attn.transpose() * dk;
        gw.wv.noalias() += lc.h_attn.transpose() * dv;
        Matrix<T> dh_attn = dq * w.wq.transpose();
        dh_attn.noalias() += dk * w.wk.transpose();
        dh_attn.noalias() += dv * w.wv.transpose();
        dx += rms_norm_backward(lc.x_in, w.attn_norm, lc.inv_rms_attn, dh_attn, gw.attn_norm);
    }
    for (int t = 0; t < L; ++t) g.embedding.row(cache.ids[t]) += dx.row(t);
}

/// Sum of -log p(ids[t+1] | ids[<=t]) over positions with loss_mask[t] set,
/// and the number of such positions. When `grads` is given, adds
/// d(weight * sum)/d(params) to it.
template <typename T>
std::pair<double, int> masked_nll(const ModelParams<T>& p, const ModelConfig& c, std::span<const int> ids,
                                  std::span<const std::uint8_t> loss_mask, ModelParams<T>* grads = nullptr, double weight = 1.0) {
    ForwardCache<T> cache;
    const auto& lp = forward(p, c, ids, cache);
    const int L = static_cast<int>(ids.size());
    double total = 0.0;
    int count = 0;
    Matrix<T> dlogits;
    if (grads) dlogits = Matrix<T>::Zero(L, c.vocab_size);
    for (int t = 0; t + 1 < L; ++t) {
        if (t >= static_cast<int>(loss_mask.size()) || !loss_mask[t]) continue;
        const int target = ids[t + 1];
        total -= static_cast<double>(lp(t, target));
        ++count;
        if (grads) {
            dlogits.row(t) = lp.row(t).array().exp() * static_cast<T>(weight);
            dlogits(t, target) -= static_cast<T>(weight);
        }
    }
    if (grads && count > 0) backward(p, c, cache, dlogits, *grads);
    return {total, count};
}

/// Mean masked negative log-likelihood.
template <typename T>
double loss(const ModelParams<T>& p, const ModelConfig& c, std::span<const int> ids, std::span<const std::uint8_t> loss_mask) {
    const auto [total, count] = masked_nll(p, c, ids, loss_mask);
    if (count == 0) throw Error(ErrorKind::EmptyMask, "loss mask selects no positions");
    return total / count;
}

/// Mean masked NLL and its gradient (written to `grads`, which is reset).
template <typename T>
double loss_and_grad(const ModelParams<T>& p, const ModelConfig& c, std::span<const int> ids, std::span<const std::uint8_t> loss_mask,
                     ModelParams<T>& grads) {
    int count = 0;
    for (std::size_t t = 0; t + 1 < ids.size() && t < loss_mask.size(); ++t) count += loss_mask[t] ? 1 : 0;
    if (count == 0) throw Error(ErrorKind::EmptyMask, "loss mask selects no positions");
    grads = zeros_like<T>(c);
    const auto [total, n] = masked_nll(p, c, ids, loss_mask, &grads, 1.0 / count);
    return total / n;
}

/// Mean of the final hidden states (after the final RMSNorm, before the
/// output projection) over non-pad positions.
template <typename T>
RowVector<T> embed(const ModelParams<T>& p, const ModelConfig& c, std::span<const int> ids) {
    ForwardCache<T> cache;
    forward(p, c, ids, cache);
    RowVector<T> sum = RowVector<T>::Zero(c.d_model);
    int n = 0;
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] == vocab::kPad) continue;
        sum += cache.hidden.row(static_cast<Eigen::Index>(t));
        ++n;
    }
    if (n > 0) sum /= static_cast<T>(n);
    return sum;
}

}  // namespace remigen
