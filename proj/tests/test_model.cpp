#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "remigen/inference.hpp"
#include "remigen/model.hpp"

using namespace remigen;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_head = 8;
    c.max_seq_len = 64;
    return c;
}

std::vector<int> random_ids(std::mt19937_64& rng, int n, int vocab) {
    std::uniform_int_distribution<int> d(0, vocab - 1);
    std::vector<int> ids(n);
    for (auto& x : ids) x = d(rng);
    return ids;
}

/// Random weights with non-unit gains so every parameter carries gradient.
ModelParams<double> perturbed(const ModelConfig& c, std::uint64_t seed) {
    auto p = init_params<double>(c, seed, 0.3);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> n(1.0, 0.2);
    for (auto& l : p.layers) {
        for (auto& g : {&l.attn_norm, &l.ffn_norm}) {
            for (Eigen::Index i = 0; i < g->size(); ++i) (*g)(i) = n(rng);
        }
    }
    for (Eigen::Index i = 0; i < p.final_norm.size(); ++i) p.final_norm(i) = n(rng);
    return p;
}

}  // namespace

TEST(ModelConfig, Validation) {
    ModelConfig c = tiny_config();
    EXPECT_NO_THROW(c.validate());
    c.d_model = 15;
    EXPECT_THROW(c.validate(), Error);
    c = tiny_config();
    c.d_head = 7;
    c.d_model = 14;
    EXPECT_THROW(c.validate(), Error);
    c = tiny_config();
    c.vocab_size = 100;
    EXPECT_THROW(c.validate(), Error);
    EXPECT_EQ(model_config_from_json(to_json(tiny_config())), [] {
        auto c = tiny_config();
        c.ffn_dim = c.hidden_dim();
        return c;
    }());
}

TEST(Model, ShapesAndParameterCount) {
    const auto c = tiny_config();
    const auto p = init_params<float>(c, 1);
    const std::size_t d = 16, h = static_cast<std::size_t>(c.hidden_dim()), v = 532;
    EXPECT_EQ(h, 48u);
    EXPECT_EQ(p.parameter_count(), v * d * 2 + d + 2 * (2 * d + 4 * d * d + 3 * d * h));
    std::mt19937_64 rng(2);
    const auto ids = random_ids(rng, 10, c.vocab_size);
    const auto lp = forward(p, c, ids);
    EXPECT_EQ(lp.rows(), 10);
    EXPECT_EQ(lp.cols(), 532);
}

TEST(Model, LogProbsNormalized) {
    const auto c = tiny_config();
    const auto p = init_params<float>(c, 3, 0.5);
    std::mt19937_64 rng(4);
    const auto lp = forward(p, c, random_ids(rng, 40, c.vocab_size));
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
        const double mx = lp.row(r).maxCoeff();
        const double lse = mx + std::log((lp.row(r).array().cast<double>() - mx).exp().sum());
        EXPECT_NEAR(lse, 0.0, 1e-5);
    }
}

TEST(Model, CausalityBitExact) {
    const auto c = tiny_config();
    const auto p = init_params<float>(c, 5, 0.3);
    std::mt19937_64 rng(6);
    const auto ids = random_ids(rng, 30, c.vocab_size);
    const auto base = forward(p, c, ids);
    for (int t : {0, 7, 15, 29}) {
        auto changed = ids;
        changed[t] = (changed[t] + 17) % c.vocab_size;
        const auto out = forward(p, c, changed);
        for (int r = 0; r < t; ++r) ASSERT_TRUE((out.row(r).array() == base.row(r).array()).all()) << "t=" << t << " row " << r;
        if (t + 1 < 30) EXPECT_FALSE((out.row(t).array() == base.row(t).array()).all());
    }
}

TEST(Model, RmsNormScaleInvariance) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix<double> x(5, 16);
    RowVector<double> g(16);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = n(rng);
    const auto base = rms_norm(x, g, 0.0);
    for (double alpha : {1e-3, 0.5, 3.0, 1e4}) {
        const Matrix<double> scaled = x * alpha;
        EXPECT_LE((rms_norm(scaled, g, 0.0) - base).cwiseAbs().maxCoeff(), 1e-6) << alpha;
    }
    // With the configured epsilon the invariance holds to 1e-6 for unit-scale rows.
    for (double alpha : {0.5, 3.0}) {
        const Matrix<double> scaled = x * alpha;
        EXPECT_LE((rms_norm(scaled, g, 1e-6) - rms_norm(x, g, 1e-6)).cwiseAbs().maxCoeff(), 1e-5) << alpha;
    }
    // Each normalized row has unit RMS before the gain.
    const RowVector<double> ones = RowVector<double>::Ones(16);
    const auto unit = rms_norm(x, ones, 0.0);
    for (Eigen::Index r = 0; r < unit.rows(); ++r) EXPECT_NEAR(unit.row(r).squaredNorm() / 16.0, 1.0, 1e-12);
}

TEST(Model, SwigluAtZero) {
    std::mt19937_64 rng(8);
    std::normal_distribution<float> n(0.0f, 1.0f);
    Matrix<float> wg(16, 48), wu(16, 48), wd(48, 16);
    for (auto* m : {&wg, &wu, &wd}) {
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
    }
    const auto y = swiglu<float>(Matrix<float>::Zero(3, 16), wg, wu, wd);
    EXPECT_TRUE((y.array() == 0.0f).all());
}

TEST(Model, RopeRelativeOffsetInvariance) {
    const int dh = 8, heads = 2;
    const RopeTable<double> rope(256, dh, 10000.0);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix<double> q(1, dh * heads), k(1, dh * heads);
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        q.data()[i] = n(rng);
        k.data()[i] = n(rng);
    }
    auto score = [&](int i, int j) {
        Matrix<double> qi = q, kj = k;
        apply_rope(qi, rope, heads, dh, i);
        apply_rope(kj, rope, heads, dh, j);
        return qi.row(0).dot(kj.row(0));
    };
    for (auto [i, j] : std::vector<std::pair<int, int>>{{3, 1}, {10, 10}, {0, 20}, {50, 7}}) {
        for (int delta : {1, 13, 100}) EXPECT_NEAR(score(i, j), score(i + delta, j + delta), 1e-5);
    }
    // Rotation preserves the norm and inverse undoes it.
    Matrix<double> r = q;
    apply_rope(r, rope, heads, dh, 77);
    EXPECT_NEAR(r.norm(), q.norm(), 1e-12);
    apply_rope(r, rope, heads, dh, 77, true);
    EXPECT_LE((r - q).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, ZeroOutputProjectionGivesUniformLoss) {
    const auto c = tiny_config();
    auto p = init_params<double>(c, 10);
    p.output.setZero();
    std::mt19937_64 rng(11);
    const auto ids = random_ids(rng, 20, c.vocab_size);
    const std::vector<std::uint8_t> mask(ids.size(), 1);
    EXPECT_NEAR(loss(p, c, ids, mask), std::log(532.0), 1e-6);
    EXPECT_THROW(loss(p, c, ids, std::vector<std::uint8_t>(ids.size(), 0)), Error);
}

TEST(Model, GradientMatchesFiniteDifferences) {
    const auto c = tiny_config();
    auto p = perturbed(c, 12);
    std::mt19937_64 rng(13);
    const auto ids = random_ids(rng, 12, c.vocab_size);
    std::vector<std::uint8_t> mask(ids.size(), 1);
    mask[0] = 0;
    mask[5] = 0;
    ModelParams<double> g;
    loss_and_grad(p, c, ids, mask, g);

    std::vector<double> analytic;
    g.visit([&](const std::string&, const double* d, Eigen::Index n, bool) { analytic.insert(analytic.end(), d, d + n); });
    std::vector<double*> slots;
    p.visit([&](const std::string&, double* d, Eigen::Index n, bool) {
        for (Eigen::Index i = 0; i < n; ++i) slots.push_back(d + i);
    });
    ASSERT_EQ(slots.size(), analytic.size());
    // Fourth-order central stencil: truncation O(h^4) lets h stay large enough
    // that rounding in the loss does not swamp small gradients.
    const double h = 1e-3;
    double worst = 0.0;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const double keep = *slots[i];
        auto at = [&](double x) {
            *slots[i] = x;
            return loss(p, c, ids, mask);
        };
        const double fd = (8 * (at(keep + h) - at(keep - h)) - (at(keep + 2 * h) - at(keep - 2 * h))) / (12 * h);
        *slots[i] = keep;
        const double a = analytic[i];
        worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
        num += (a - fd) * (a - fd);
        den += a * a;
    }
    EXPECT_LT(std::sqrt(num / den), 1e-4);
    EXPECT_LT(worst, 1e-4);
}

TEST(Model, KvCacheMatchesFullForward) {
    const auto c = tiny_config();
    const auto p = init_params<double>(c, 14, 0.3);
    std::mt19937_64 rng(15);
    const auto ids = random_ids(rng, 25, c.vocab_size);
    const auto full = forward(p, c, ids);
    DecodeSession<double> s(p, c);
    for (int t = 0; t < 25; ++t) {
        Matrix<double> logits = s.step(ids[t]);
        log_softmax_rows(logits);
        EXPECT_LE((logits.row(0) - full.row(t)).cwiseAbs().maxCoeff(), 1e-10) << t;
    }
}

TEST(Model, SequenceLimits) {
    const auto c = tiny_config();
    const auto p = init_params<float>(c, 16);
    const std::vector<int> long_ids(65, 1);
    try {
        forward(p, c, long_ids);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SequenceTooLong);
    }
    EXPECT_THROW(forward(p, c, std::vector<int>{600}), Error);
    DecodeSession<float> s(p, c);
    for (int i = 0; i < 64; ++i) s.step(1);
    EXPECT_THROW(s.step(1), Error);
}

TEST(Model, EmbedIsDeterministicAndIndependent) {
    const auto c = tiny_config();
    const auto p = init_params<float>(c, 17, 0.3);
    std::mt19937_64 rng(18);
    const auto a = random_ids(rng, 20, 528);
    const auto b = random_ids(rng, 33, 528);
    const auto ea = embed(p, c, a);
    EXPECT_EQ(ea.size(), 16);
    const auto eb = embed(p, c, b);
    EXPECT_TRUE((embed(p, c, a).array() == ea.array()).all());
    EXPECT_LE((embed(p, c, b) - eb).cwiseAbs().maxCoeff(), 1e-6);
    // Pad positions are excluded from the mean.
    auto padded = a;
    padded.push_back(vocab::kPad);
    const auto ep = embed(p, c, padded);
    EXPECT_LE((ep - ea).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Model, FloatMatchesDouble) {
    const auto c = tiny_config();
    const auto pd = init_params<double>(c, 19, 0.2);
    const auto pf = pd.cast<float>();
    std::mt19937_64 rng(20);
    const auto ids = random_ids(rng, 30, c.vocab_size);
    const auto a = forward(pd, c, ids);
    const auto b = forward(pf, c, ids);
    EXPECT_LE((a - b.cast<double>()).cwiseAbs().maxCoeff(), 1e-4);
}
