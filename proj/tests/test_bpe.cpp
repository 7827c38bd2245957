#include <random>

#include <gtest/gtest.h>

#include "remigen/bpe.hpp"
#include "remigen/conditions.hpp"
#include "remigen/synth.hpp"
#include "test_util.hpp"

using namespace remigen;
namespace v = remigen::vocab;

namespace {

Tokens random_sequence(std::mt19937_64& rng) {
    NoteSong s;
    do s = testutil::random_song(rng);
    while (s.notes.empty());
    Tokens t{v::kBos};
    const auto prefix = encode_prefix(apply_drop(extract_metadata(s), 0.5, rng));
    t.insert(t.end(), prefix.begin(), prefix.end());
    const auto body = tokenize(s);
    t.insert(t.end(), body.begin(), body.end());
    return t;
}

}  // namespace

TEST(Bpe, AbabPattern) {
    const int a = v::position_token(0), b = v::tempo_token(3);
    Tokens seq;
    for (int i = 0; i < 20; ++i) {
        seq.push_back(a);
        seq.push_back(b);
    }
    const std::vector<Tokens> corpus{seq};
    const auto model = bpe_train(corpus, 0.5);
    ASSERT_EQ(model.merges().size(), 1u);
    EXPECT_EQ(model.merges()[0], (BpeMerge{a, b, v::kBaseVocabSize}));
    const Tokens enc = model.encode(Tokens{v::kBos, v::instrument_token(2), v::kSep, a, b, a, b});
    EXPECT_EQ(enc, (Tokens{v::kBos, v::instrument_token(2), v::kSep, 532, 532}));
    EXPECT_EQ(model.decode(enc), (Tokens{v::kBos, v::instrument_token(2), v::kSep, a, b, a, b}));
    EXPECT_EQ(model.expansion(532), (std::vector<int>{a, b}));
}

TEST(Bpe, TargetOneIsIdentity) {
    std::mt19937_64 rng(1);
    std::vector<Tokens> corpus;
    for (int i = 0; i < 20; ++i) corpus.push_back(random_sequence(rng));
    const auto model = bpe_train(corpus, 1.0);
    EXPECT_TRUE(model.is_identity());
    EXPECT_EQ(model.encode(corpus[0]), corpus[0]);
    EXPECT_EQ(identity_bpe().decode(corpus[1]), corpus[1]);
}

TEST(Bpe, Errors) {
    EXPECT_THROW(bpe_train(std::vector<Tokens>{}, 0.66), Error);
    EXPECT_THROW(identity_bpe().encode(Tokens{532}), Error);
    EXPECT_THROW(identity_bpe().decode(Tokens{532}), Error);
    EXPECT_THROW(bpe_train(std::vector<Tokens>{{1, 2}}, 0.0), Error);
}

TEST(Bpe, RoundTripAndInvariants) {
    std::mt19937_64 rng(2);
    std::vector<Tokens> corpus;
    for (int i = 0; i < 300; ++i) corpus.push_back(random_sequence(rng));
    const auto model = bpe_train(corpus, 0.66);
    ASSERT_FALSE(model.is_identity());
    for (const auto& m : model.merges()) {
        for (int side : {m.left, m.right}) {
            EXPECT_LT(side, m.id);
            if (side < v::kBaseVocabSize) EXPECT_LT(side, v::kEventCount) << "special token merged";
        }
        const auto& e = model.expansion(m.id);
        EXPECT_EQ(std::count(e.begin() + 1, e.end(), v::kBar), 0) << "merge crosses a bar";
    }
    for (int i = 0; i < 500; ++i) {
        const Tokens seq = random_sequence(rng);
        const Tokens enc = model.encode(seq);
        EXPECT_LE(enc.size(), seq.size());
        const std::size_t sep = std::find(seq.begin(), seq.end(), v::kSep) - seq.begin();
        ASSERT_TRUE(std::equal(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(sep + 1), enc.begin())) << "prefix altered";
        const Tokens dec = model.decode(enc);
        ASSERT_EQ(dec, seq) << i;
        EXPECT_TRUE(validate_syntax(dec).valid);
    }
}

TEST(Bpe, JsonRoundTrip) {
    std::mt19937_64 rng(3);
    std::vector<Tokens> corpus;
    for (int i = 0; i < 50; ++i) corpus.push_back(random_sequence(rng));
    const auto model = bpe_train(corpus, 0.8);
    const auto back = BpeModel::from_json(nlohmann::json::parse(model.to_json().dump()));
    EXPECT_EQ(back.merges(), model.merges());
    EXPECT_EQ(back.merged_vocab_size(), model.merged_vocab_size());
    auto bad = model.to_json();
    bad["merges"].push_back({5000, 1, 9999});
    EXPECT_THROW(BpeModel::from_json(bad), Error);
}

TEST(Bpe, DeterministicTraining) {
    const auto corpus = synth::make_corpus(60, 5);
    std::vector<Tokens> seqs;
    for (const auto& p : corpus) seqs.push_back(tokenize(p.song));
    EXPECT_EQ(bpe_train(seqs, 0.7).merges(), bpe_train(seqs, 0.7).merges());
}

TEST(Bpe, SyntheticCorpusReachesTarget) {
    const auto corpus = synth::make_corpus(400, 9);
    std::vector<Tokens> seqs;
    for (const auto& p : corpus) seqs.push_back(tokenize(p.song));
    const auto model = bpe_train(seqs, 0.66);
    double base = 0.0, enc = 0.0;
    for (const auto& s : seqs) {
        base += static_cast<double>(s.size());
        enc += static_cast<double>(model.encode(s).size());
    }
    EXPECT_LE(enc / base, 0.70);
}

TEST(Bpe, DefaultConstructedIsIdentity) {
    const BpeModel m;
    EXPECT_TRUE(m.is_identity());
    EXPECT_EQ(m, identity_bpe());
    EXPECT_EQ(m.expansion(v::kEos), (std::vector<int>{v::kEos}));
    const Tokens t{v::kBar, v::position_token(0), v::kEos};
    EXPECT_EQ(m.decode(m.encode(t)), t);
}
