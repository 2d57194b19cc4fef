#include <gtest/gtest.h>

#include "support.hpp"

using namespace morphtag;

namespace {

struct EncoderRig {
  ParameterStore store;
  CharVocab vocab;
  std::unique_ptr<CharNgramEncoder> enc;

  explicit EncoderRig(PoolingMode mode, std::uint64_t seed = 1,
                      const std::vector<std::string>& words = {"kaam", "working", "ab"}) {
    vocab = CharVocab::build(words);
    enc = std::make_unique<CharNgramEncoder>(fixture::tiny_encoder(mode, vocab.size()), store);
    Rng rng(seed);
    enc->initialize(rng);
  }
};

}  // namespace

TEST(EmbedChars, ShortWordIsPaddedToLargestOrder) {
  EncoderRig r(PoolingMode::PosHierAttn);
  const CharSequence s = prepare_word("ab", r.vocab, r.enc->config());
  ASSERT_EQ(s.ids.size(), 3u);
  EXPECT_EQ(s.ids[2], CharVocab::kPad);
  EXPECT_EQ(s.glyphs[2], "<pad>");
}

TEST(EmbedChars, LongWordIsTruncatedToMaxLength) {
  EncoderConfig cfg;
  CharVocab v = CharVocab::build(std::vector<std::string>{"a"});
  EXPECT_EQ(prepare_word(std::string(60, 'a'), v, cfg).ids.size(), 50u);
}

TEST(EmbedChars, RowsAreEmbeddingTableLookups) {
  EncoderRig r(PoolingMode::PosHierAttn);
  const CharSequence s = prepare_word("kaam", r.vocab, r.enc->config());
  const Tensor e = r.enc->embed_chars(s);
  ASSERT_EQ(e.shape(), (Tensor::Shape{4, 3}));
  const Tensor& table = r.store.get("encoder.char_emb").value;
  const std::string word = "kaam";
  for (std::size_t i = 0; i < 4; ++i) {
    const auto id = static_cast<std::size_t>(r.vocab.id(static_cast<char32_t>(word[i])));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(e.at(i, k), table.at(id, k));
  }
}

TEST(EmbedChars, EmptyWordRejected) {
  EncoderRig r(PoolingMode::PosHierAttn);
  EXPECT_THROW(r.enc->encode("", r.vocab), InputError);
}

TEST(EmbedChars, UnknownCharactersMapToUnk) {
  EncoderRig r(PoolingMode::PosHierAttn);
  const CharSequence s = prepare_word("kQz", r.vocab, r.enc->config());
  EXPECT_EQ(s.ids[1], CharVocab::kUnk);
  EXPECT_EQ(s.ids[2], CharVocab::kUnk);
  EXPECT_NE(s.ids[0], CharVocab::kUnk);
}

TEST(EmbedChars, InputIsNfcNormalizedAndCaseKept) {
  CharVocab v = CharVocab::build(std::vector<std::string>{"caf\xc3\xa9"});  // precomposed é
  const EncoderConfig cfg = fixture::tiny_encoder(PoolingMode::Attn, v.size());
  const CharSequence composed = prepare_word("caf\xc3\xa9", v, cfg);
  const CharSequence decomposed = prepare_word("cafe\xcc\x81", v, cfg);  // e + combining acute
  EXPECT_EQ(composed.ids, decomposed.ids);
  EXPECT_NE(prepare_word("Cafe", v, cfg).ids[0], prepare_word("cafe", v, cfg).ids[0]);
}

TEST(PositionAttention, SingleNgramGetsAllTheWeight) {
  Rng rng(2);
  const Tensor x = oracle::random_tensor({1, 3}, rng);
  const Tensor pos = oracle::random_tensor({4, 3}, rng);
  const std::vector<std::size_t> rows{0};
  const auto r = position_aware_attention(x, &pos, rows, oracle::random_tensor({3, 3}, rng),
                                          oracle::random_tensor({3}, rng), oracle::random_tensor({3}, rng));
  EXPECT_DOUBLE_EQ(r.alphas[0], 1.0);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(r.z[k], x.at(0, k));
}

TEST(PositionAttention, ConstantScoresAverageTheNgrams) {
  Rng rng(3);
  const Tensor x = oracle::random_tensor({4, 2}, rng);
  const Tensor pos({4, 2});
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  const auto r = position_aware_attention(x, &pos, rows, Tensor({2, 2}), Tensor({2}), oracle::random_tensor({2}, rng));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.alphas[i], 0.25, 1e-15);
  for (std::size_t k = 0; k < 2; ++k) {
    const double mean = (x.at(0, k) + x.at(1, k) + x.at(2, k) + x.at(3, k)) / 4.0;
    EXPECT_NEAR(r.z[k], mean, 1e-15);
  }
}

TEST(PositionAttention, MatchesHandEvaluation) {
  // Two bigram vectors, attention space of width 2.
  const Tensor x = Tensor::matrix({{1.0, 0.0}, {0.0, 2.0}});
  const Tensor wx = Tensor::matrix({{0.5, 0.0}, {0.0, -0.25}});
  const Tensor bx = Tensor::vector({0.1, 0.0});
  const Tensor v = Tensor::vector({1.0, 2.0});
  const Tensor pos = Tensor::matrix({{0.2, 0.0}, {0.0, 0.3}});
  const std::vector<std::size_t> rows{0, 1};
  const auto r = position_aware_attention(x, &pos, rows, wx, bx, v);
  // u1 = 1*tanh(0.5+0.2+0.1) + 2*tanh(0)          = tanh(0.8)
  // u2 = 1*tanh(0.1)         + 2*tanh(-0.5+0.3)   = tanh(0.1) + 2 tanh(-0.2)
  const double u1 = std::tanh(0.8), u2 = std::tanh(0.1) + 2.0 * std::tanh(-0.2);
  const double a1 = std::exp(u1) / (std::exp(u1) + std::exp(u2));
  EXPECT_NEAR(r.alphas[0], a1, 1e-15);
  EXPECT_NEAR(r.z[0], a1 * 1.0, 1e-15);
  EXPECT_NEAR(r.z[1], (1.0 - a1) * 2.0, 1e-15);
}

TEST(PositionAttention, RowOutsideTableIsADimensionError) {
  const Tensor x({3, 2}), pos({2, 2});
  const std::vector<std::size_t> rows{0, 1, 2};
  EXPECT_THROW(position_aware_attention(x, &pos, rows, Tensor({2, 2}), Tensor({2}), Tensor({2})), DimensionError);
}

TEST(HierAttention, SingleOrderPassesThrough) {
  Rng rng(4);
  const std::vector<Tensor> z{oracle::random_tensor({3}, rng)};
  const Tensor w = oracle::random_tensor({2, 3}, rng);
  const std::vector<const Tensor*> ws{&w};
  const auto r = hierarchical_attention(z, ws, oracle::random_tensor({2}, rng), oracle::random_tensor({2}, rng));
  EXPECT_DOUBLE_EQ(r.alphas[0], 1.0);
  EXPECT_EQ(r.output, z[0]);
}

TEST(HierAttention, OutputDimensionIsSumOfChannels) {
  EncoderConfig cfg;
  cfg.char_vocab_size = 10;
  ParameterStore store;
  CharNgramEncoder enc(cfg, store);
  Rng rng(1);
  enc.initialize(rng);
  const CharVocab v = CharVocab::build(std::vector<std::string>{"abcdefgh"});
  EXPECT_EQ(enc.encode("abcdef", v).enhanced.size(), 128u);
}

TEST(HierAttention, MatchesHandEvaluationForTwoOrders) {
  const std::vector<Tensor> z{Tensor::vector({1.0, -1.0}), Tensor::vector({0.5})};
  const Tensor w1 = Tensor::matrix({{1.0, 0.0}}), w2 = Tensor::matrix({{2.0}});
  const std::vector<const Tensor*> ws{&w1, &w2};
  const Tensor b = Tensor::vector({0.25}), v = Tensor::vector({1.5});
  const auto r = hierarchical_attention(z, ws, b, v);
  const double u1 = 1.5 * std::tanh(1.0 + 0.25), u2 = 1.5 * std::tanh(1.0 + 0.25);
  // Equal scores by construction.
  EXPECT_NEAR(u1, u2, 1e-15);
  EXPECT_NEAR(r.alphas[0], 0.5, 1e-15);
  EXPECT_EQ(r.output.size(), 3u);
  EXPECT_NEAR(r.output[0], 0.5, 1e-15);
  EXPECT_NEAR(r.output[1], -0.5, 1e-15);
  EXPECT_NEAR(r.output[2], 0.25, 1e-15);

  const Tensor w2b = Tensor::matrix({{-2.0}});
  const std::vector<const Tensor*> wsb{&w1, &w2b};
  const auto r2 = hierarchical_attention(z, wsb, b, v);
  const double s1 = 1.5 * std::tanh(1.25), s2 = 1.5 * std::tanh(-0.75);
  const double a1 = std::exp(s1) / (std::exp(s1) + std::exp(s2));
  EXPECT_NEAR(r2.alphas[0], a1, 1e-15);
  EXPECT_NEAR(r2.output[2], (1.0 - a1) * 0.5, 1e-15);
}

TEST(EncodeWord, ShapeContractInEveryMode) {
  for (PoolingMode m : {PoolingMode::MaxPool, PoolingMode::Attn, PoolingMode::PosAttn, PoolingMode::PosHierAttn}) {
    EncoderRig r(m);
    const WordEncoding w = r.enc->encode("working", r.vocab);
    EXPECT_EQ(w.token.size(), 4u);
    EXPECT_EQ(w.enhanced.size(), 7u);
    EXPECT_TRUE(w.token.all_finite());
  }
}

TEST(EncodeWord, IdenticalWordsGiveIdenticalOutputs) {
  EncoderRig r(PoolingMode::PosHierAttn);
  const WordEncoding a = r.enc->encode("kaam", r.vocab), b = r.enc->encode("kaam", r.vocab);
  EXPECT_EQ(a.token, b.token);
  EXPECT_EQ(a.enhanced, b.enhanced);
}

TEST(EncodeWord, ZeroPositionTablesMakePosAttnEqualAttn) {
  EncoderRig r(PoolingMode::PosAttn, 5);
  for (std::size_t o = 0; o < 3; ++o) r.enc->position_table(o).value.fill(0.0);
  for (const char* word : {"kaam", "working", "ab", "a"}) {
    r.enc->set_pooling(PoolingMode::PosAttn);
    const WordEncoding pos = r.enc->encode(word, r.vocab);
    r.enc->set_pooling(PoolingMode::Attn);
    const WordEncoding plain = r.enc->encode(word, r.vocab);
    EXPECT_EQ(pos.token, plain.token) << word;
  }
}

TEST(EncodeWord, PositionTermChangesOutputWhenNonZero) {
  EncoderRig r(PoolingMode::PosAttn, 5);
  for (std::size_t o = 0; o < 3; ++o)
    for (double& v : r.enc->position_table(o).value.values()) v *= 20.0;
  const WordEncoding pos = r.enc->encode("working", r.vocab);
  r.enc->set_pooling(PoolingMode::Attn);
  EXPECT_NE(pos.token, r.enc->encode("working", r.vocab).token);
}

TEST(EncodeWord, TraceAlphasAreSimplexElements) {
  EncoderRig r(PoolingMode::PosHierAttn);
  const WordEncoding w = r.enc->encode("working", r.vocab);
  const AttentionTrace tr = r.enc->trace(w, "working");
  ASSERT_EQ(tr.orders, (std::vector<int>{1, 2, 3}));
  for (std::size_t o = 0; o < 3; ++o) {
    double s = 0.0;
    for (const auto& g : tr.ngrams[o]) {
      EXPECT_GE(g.alpha, 0.0);
      s += g.alpha;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_EQ(tr.ngrams[o].size(), 7u - tr.orders[o] + 1);
  }
  EXPECT_EQ(tr.ngrams[2][4].text, "ing");
  EXPECT_EQ(tr.ngrams[2][4].position, 4u);
  double hs = 0.0;
  for (double a : tr.hier_alphas) hs += a;
  EXPECT_NEAR(hs, 1.0, 1e-12);
}

TEST(EncodeWord, MaxPoolTraceIsEmpty) {
  EncoderRig r(PoolingMode::MaxPool);
  EXPECT_TRUE(r.enc->trace(r.enc->encode("kaam", r.vocab), "kaam").orders.empty());
}

TEST(EncodeWord, TotalOverArbitraryUnicodeWords) {
  EncoderRig r(PoolingMode::PosHierAttn);
  Rng rng(8);
  const std::vector<char32_t> pool{U'a', U'é', U'क', U'ा', U'\U0001F600', U'中', U'Z', U'-'};
  for (int i = 0; i < 100; ++i) {
    std::string word;
    const std::size_t len = 1 + rng.below(20);
    for (std::size_t k = 0; k < len; ++k) word += unicode::to_utf8(pool[rng.below(pool.size())]);
    const WordEncoding w = r.enc->encode(word, r.vocab);
    ASSERT_TRUE(w.token.all_finite() && w.enhanced.all_finite()) << word;
  }
}

TEST(EncodeWord, DimensionErrorWhenPositionTableTooShort) {
  // Construct a sequence longer than max_word_len bypassing prepare_word.
  EncoderRig r(PoolingMode::PosAttn);
  CharSequence s;
  s.ids.assign(12, CharVocab::kUnk);
  s.glyphs.assign(12, "?");
  EXPECT_THROW(r.enc->forward(s), DimensionError);
}

namespace {

double encoder_grad_error(PoolingMode mode, std::uint64_t seed, bool highway) {
  ParameterStore store;
  CharVocab vocab = CharVocab::build(std::vector<std::string>{"abcdef"});
  EncoderConfig cfg = fixture::tiny_encoder(mode, vocab.size());
  cfg.highway = highway;
  CharNgramEncoder enc(cfg, store);
  fixture::scramble(store, seed);
  Rng rng(seed + 100);
  const Tensor rt = oracle::random_tensor({4}, rng), re = oracle::random_tensor({7}, rng);
  const char* word = seed % 2 ? "abcfed" : "ba";
  auto loss = [&] {
    const WordEncoding w = enc.encode(word, vocab);
    return ops::dot(w.token.values(), rt.values()) + ops::dot(w.enhanced.values(), re.values());
  };
  auto acc = [&] {
    const WordEncoding w = enc.encode(word, vocab);
    enc.backward(w, rt.values(), re.values());
  };
  std::vector<Parameter*> ps = enc.parameters();
  return grad_check_parameters("encode_word", ps, loss, acc, 1e-5);
}

}  // namespace

class EncoderGradient : public ::testing::TestWithParam<PoolingMode> {};

TEST_P(EncoderGradient, FullEncoderPassesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    EXPECT_LT(encoder_grad_error(GetParam(), seed, true), 1e-4) << "seed " << seed;
  }
  EXPECT_LT(encoder_grad_error(GetParam(), 3, false), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllModes, EncoderGradient,
                         ::testing::Values(PoolingMode::MaxPool, PoolingMode::Attn, PoolingMode::PosAttn,
                                           PoolingMode::PosHierAttn),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(EncoderConfig, ValidationRejectsBadSettings) {
  EncoderConfig c;
  c.orders = {1, 2, 60};
  c.channels = {1, 1, 1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.channels = {32, 0, 64};
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.attention_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_pooling("avgpool"), ConfigError);
}
