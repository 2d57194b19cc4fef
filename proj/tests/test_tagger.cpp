#include <gtest/gtest.h>

#include "support.hpp"

using namespace morphtag;

// ---------------------------------------------------------------------------
// BiLSTM

namespace {

std::vector<std::vector<double>> random_seq(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> xs(n, std::vector<double>(d));
  for (auto& x : xs)
    for (double& v : x) v = rng.uniform(-1, 1);
  return xs;
}

}  // namespace

TEST(BiLstm, SingleStepConcatenatesBothDirections) {
  ParameterStore s;
  BiLstm lstm(s, "l", 3, 2);
  fixture::scramble(s, 1);
  Rng rng(2);
  const auto xs = random_seq(1, 3, rng);
  const auto r = lstm.forward(xs);
  const auto f = oracle::lstm(s.get("l.fwd.W").value, s.get("l.fwd.b").value, xs);
  const auto b = oracle::lstm(s.get("l.bwd.W").value, s.get("l.bwd.b").value, xs);
  ASSERT_EQ(r.outputs[0].size(), 4u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(r.outputs[0][k], f[0][k], 1e-15);
    EXPECT_NEAR(r.outputs[0][2 + k], b[0][k], 1e-15);
  }
}

TEST(BiLstm, ZeroWeightsGiveZeroOutputs) {
  ParameterStore s;
  BiLstm lstm(s, "l", 3, 4);
  Rng rng(3);
  for (const auto& out : lstm.forward(random_seq(5, 3, rng)).outputs)
    for (double v : out) EXPECT_EQ(v, 0.0);
}

TEST(BiLstm, MatchesPerGateRecursion) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParameterStore s;
    BiLstm lstm(s, "l", 4, 3);
    fixture::scramble(s, seed, 1.0);
    Rng rng(seed + 50);
    const auto xs = random_seq(3, 4, rng);
    const auto r = lstm.forward(xs);
    const auto f = oracle::lstm(s.get("l.fwd.W").value, s.get("l.fwd.b").value, xs);
    const std::vector<std::vector<double>> rev(xs.rbegin(), xs.rend());
    const auto b = oracle::lstm(s.get("l.bwd.W").value, s.get("l.bwd.b").value, rev);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_NEAR(r.outputs[t][k], f[t][k], 1e-14);
        EXPECT_NEAR(r.outputs[t][3 + k], b[2 - t][k], 1e-14);
      }
  }
}

TEST(BiLstm, EmptySequenceRejected) {
  ParameterStore s;
  BiLstm lstm(s, "l", 2, 2);
  EXPECT_THROW(lstm.forward(std::vector<std::vector<double>>{}), InputError);
}

TEST(BiLstm, ForgetGateBiasStartsAtOne) {
  ParameterStore s;
  BiLstm lstm(s, "l", 2, 3);
  Rng rng(1);
  lstm.initialize(rng);
  const Tensor& b = s.get("l.fwd.b").value;
  for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(b[k], (k >= 3 && k < 6) ? 1.0 : 0.0);
}

TEST(BiLstm, GradientsPassFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ParameterStore s;
    BiLstm lstm(s, "l", 3, 2);
    fixture::scramble(s, seed, 0.8);
    Rng rng(seed + 7);
    auto xs = random_seq(4, 3, rng);
    const auto weights = random_seq(4, 4, rng);
    auto loss = [&] {
      double total = 0.0;
      const auto r = lstm.forward(xs);
      for (std::size_t t = 0; t < 4; ++t) total += ops::dot(r.outputs[t], weights[t]);
      return total;
    };
    std::vector<std::vector<double>> gx(4, std::vector<double>(3, 0.0));
    auto acc = [&] {
      for (auto& g : gx) std::fill(g.begin(), g.end(), 0.0);
      lstm.backward(lstm.forward(xs), weights, &gx);
    };
    std::vector<Parameter*> ps;
    for (auto& p : s.all()) ps.push_back(&p);
    EXPECT_LT(grad_check_parameters("bilstm", ps, loss, acc, 1e-5), 1e-4);
    // Input gradient.
    acc();
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t k = 0; k < 3; ++k) {
        const double saved = xs[t][k];
        xs[t][k] = saved + 1e-5;
        const double up = loss();
        xs[t][k] = saved - 1e-5;
        const double down = loss();
        xs[t][k] = saved;
        EXPECT_NEAR(gx[t][k], (up - down) / 2e-5, 1e-7);
      }
  }
}

// ---------------------------------------------------------------------------
// CRF

TEST(Crf, UniformSingleTokenHasLogTwoLoss) {
  const Tensor em({1, 2}), tr({4, 4});
  const std::vector<int> y0{0}, y1{1};
  EXPECT_NEAR(crf_log_likelihood(em, y0, tr), std::log(2.0), 1e-15);
  EXPECT_NEAR(crf_log_likelihood(em, y1, tr), std::log(2.0), 1e-15);
}

TEST(Crf, DominantGoldEmissionGivesNearZeroLoss) {
  Tensor em({3, 2});
  const std::vector<int> gold{1, 0, 1};
  for (std::size_t t = 0; t < 3; ++t) em.at(t, static_cast<std::size_t>(gold[t])) = 50.0;
  EXPECT_LT(crf_log_likelihood(em, gold, Tensor({4, 4})), 1e-15);
}

TEST(Crf, InvalidLabelIndexRejected) {
  const std::vector<int> bad{2};
  EXPECT_THROW(crf_log_likelihood(Tensor({1, 2}), bad, Tensor({4, 4})), InputError);
}

TEST(Crf, ForwardMatchesExhaustiveEnumeration) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t t_len = 1 + rng.below(4), l = 1 + rng.below(3);
    const Tensor em = oracle::random_tensor({t_len, l}, rng, 2.0);
    const Tensor tr = oracle::crf_transitions(l, rng, 2.0);
    EXPECT_NEAR(crf_log_partition(em, tr), oracle::brute_log_z(em, tr), 1e-8);
  }
}

TEST(Crf, RandomFourByThreeAgainstAll81Paths) {
  Rng rng(81);
  const Tensor em = oracle::random_tensor({4, 3}, rng, 2.0);
  const Tensor tr = oracle::crf_transitions(3, rng, 2.0);
  EXPECT_EQ(oracle::all_paths(4, 3).size(), 81u);
  EXPECT_NEAR(crf_log_partition(em, tr), oracle::brute_log_z(em, tr), 1e-8);
  const auto [path, score] = oracle::brute_argmax(em, tr);
  const auto v = viterbi_decode(em, tr);
  EXPECT_EQ(v.path, path);
  EXPECT_NEAR(v.score, score, 1e-12);
}

TEST(Crf, ProbabilitiesOverAllPathsSumToOne) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 1000);
    const std::size_t t_len = 1 + rng.below(4), l = 1 + rng.below(3);
    const Tensor em = oracle::random_tensor({t_len, l}, rng, 2.0);
    const Tensor tr = oracle::crf_transitions(l, rng, 2.0);
    double total = 0.0;
    for (const auto& y : oracle::all_paths(t_len, l)) total += std::exp(-crf_log_likelihood(em, y, tr));
    EXPECT_NEAR(total, 1.0, 1e-8);
  }
}

TEST(Viterbi, ZeroTransitionsGivePerPositionArgmax) {
  Rng rng(5);
  const Tensor em = oracle::random_tensor({6, 4}, rng);
  const auto v = viterbi_decode(em, Tensor({6, 6}));
  for (std::size_t t = 0; t < 6; ++t) {
    std::size_t best = 0;
    for (std::size_t y = 1; y < 4; ++y)
      if (em.at(t, y) > em.at(t, best)) best = y;
    EXPECT_EQ(v.path[t], static_cast<int>(best));
  }
}

TEST(Viterbi, SingleTokenIncludesBoundaryTransitions) {
  const Tensor em = Tensor::matrix({{1.0, 0.8}});
  Tensor tr({4, 4});
  tr.at(2, 1) = 0.5;  // START -> 1
  const auto v = viterbi_decode(em, tr);
  EXPECT_EQ(v.path, (std::vector<int>{1}));
  EXPECT_NEAR(v.score, 1.3, 1e-15);
}

TEST(Viterbi, TiesGoToLowestLabel) {
  const auto v = viterbi_decode(Tensor({3, 3}), Tensor({5, 5}));
  EXPECT_EQ(v.path, (std::vector<int>{0, 0, 0}));
}

TEST(Viterbi, MatchesBruteForceAndRescoring) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed + 77);
    const std::size_t t_len = 1 + rng.below(4), l = 1 + rng.below(3);
    const Tensor em = oracle::random_tensor({t_len, l}, rng, 2.0);
    const Tensor tr = oracle::crf_transitions(l, rng, 2.0);
    const auto v = viterbi_decode(em, tr);
    const auto [path, score] = oracle::brute_argmax(em, tr);
    EXPECT_EQ(v.path, path);
    EXPECT_NEAR(v.score, oracle::path_score(em, tr, v.path), 1e-12);
    EXPECT_NEAR(crf_path_score(em, tr, v.path), v.score, 1e-12);
  }
}

TEST(Viterbi, NeverEntersStartOrLeavesStop) {
  ParameterStore s;
  CrfLayer crf(s, "crf", 2, 3);
  Rng rng(1);
  crf.initialize(rng);
  const Tensor& tr = crf.transition_values();
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(tr.at(i, 3), kForbiddenTransition);
    EXPECT_EQ(tr.at(4, i), kForbiddenTransition);
  }
}

TEST(Crf, GradientsPassFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const std::size_t t_len = 1 + rng.below(4), l = 1 + rng.below(3);
    std::vector<int> gold;
    for (std::size_t t = 0; t < t_len; ++t) gold.push_back(static_cast<int>(rng.below(l)));
    DifferentiableOp op{
        "crf_log_likelihood",
        [gold](std::span<const Tensor> in) { return Tensor::vector({crf_log_likelihood(in[0], gold, in[1])}); },
        [gold](std::span<const Tensor> in, const Tensor& up) {
          std::vector<Tensor> g{Tensor(in[0].shape()), Tensor(in[1].shape())};
          crf_log_likelihood(in[0], gold, in[1], &g[0], &g[1], up[0]);
          return g;
        }};
    EXPECT_LT(grad_check(op, {oracle::random_tensor({t_len, l}, rng), oracle::random_tensor({l + 2, l + 2}, rng)}, 1e-5),
              1e-4);
  }
}

// ---------------------------------------------------------------------------
// Tagger model

namespace {

const Split& tiny_split() {
  static const Split s{fixture::sentence({{"kaam", "lang2"}, {"working", "lang1"}, {"!", "other"}}),
                       fixture::sentence({{"Ravi", "ne"}, {"kaamwala", "lang2"}})};
  return s;
}

std::unique_ptr<TaggerModel> tiny_model(TaggerConfig cfg, std::uint64_t seed = 1,
                                        std::vector<EmbeddingTable> tables = {}) {
  auto m = std::make_unique<TaggerModel>(std::move(cfg), LabelScheme::lid(), fixture::vocab_of(tiny_split()),
                                         std::move(tables));
  m->initialize(seed);
  return m;
}

}  // namespace

TEST(Features, AllFlagsOffCrfInputIsBiLstmWidth) {
  TaggerConfig c = fixture::tiny_tagger();
  c.concat_ngram_to_crf = c.use_secondary = c.use_static = false;
  EXPECT_EQ(tiny_model(c)->crf_input_dim(), 6u);
}

TEST(Features, ConcatAddsEnhancedWidth) {
  TaggerConfig c = TaggerConfig::experiment("3.1");
  c.encoder.char_vocab_size = 10;
  auto m = tiny_model(c);
  EXPECT_EQ(m->crf_input_dim(), 2u * 64 + 128);
}

TEST(Features, OovStaticSliceIsZero) {
  EmbeddingTable t(2);
  t.set("kaam", {0.5, -0.5});
  TaggerConfig c = fixture::tiny_tagger();
  c.use_static = true;
  auto m = tiny_model(c, 1, {t});
  EXPECT_EQ(m->bilstm_input_dim(), 4u + 2u);
  const auto in = m->bilstm_input(m->encode("zzz"), "zzz");
  EXPECT_EQ(in[4], 0.0);
  EXPECT_EQ(in[5], 0.0);
  const auto known = m->bilstm_input(m->encode("kaam"), "kaam");
  EXPECT_EQ(known[4], 0.5);
}

TEST(Features, StaticWithoutTablesIsConfigError) {
  TaggerConfig c = fixture::tiny_tagger();
  c.use_static = true;
  EXPECT_THROW(tiny_model(c), ConfigError);
}

TEST(SecondaryHead, OutputIsADistribution) {
  auto m = tiny_model(fixture::tiny_tagger());
  const Tensor p = m->secondary_logits(m->encode("working").enhanced.values());
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
}

TEST(SecondaryHead, ContextFree) {
  auto m = tiny_model(fixture::tiny_tagger());
  const std::vector<std::string> a{"kaam", "working"}, b{"!", "Ravi", "kaam"};
  EXPECT_EQ(m->predict(a).simplified[0], m->predict(b).simplified[2]);
  EXPECT_EQ(m->secondary_logits(m->encode("kaam").enhanced.values()),
            m->secondary_logits(m->encode("kaam").enhanced.values()));
}

TEST(SecondaryHead, DisabledIsConfigError) {
  TaggerConfig c = fixture::tiny_tagger();
  c.use_secondary = false;
  auto m = tiny_model(c);
  EXPECT_THROW(m->secondary_logits(m->encode("kaam").enhanced.values()), ConfigError);
  EXPECT_TRUE(m->predict(tiny_split()[0]).simplified.empty());
}

TEST(Predict, SingleTokenAndDeterminism) {
  auto m = tiny_model(fixture::tiny_tagger());
  const std::vector<std::string> one{"kaam"};
  EXPECT_EQ(m->predict(one).labels.size(), 1u);
  const Prediction a = m->predict(tiny_split()[0], true), b = m->predict(tiny_split()[0], true);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.simplified, b.simplified);
  ASSERT_EQ(a.traces.size(), 3u);
}

TEST(Predict, EmptySentenceRejected) {
  auto m = tiny_model(fixture::tiny_tagger());
  EXPECT_THROW(m->predict(std::vector<std::string>{}), InputError);
}

TEST(Predict, PredictSplitMatchesPerSentence) {
  auto m = tiny_model(fixture::tiny_tagger());
  const auto all = m->predict_split(tiny_split());
  for (std::size_t i = 0; i < tiny_split().size(); ++i) EXPECT_EQ(all[i].labels, m->predict(tiny_split()[i]).labels);
}

TEST(Experiments, LadderFlags) {
  const auto e12 = TaggerConfig::experiment("1.2");
  EXPECT_EQ(e12.encoder.pooling, PoolingMode::MaxPool);
  EXPECT_FALSE(e12.concat_ngram_to_crf || e12.use_secondary || e12.use_static);
  EXPECT_EQ(TaggerConfig::experiment("2.1").encoder.pooling, PoolingMode::Attn);
  EXPECT_EQ(TaggerConfig::experiment("2.2").encoder.pooling, PoolingMode::PosAttn);
  const auto e23 = TaggerConfig::experiment("2.3");
  EXPECT_EQ(e23.encoder.pooling, PoolingMode::PosHierAttn);
  EXPECT_FALSE(e23.concat_ngram_to_crf);
  const auto e31 = TaggerConfig::experiment("3.1");
  EXPECT_TRUE(e31.concat_ngram_to_crf && !e31.use_secondary);
  const auto e32 = TaggerConfig::experiment("3.2");
  EXPECT_TRUE(e32.concat_ngram_to_crf && e32.use_secondary && !e32.use_static);
  EXPECT_TRUE(TaggerConfig::experiment("3.3").use_static);
  EXPECT_THROW(TaggerConfig::experiment("1.3"), ConfigError);
}

TEST(BatchLoss, BetaZeroMakesSecondaryHeadIrrelevantToPrimary) {
  TaggerConfig with = fixture::tiny_tagger(), without = with;
  without.use_secondary = false;
  auto a = tiny_model(with, 9), b = tiny_model(without, 9);
  // Same initialization for shared parameters: copy by name.
  for (auto& p : b->params().all()) p.value = a->params().get(p.name).value;
  std::vector<const Sentence*> batch;
  for (const auto& s : tiny_split()) batch.push_back(&s);
  const BatchLoss la = a->batch_loss(batch, 0.0, true), lb = b->batch_loss(batch, 0.0, true);
  EXPECT_EQ(la.primary, lb.primary);
  for (auto& p : b->params().all()) EXPECT_EQ(p.grad, a->params().get(p.name).grad) << p.name;
  EXPECT_EQ(a->predict(tiny_split()[0]).labels, b->predict(tiny_split()[0]).labels);
}

class TaggerGradient : public ::testing::TestWithParam<int> {};

TEST_P(TaggerGradient, BatchLossGradientsMatchFiniteDifferences) {
  const int variant = GetParam();
  TaggerConfig c = fixture::tiny_tagger(variant == 1 ? PoolingMode::MaxPool : PoolingMode::PosHierAttn);
  c.concat_ngram_to_crf = variant != 2;
  std::vector<EmbeddingTable> tables;
  if (variant == 3) {
    EmbeddingTable t(2);
    t.set("working", {0.3, -0.1});
    tables.push_back(t);
    c.use_static = true;
  }
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto m = tiny_model(c, seed, tables);
    fixture::scramble(m->params(), seed + 40);
    std::vector<const Sentence*> batch;
    for (const auto& s : tiny_split()) batch.push_back(&s);
    auto loss = [&] {
      const BatchLoss l = m->batch_loss(batch, 0.7, false);
      return l.primary + 0.7 * l.secondary;
    };
    auto acc = [&] { m->batch_loss(batch, 0.7, true); };
    std::vector<Parameter*> ps;
    for (auto& p : m->params().all()) ps.push_back(&p);
    EXPECT_LT(grad_check_parameters("tagger", ps, loss, acc, 1e-5), 1e-4) << "seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Variants, TaggerGradient, ::testing::Values(0, 1, 2, 3));

TEST(SecondaryHead, GradientsPassFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = tiny_model(fixture::tiny_tagger(), seed);
    fixture::scramble(m->params(), seed + 3);
    Parameter& w = m->params().get("secondary.W");
    Parameter& b = m->params().get("secondary.b");
    const Sentence& s = tiny_split()[0];
    std::vector<const Sentence*> batch{&s};
    auto loss = [&] { return m->batch_loss(batch, 1.0, false).secondary; };
    auto acc = [&] {
      // Isolate the secondary term: beta=1 gradient minus beta=0 gradient.
      m->params().zero_grad();
      m->batch_loss(batch, 0.0, true);
      const Tensor w0 = w.grad, b0 = b.grad;
      m->params().zero_grad();
      m->batch_loss(batch, 1.0, true);
      for (std::size_t i = 0; i < w.grad.size(); ++i) w.grad[i] -= w0[i];
      for (std::size_t i = 0; i < b.grad.size(); ++i) b.grad[i] -= b0[i];
    };
    std::vector<Parameter*> ps{&w, &b};
    EXPECT_LT(grad_check_parameters("secondary_head", ps, loss, acc, 1e-5), 1e-4);
  }
}

TEST(Checkpointing, RoundTripPreservesPredictions) {
  EmbeddingTable t(2);
  t.set("kaam", {0.5, -0.5});
  TaggerConfig c = fixture::tiny_tagger();
  c.use_static = true;
  auto m = tiny_model(c, 4, {t});
  fixture::scramble(m->params(), 12);
  const Checkpoint ck = read_checkpoint(write_checkpoint(m->to_checkpoint()));
  auto back = TaggerModel::from_checkpoint(ck);
  for (const auto& s : tiny_split()) EXPECT_EQ(back->predict(s).labels, m->predict(s).labels);
  EXPECT_EQ(write_checkpoint(back->to_checkpoint()), write_checkpoint(m->to_checkpoint()));
}

TEST(Checkpointing, ShapeMismatchNamesShapes) {
  auto m = tiny_model(fixture::tiny_tagger());
  TaggerConfig other = fixture::tiny_tagger();
  other.encoder.channels = {2, 3, 5};
  auto n = tiny_model(other);
  try {
    n->load_parameters(m->to_checkpoint(), "encoder.");
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("checkpoint [3x3x2], model [3x3x5]"), std::string::npos) << e.what();
  }
}

TEST(ShufflePositions, RequiresPositionalMode) {
  auto m = tiny_model(fixture::tiny_tagger(PoolingMode::Attn));
  EXPECT_THROW(shuffle_positions(*m, 1), ModeError);
  auto mp = tiny_model(fixture::tiny_tagger(PoolingMode::MaxPool));
  EXPECT_THROW(shuffle_positions(*mp, 1), ModeError);
}

TEST(ShufflePositions, SameSeedSamePredictions) {
  auto m = tiny_model(fixture::tiny_tagger());
  fixture::scramble(m->params(), 77, 2.0);
  auto a = shuffle_positions(*m, 5), b = shuffle_positions(*m, 5);
  for (const auto& s : tiny_split()) {
    const Prediction pa = a.predict(s, true), pb = b.predict(s, true);
    EXPECT_EQ(pa.labels, pb.labels);
    EXPECT_EQ(pa.traces[1].ngrams[2][0].alpha, pb.traces[1].ngrams[2][0].alpha);
  }
}

TEST(ShufflePositions, EqualRowsMatchUnshuffled) {
  auto m = tiny_model(fixture::tiny_tagger());
  fixture::scramble(m->params(), 78, 2.0);
  for (auto& p : m->params().all()) {
    if (p.name.find(".pos.order") == std::string::npos) continue;
    for (std::size_t r = 1; r < p.value.dim(0); ++r)
      for (std::size_t k = 0; k < p.value.dim(1); ++k) p.value.at(r, k) = p.value.at(0, k);
  }
  const Checkpoint before = m->to_checkpoint();
  auto view = shuffle_positions(*m, 3);
  for (const auto& s : tiny_split()) {
    const Prediction sh = view.predict(s, true), plain = m->predict(s, true);
    EXPECT_EQ(sh.labels, plain.labels);
    EXPECT_EQ(sh.traces[0].ngrams[1][1].alpha, plain.traces[0].ngrams[1][1].alpha);
  }
  EXPECT_EQ(write_checkpoint(m->to_checkpoint()), write_checkpoint(before));
}
