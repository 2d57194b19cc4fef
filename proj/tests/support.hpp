#pragma once

// Independent reference implementations used as test oracles, plus small
// fixtures. Nothing here calls into the code it checks.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "morphtag/morphtag.hpp"

namespace oracle {

using morphtag::Rng;
using morphtag::Tensor;

inline Tensor random_tensor(Tensor::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

/// out[i][o] = bias[o] + Σ_t Σ_f in[i+t][f]·k[t][f][o]
inline Tensor conv(const Tensor& in, const Tensor& k, const Tensor& bias) {
  const std::size_t l = in.dim(0), d = in.dim(1), j = k.dim(0), c = k.dim(2);
  Tensor out({l - j + 1, c});
  for (std::size_t i = 0; i + j <= l; ++i)
    for (std::size_t o = 0; o < c; ++o) {
      double s = bias[o];
      for (std::size_t t = 0; t < j; ++t)
        for (std::size_t f = 0; f < d; ++f) s += in.at(i + t, f) * k.at(t, f, o);
      out.at(i, o) = s;
    }
  return out;
}

/// Every label sequence of length T over L labels, in lexicographic order.
inline std::vector<std::vector<int>> all_paths(std::size_t t_len, std::size_t labels) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(t_len, 0);
  while (true) {
    out.push_back(cur);
    std::size_t p = t_len;
    while (p > 0) {
      --p;
      if (++cur[p] < static_cast<int>(labels)) break;
      cur[p] = 0;
      if (p == 0) return out;
    }
    if (t_len == 0) return out;
  }
}

/// START = L, STOP = L + 1 in the (L+2)x(L+2) transition matrix.
inline double path_score(const Tensor& em, const Tensor& tr, const std::vector<int>& y) {
  const std::size_t l = em.dim(1);
  double s = tr.at(l, static_cast<std::size_t>(y[0]));
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += em.at(t, static_cast<std::size_t>(y[t]));
    if (t > 0) s += tr.at(static_cast<std::size_t>(y[t - 1]), static_cast<std::size_t>(y[t]));
  }
  return s + tr.at(static_cast<std::size_t>(y.back()), l + 1);
}

inline double brute_log_z(const Tensor& em, const Tensor& tr) {
  std::vector<double> scores;
  for (const auto& y : all_paths(em.dim(0), em.dim(1))) scores.push_back(path_score(em, tr, y));
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - mx);
  return mx + std::log(sum);
}

inline std::pair<std::vector<int>, double> brute_argmax(const Tensor& em, const Tensor& tr) {
  std::vector<int> best;
  double best_s = -1e300;
  for (const auto& y : all_paths(em.dim(0), em.dim(1))) {
    const double s = path_score(em, tr, y);
    if (s > best_s) {
      best_s = s;
      best = y;
    }
  }
  return {best, best_s};
}

inline Tensor crf_transitions(std::size_t labels, Rng& rng, double scale = 1.0) {
  Tensor tr = random_tensor({labels + 2, labels + 2}, rng, scale);
  for (std::size_t i = 0; i < labels + 2; ++i) {
    tr.at(i, labels) = morphtag::kForbiddenTransition;
    tr.at(labels + 1, i) = morphtag::kForbiddenTransition;
  }
  return tr;
}

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Textbook LSTM recursion written gate by gate; W rows [i; f; g; o] act on
/// [x; h_prev]. Returns hidden states in processing order.
inline std::vector<std::vector<double>> lstm(const Tensor& w, const Tensor& b,
                                             const std::vector<std::vector<double>>& xs) {
  const std::size_t h = b.size() / 4, in = w.dim(1) - h;
  std::vector<double> hp(h, 0.0), cp(h, 0.0);
  std::vector<std::vector<double>> out;
  for (const auto& x : xs) {
    std::vector<double> hn(h), cn(h);
    for (std::size_t k = 0; k < h; ++k) {
      double pre[4];
      for (int gate = 0; gate < 4; ++gate) {
        const std::size_t row = gate * h + k;
        double s = b[row];
        for (std::size_t q = 0; q < in; ++q) s += w.at(row, q) * x[q];
        for (std::size_t q = 0; q < h; ++q) s += w.at(row, in + q) * hp[q];
        pre[gate] = s;
      }
      const double ig = sig(pre[0]), fg = sig(pre[1]), gg = std::tanh(pre[2]), og = sig(pre[3]);
      cn[k] = fg * cp[k] + ig * gg;
      hn[k] = og * std::tanh(cn[k]);
    }
    hp = hn;
    cp = cn;
    out.push_back(hn);
  }
  return out;
}

/// Per-label F1 from an explicit confusion matrix; weighted by gold support.
struct F1Oracle {
  std::map<std::string, double> f1;
  std::map<std::string, std::size_t> support;
  double weighted = 0.0;
};

inline F1Oracle f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
  std::set<std::string> labels(gold.begin(), gold.end());
  labels.insert(pred.begin(), pred.end());
  std::map<std::pair<std::string, std::string>, std::size_t> cm;
  for (std::size_t i = 0; i < gold.size(); ++i) ++cm[{gold[i], pred[i]}];
  F1Oracle r;
  for (const auto& l : labels) {
    std::size_t tp = cm[{l, l}], row = 0, col = 0;
    for (const auto& m : labels) {
      row += cm[{l, m}];
      col += cm[{m, l}];
    }
    const double p = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    const double rc = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    r.f1[l] = p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
    r.support[l] = row;
    r.weighted += r.f1[l] * static_cast<double>(row);
  }
  if (!gold.empty()) r.weighted /= static_cast<double>(gold.size());
  return r;
}

}  // namespace oracle

namespace fixture {

/// Small encoder settings that keep finite-difference checks fast.
inline morphtag::EncoderConfig tiny_encoder(morphtag::PoolingMode mode, int vocab = 8) {
  morphtag::EncoderConfig c;
  c.char_vocab_size = vocab;
  c.char_emb_dim = 3;
  c.orders = {1, 2, 3};
  c.channels = {2, 3, 2};
  c.max_word_len = 8;
  c.attention_dim = 3;
  c.pooling = mode;
  c.token_dim = 4;
  return c;
}

inline morphtag::TaggerConfig tiny_tagger(morphtag::PoolingMode mode = morphtag::PoolingMode::PosHierAttn) {
  morphtag::TaggerConfig c;
  c.encoder = tiny_encoder(mode);
  c.hidden = 3;
  return c;
}

/// Randomizes every parameter (including biases left at zero by initialize)
/// so gradient checks exercise all paths.
inline void scramble(morphtag::ParameterStore& store, std::uint64_t seed, double scale = 0.5) {
  morphtag::Rng rng(seed);
  for (auto& p : store.all())
    for (std::size_t i = 0; i < p.value.size(); ++i)
      if (p.value[i] != morphtag::kForbiddenTransition) p.value[i] = rng.uniform(-scale, scale);
}

inline morphtag::Sentence sentence(std::initializer_list<std::pair<const char*, const char*>> toks) {
  morphtag::Sentence s;
  for (const auto& [w, l] : toks) s.tokens.push_back({w, l, std::nullopt});
  return s;
}

inline morphtag::SyntheticSpec small_spec(std::uint64_t seed, int sentences) {
  morphtag::SyntheticSpec s = morphtag::SyntheticSpec::demo(seed);
  s.num_sentences = sentences;
  return s;
}

inline morphtag::CharVocab vocab_of(const morphtag::Split& split) {
  std::vector<std::string> words;
  for (const auto& s : split)
    for (const auto& t : s.tokens) words.push_back(t.surface);
  return morphtag::CharVocab::build(words);
}

}  // namespace fixture
