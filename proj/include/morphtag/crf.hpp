#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "morphtag/error.hpp"
#include "morphtag/ops.hpp"
#include "morphtag/parameter.hpp"

// Linear-chain CRF with virtual START (index L) and STOP (index L+1) states.
// transitions(from, to) is the score of moving from `from` to `to`.

namespace morphtag {

inline constexpr double kForbiddenTransition = -1e4;

namespace crf_detail {

inline void check_shapes(const Tensor& emissions, const Tensor& transitions) {
  if (emissions.rank() != 2 || emissions.dim(0) == 0)
    throw InputError("crf: emissions must be a non-empty [T x L] matrix");
  const std::size_t l = emissions.dim(1);
  if (transitions.shape() != Tensor::Shape{l + 2, l + 2})
    throw DimensionError("crf: transitions " + transitions.shape_string() + " do not match " +
                         std::to_string(l) + " labels");
}

}  // namespace crf_detail

/// Unnormalized score of `path`: START→y1 + Σ emissions + Σ transitions + yT→STOP.
inline double crf_path_score(const Tensor& emissions, const Tensor& transitions,
                             std::span<const int> path) {
  crf_detail::check_shapes(emissions, transitions);
  const std::size_t t_len = emissions.dim(0), l = emissions.dim(1);
  if (path.size() != t_len) throw InputError("crf: path length differs from emissions");
  for (int y : path)
    if (y < 0 || static_cast<std::size_t>(y) >= l)
      throw InputError("crf: label index " + std::to_string(y) + " out of range");
  double s = transitions.at(l, path[0]);
  for (std::size_t t = 0; t < t_len; ++t) {
    s += emissions.at(t, path[t]);
    if (t > 0) s += transitions.at(path[t - 1], path[t]);
  }
  return s + transitions.at(path[t_len - 1], l + 1);
}

/// Forward algorithm in log space. Rows of the returned [T x L] matrix are
/// the log-alphas; `log_z` receives the log partition function.
inline Tensor crf_forward(const Tensor& emissions, const Tensor& transitions, double& log_z) {
  crf_detail::check_shapes(emissions, transitions);
  const std::size_t t_len = emissions.dim(0), l = emissions.dim(1);
  Tensor alpha({t_len, l});
  for (std::size_t y = 0; y < l; ++y) alpha.at(0, y) = transitions.at(l, y) + emissions.at(0, y);
  std::vector<double> buf(l);
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t y = 0; y < l; ++y) {
      for (std::size_t p = 0; p < l; ++p) buf[p] = alpha.at(t - 1, p) + transitions.at(p, y);
      alpha.at(t, y) = ops::log_sum_exp(buf) + emissions.at(t, y);
    }
  }
  for (std::size_t y = 0; y < l; ++y) buf[y] = alpha.at(t_len - 1, y) + transitions.at(y, l + 1);
  log_z = ops::log_sum_exp(buf);
  return alpha;
}

inline double crf_log_partition(const Tensor& emissions, const Tensor& transitions) {
  double log_z = 0.0;
  crf_forward(emissions, transitions, log_z);
  return log_z;
}

/// Negative log-likelihood of `gold`. When gradient outputs are given,
/// accumulates scale·∂NLL into them (marginals minus gold indicators).
inline double crf_log_likelihood(const Tensor& emissions, std::span<const int> gold,
                                 const Tensor& transitions, Tensor* g_emissions = nullptr,
                                 Tensor* g_transitions = nullptr, double scale = 1.0) {
  const double gold_score = crf_path_score(emissions, transitions, gold);
  double log_z = 0.0;
  const Tensor alpha = crf_forward(emissions, transitions, log_z);
  const double nll = log_z - gold_score;
  if (!g_emissions && !g_transitions) return nll;

  const std::size_t t_len = emissions.dim(0), l = emissions.dim(1);
  Tensor beta({t_len, l});
  for (std::size_t y = 0; y < l; ++y) beta.at(t_len - 1, y) = transitions.at(y, l + 1);
  std::vector<double> buf(l);
  for (std::size_t t = t_len - 1; t-- > 0;) {
    for (std::size_t y = 0; y < l; ++y) {
      for (std::size_t n = 0; n < l; ++n)
        buf[n] = transitions.at(y, n) + emissions.at(t + 1, n) + beta.at(t + 1, n);
      beta.at(t, y) = ops::log_sum_exp(buf);
    }
  }
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t y = 0; y < l; ++y) {
      const double marginal = std::exp(alpha.at(t, y) + beta.at(t, y) - log_z);
      const double indicator = gold[t] == static_cast<int>(y) ? 1.0 : 0.0;
      if (g_emissions) g_emissions->at(t, y) += scale * (marginal - indicator);
      if (g_transitions) {
        if (t == 0) g_transitions->at(l, y) += scale * (marginal - indicator);
        if (t == t_len - 1) g_transitions->at(y, l + 1) += scale * (marginal - indicator);
      }
    }
  }
  if (g_transitions) {
    for (std::size_t t = 0; t + 1 < t_len; ++t) {
      for (std::size_t a = 0; a < l; ++a) {
        for (std::size_t b = 0; b < l; ++b) {
          const double pair = std::exp(alpha.at(t, a) + transitions.at(a, b) +
                                       emissions.at(t + 1, b) + beta.at(t + 1, b) - log_z);
          g_transitions->at(a, b) += scale * pair;
        }
      }
      g_transitions->at(gold[t], gold[t + 1]) -= scale;
    }
  }
  return nll;
}

struct ViterbiResult {
  std::vector<int> path;
  double score = 0.0;
};

/// Highest-scoring path. Ties resolve to the lowest label index.
inline ViterbiResult viterbi_decode(const Tensor& emissions, const Tensor& transitions) {
  crf_detail::check_shapes(emissions, transitions);
  const std::size_t t_len = emissions.dim(0), l = emissions.dim(1);
  Tensor delta({t_len, l});
  std::vector<std::vector<int>> back(t_len, std::vector<int>(l, 0));
  for (std::size_t y = 0; y < l; ++y) delta.at(0, y) = transitions.at(l, y) + emissions.at(0, y);
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t y = 0; y < l; ++y) {
      double best = delta.at(t - 1, 0) + transitions.at(0, y);
      int arg = 0;
      for (std::size_t p = 1; p < l; ++p) {
        const double s = delta.at(t - 1, p) + transitions.at(p, y);
        if (s > best) {
          best = s;
          arg = static_cast<int>(p);
        }
      }
      delta.at(t, y) = best + emissions.at(t, y);
      back[t][y] = arg;
    }
  }
  double best = delta.at(t_len - 1, 0) + transitions.at(0, l + 1);
  int arg = 0;
  for (std::size_t y = 1; y < l; ++y) {
    const double s = delta.at(t_len - 1, y) + transitions.at(y, l + 1);
    if (s > best) {
      best = s;
      arg = static_cast<int>(y);
    }
  }
  ViterbiResult r;
  r.score = best;
  r.path.assign(t_len, 0);
  r.path[t_len - 1] = arg;
  for (std::size_t t = t_len - 1; t > 0; --t) r.path[t - 1] = back[t][r.path[t]];
  return r;
}

/// Emission projection plus transition matrix.
class CrfLayer {
 public:
  CrfLayer() = default;
  CrfLayer(ParameterStore& store, const std::string& prefix, std::size_t in_dim,
           std::size_t labels)
      : in_(in_dim), labels_(labels) {
    w_ = &store.add(prefix + ".emission.W", {labels, in_dim}, Group::NonCore, true);
    b_ = &store.add(prefix + ".emission.b", {labels}, Group::NonCore, true);
    trans_ = &store.add(prefix + ".transitions", {labels + 2, labels + 2}, Group::NonCore, true);
  }

  void initialize(Rng& rng) {
    init_glorot(w_->value, rng, in_, labels_);
    b_->value.fill(0.0);
    Tensor& tr = trans_->value;
    init_uniform(tr, rng, 0.1);
    const std::size_t start = labels_, stop = labels_ + 1;
    for (std::size_t i = 0; i < labels_ + 2; ++i) {
      tr.at(i, start) = kForbiddenTransition;
      tr.at(stop, i) = kForbiddenTransition;
    }
  }

  std::size_t input_dim() const noexcept { return in_; }
  std::size_t labels() const noexcept { return labels_; }
  Parameter& transitions() { return *trans_; }
  const Tensor& transition_values() const { return trans_->value; }

  Tensor emissions(std::span<const std::vector<double>> features) const {
    Tensor e({features.size(), labels_});
    for (std::size_t t = 0; t < features.size(); ++t) {
      if (features[t].size() != in_)
        throw DimensionError("crf: feature size " + std::to_string(features[t].size()) +
                             ", expected " + std::to_string(in_));
      std::span<double> row = e.row(t);
      std::copy(b_->value.values().begin(), b_->value.values().end(), row.begin());
      ops::gemv_acc(w_->value, features[t], row);
    }
    return e;
  }

  void emission_backward(std::span<const std::vector<double>> features, const Tensor& g_emissions,
                         std::vector<std::vector<double>>* g_features) {
    for (std::size_t t = 0; t < features.size(); ++t) {
      std::span<const double> g = g_emissions.row(t);
      ops::outer_acc(g, features[t], w_->grad);
      for (std::size_t y = 0; y < labels_; ++y) b_->grad[y] += g[y];
      if (g_features) ops::gemv_t_acc(w_->value, g, (*g_features)[t]);
    }
  }

 private:
  std::size_t in_ = 0, labels_ = 0;
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  Parameter* trans_ = nullptr;
};

}  // namespace morphtag
