#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "morphtag/error.hpp"
#include "morphtag/ops.hpp"
#include "morphtag/parameter.hpp"

namespace morphtag {

/// Single-direction LSTM. Weight rows are laid out [input; forget; cell; output]
/// over the concatenated [x_t; h_{t-1}] input.
class LstmCell {
 public:
  struct Step {
    std::vector<double> input;  // [x_t; h_{t-1}]
    std::vector<double> i, f, g, o;
    std::vector<double> c_prev, c, h;
  };

  LstmCell() = default;

  LstmCell(ParameterStore& store, const std::string& prefix, std::size_t in_dim,
           std::size_t hidden, Group group = Group::NonCore)
      : in_(in_dim), hidden_(hidden) {
    w_ = &store.add(prefix + ".W", {4 * hidden, in_dim + hidden}, group);
    b_ = &store.add(prefix + ".b", {4 * hidden}, group);
  }

  void initialize(Rng& rng) {
    init_glorot(w_->value, rng, in_ + hidden_, 4 * hidden_);
    b_->value.fill(0.0);
    for (std::size_t k = hidden_; k < 2 * hidden_; ++k) b_->value[k] = 1.0;
  }

  std::size_t input_dim() const noexcept { return in_; }
  std::size_t hidden_dim() const noexcept { return hidden_; }
  Parameter& weight() { return *w_; }
  Parameter& bias() { return *b_; }

  /// Runs over `xs` (reversed when `reverse`); steps are stored in processing order.
  std::vector<Step> run(std::span<const std::vector<double>> xs, bool reverse) const {
    const std::size_t n = xs.size(), hd = hidden_;
    std::vector<Step> steps(n);
    std::vector<double> h_prev(hd, 0.0), c_prev(hd, 0.0), gates(4 * hd);
    for (std::size_t s = 0; s < n; ++s) {
      const std::vector<double>& x = xs[reverse ? n - 1 - s : s];
      if (x.size() != in_)
        throw DimensionError("lstm: input size " + std::to_string(x.size()) + ", expected " +
                             std::to_string(in_));
      Step& st = steps[s];
      st.input.assign(x.begin(), x.end());
      st.input.insert(st.input.end(), h_prev.begin(), h_prev.end());
      std::copy(b_->value.values().begin(), b_->value.values().end(), gates.begin());
      ops::gemv_acc(w_->value, st.input, gates);
      st.i.resize(hd);
      st.f.resize(hd);
      st.g.resize(hd);
      st.o.resize(hd);
      st.c.resize(hd);
      st.h.resize(hd);
      st.c_prev = c_prev;
      for (std::size_t k = 0; k < hd; ++k) {
        st.i[k] = ops::sigmoid(gates[k]);
        st.f[k] = ops::sigmoid(gates[hd + k]);
        st.g[k] = std::tanh(gates[2 * hd + k]);
        st.o[k] = ops::sigmoid(gates[3 * hd + k]);
        st.c[k] = st.f[k] * c_prev[k] + st.i[k] * st.g[k];
        st.h[k] = st.o[k] * std::tanh(st.c[k]);
      }
      h_prev = st.h;
      c_prev = st.c;
    }
    return steps;
  }

  /// Backpropagation through time. `g_h[s]` is the upstream gradient on the
  /// output of processing step s; input gradients are written (accumulated)
  /// into `g_x` indexed by original position when non-null.
  void backward(const std::vector<Step>& steps, std::span<const std::vector<double>> g_h,
                bool reverse, std::vector<std::vector<double>>* g_x) {
    const std::size_t n = steps.size(), hd = hidden_;
    std::vector<double> dh_next(hd, 0.0), dc_next(hd, 0.0), dgates(4 * hd), dinput(in_ + hd);
    for (std::size_t s = n; s-- > 0;) {
      const Step& st = steps[s];
      for (std::size_t k = 0; k < hd; ++k) {
        const double dh = g_h[s][k] + dh_next[k];
        const double tc = std::tanh(st.c[k]);
        const double dc = dc_next[k] + dh * st.o[k] * (1.0 - tc * tc);
        dgates[k] = dc * st.g[k] * st.i[k] * (1.0 - st.i[k]);
        dgates[hd + k] = dc * st.c_prev[k] * st.f[k] * (1.0 - st.f[k]);
        dgates[2 * hd + k] = dc * st.i[k] * (1.0 - st.g[k] * st.g[k]);
        dgates[3 * hd + k] = dh * tc * st.o[k] * (1.0 - st.o[k]);
        dc_next[k] = dc * st.f[k];
      }
      ops::outer_acc(dgates, st.input, w_->grad);
      for (std::size_t k = 0; k < 4 * hd; ++k) b_->grad[k] += dgates[k];
      std::fill(dinput.begin(), dinput.end(), 0.0);
      ops::gemv_t_acc(w_->value, dgates, dinput);
      for (std::size_t k = 0; k < hd; ++k) dh_next[k] = dinput[in_ + k];
      if (g_x) {
        std::vector<double>& gx = (*g_x)[reverse ? n - 1 - s : s];
        for (std::size_t k = 0; k < in_; ++k) gx[k] += dinput[k];
      }
    }
  }

 private:
  std::size_t in_ = 0, hidden_ = 0;
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
};

/// Forward and backward LSTMs; output per token is [fwd_h ; bwd_h].
class BiLstm {
 public:
  struct Result {
    std::vector<LstmCell::Step> fwd, bwd;
    std::vector<std::vector<double>> outputs;
  };

  BiLstm() = default;
  BiLstm(ParameterStore& store, const std::string& prefix, std::size_t in_dim, std::size_t hidden)
      : fwd_(store, prefix + ".fwd", in_dim, hidden), bwd_(store, prefix + ".bwd", in_dim, hidden) {}

  void initialize(Rng& rng) {
    fwd_.initialize(rng);
    bwd_.initialize(rng);
  }

  std::size_t output_dim() const noexcept { return 2 * fwd_.hidden_dim(); }
  LstmCell& forward_cell() { return fwd_; }
  LstmCell& backward_cell() { return bwd_; }

  Result forward(std::span<const std::vector<double>> xs) const {
    if (xs.empty()) throw InputError("bilstm: empty sequence");
    Result r;
    r.fwd = fwd_.run(xs, false);
    r.bwd = bwd_.run(xs, true);
    const std::size_t n = xs.size(), hd = fwd_.hidden_dim();
    r.outputs.assign(n, std::vector<double>(2 * hd));
    for (std::size_t t = 0; t < n; ++t) {
      std::copy(r.fwd[t].h.begin(), r.fwd[t].h.end(), r.outputs[t].begin());
      std::copy(r.bwd[n - 1 - t].h.begin(), r.bwd[n - 1 - t].h.end(), r.outputs[t].begin() + hd);
    }
    return r;
  }

  /// `g_out[t]` is the gradient on output t (size 2h).
  void backward(const Result& r, std::span<const std::vector<double>> g_out,
                std::vector<std::vector<double>>* g_x) {
    const std::size_t n = r.outputs.size(), hd = fwd_.hidden_dim();
    std::vector<std::vector<double>> gf(n, std::vector<double>(hd)), gb(n, std::vector<double>(hd));
    for (std::size_t t = 0; t < n; ++t) {
      std::copy(g_out[t].begin(), g_out[t].begin() + hd, gf[t].begin());
      std::copy(g_out[t].begin() + hd, g_out[t].end(), gb[n - 1 - t].begin());
    }
    fwd_.backward(r.fwd, gf, false, g_x);
    bwd_.backward(r.bwd, gb, true, g_x);
  }

 private:
  LstmCell fwd_, bwd_;
};

}  // namespace morphtag
