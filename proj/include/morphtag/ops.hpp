#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "morphtag/error.hpp"
#include "morphtag/tensor.hpp"

// Dense kernels with hand-written backward passes. Backward functions always
// accumulate into their gradient outputs so shared parameters compose.

namespace morphtag::ops {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got " + t.shape_string());
  }
}

inline void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace detail

// ---- span-level kernels used by the layers ----

/// y += W x for W of shape [rows x cols].
inline void gemv_acc(const Tensor& w, std::span<const double> x, std::span<double> y) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  const double* wp = w.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = wp + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
    y[r] += s;
  }
}

/// gx += Wᵀ gy.
inline void gemv_t_acc(const Tensor& w, std::span<const double> gy, std::span<double> gx) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  const double* wp = w.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = gy[r];
    if (g == 0.0) continue;
    const double* wr = wp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) gx[c] += wr[c] * g;
  }
}

/// gW += gy xᵀ.
inline void outer_acc(std::span<const double> gy, std::span<const double> x, Tensor& gw) {
  const std::size_t rows = gw.dim(0), cols = gw.dim(1);
  double* gp = gw.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = gy[r];
    if (g == 0.0) continue;
    double* gr = gp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) gr[c] += g * x[c];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// In-place max-subtracted softmax.
inline void softmax_inplace(std::span<double> u) {
  if (u.empty()) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(u.begin(), u.end());
  double sum = 0.0;
  for (double& v : u) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : u) v /= sum;
}

/// gu += Jᵀ g for the softmax Jacobian at `alpha`.
inline void softmax_backward_acc(std::span<const double> alpha, std::span<const double> g,
                                 std::span<double> gu) {
  const double inner = dot(alpha, g);
  for (std::size_t i = 0; i < alpha.size(); ++i) gu[i] += alpha[i] * (g[i] - inner);
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

// ---- tensor-level operations ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul lhs");
  detail::require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree, " + a.shape_string() + " x " +
                         b.shape_string());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a.at(i, t);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(t, j);
    }
  }
  return out;
}

inline void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out,
                            Tensor* grad_a, Tensor* grad_b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (grad_out.shape() != Tensor::Shape{m, n}) {
    throw DimensionError("matmul_backward: upstream " + grad_out.shape_string());
  }
  if (grad_a) {
    detail::require_same(*grad_a, a, "matmul_backward grad_a");
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t t = 0; t < k; ++t) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += grad_out.at(i, j) * b.at(t, j);
        grad_a->at(i, t) += s;
      }
  }
  if (grad_b) {
    detail::require_same(*grad_b, b, "matmul_backward grad_b");
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += a.at(i, t) * grad_out.at(i, j);
        grad_b->at(t, j) += s;
      }
  }
}

inline Tensor softmax(const Tensor& u) {
  detail::require_rank(u, 1, "softmax");
  Tensor out = u;
  softmax_inplace(out.values());
  return out;
}

inline void softmax_backward(const Tensor& alpha, const Tensor& grad_out, Tensor& grad_u) {
  detail::require_same(alpha, grad_out, "softmax_backward");
  detail::require_same(alpha, grad_u, "softmax_backward");
  softmax_backward_acc(alpha.values(), grad_out.values(), grad_u.values());
}

inline Tensor tanh(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = std::tanh(v);
  return out;
}

/// Valid-mode 1-D convolution: input [l x d], kernel [j x d x c], bias [c]
/// produce [(l-j+1) x c].
inline Tensor conv1d_valid(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  detail::require_rank(input, 2, "conv1d input");
  detail::require_rank(kernel, 3, "conv1d kernel");
  detail::require_rank(bias, 1, "conv1d bias");
  const std::size_t l = input.dim(0), d = input.dim(1);
  const std::size_t width = kernel.dim(0), c = kernel.dim(2);
  if (kernel.dim(1) != d || bias.dim(0) != c) {
    throw DimensionError("conv1d: input " + input.shape_string() + ", kernel " +
                         kernel.shape_string() + ", bias " + bias.shape_string());
  }
  if (l < width) {
    throw InputError("conv1d: input length " + std::to_string(l) +
                     " shorter than kernel width " + std::to_string(width));
  }
  const std::size_t m = l - width + 1;
  Tensor out({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    std::span<double> o = out.row(i);
    std::copy(bias.values().begin(), bias.values().end(), o.begin());
    for (std::size_t t = 0; t < width; ++t) {
      for (std::size_t f = 0; f < d; ++f) {
        const double x = input.at(i + t, f);
        if (x == 0.0) continue;
        const double* kr = kernel.data() + (t * d + f) * c;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] += x * kr[ch];
      }
    }
  }
  return out;
}

inline void conv1d_valid_backward(const Tensor& input, const Tensor& kernel,
                                  const Tensor& grad_out, Tensor* grad_input,
                                  Tensor* grad_kernel, Tensor* grad_bias) {
  const std::size_t d = input.dim(1);
  const std::size_t width = kernel.dim(0), c = kernel.dim(2);
  const std::size_t m = grad_out.dim(0);
  for (std::size_t i = 0; i < m; ++i) {
    std::span<const double> g = grad_out.row(i);
    if (grad_bias) {
      for (std::size_t ch = 0; ch < c; ++ch) (*grad_bias)[ch] += g[ch];
    }
    for (std::size_t t = 0; t < width; ++t) {
      for (std::size_t f = 0; f < d; ++f) {
        const std::size_t koff = (t * d + f) * c;
        if (grad_kernel) {
          const double x = input.at(i + t, f);
          double* gk = grad_kernel->data() + koff;
          for (std::size_t ch = 0; ch < c; ++ch) gk[ch] += x * g[ch];
        }
        if (grad_input) {
          const double* kr = kernel.data() + koff;
          double s = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) s += kr[ch] * g[ch];
          grad_input->at(i + t, f) += s;
        }
      }
    }
  }
}

/// Column-wise maximum of an [m x c] tensor. Ties go to the lowest row.
struct MaxPoolResult {
  Tensor value;
  std::vector<std::size_t> argmax;
};

inline MaxPoolResult maxpool_downsample(const Tensor& x) {
  detail::require_rank(x, 2, "maxpool");
  if (x.dim(0) == 0) throw DimensionError("maxpool: no positions");
  const std::size_t m = x.dim(0), c = x.dim(1);
  MaxPoolResult r{Tensor({c}), std::vector<std::size_t>(c, 0)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double best = x.at(0, ch);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < m; ++i) {
      if (x.at(i, ch) > best) {
        best = x.at(i, ch);
        arg = i;
      }
    }
    r.value[ch] = best;
    r.argmax[ch] = arg;
  }
  return r;
}

inline void maxpool_backward(const std::vector<std::size_t>& argmax, std::span<const double> g,
                             Tensor& grad_x) {
  for (std::size_t ch = 0; ch < argmax.size(); ++ch) grad_x.at(argmax[ch], ch) += g[ch];
}

}  // namespace morphtag::ops
