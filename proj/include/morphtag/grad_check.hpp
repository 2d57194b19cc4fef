#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "morphtag/error.hpp"
#include "morphtag/parameter.hpp"
#include "morphtag/tensor.hpp"

namespace morphtag {

/// A differentiable operation for finite-difference checking. `backward`
/// receives the upstream gradient (all ones when the loss is the sum of the
/// outputs) and returns one gradient per input.
struct DifferentiableOp {
  std::string name;
  std::function<Tensor(std::span<const Tensor>)> forward;
  std::function<std::vector<Tensor>(std::span<const Tensor>, const Tensor&)> backward;
};

namespace detail {

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / scale;
}

inline void check_epsilon(double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2))
    throw InputError("grad_check: epsilon must lie in (0, 1e-2]");
}

inline double finite_sum(const Tensor& t, const std::string& op) {
  double s = 0.0;
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite output from " + op);
    s += v;
  }
  return s;
}

}  // namespace detail

/// Central differences against the analytic gradient of sum(op(inputs)).
/// Returns max |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double grad_check(const DifferentiableOp& op, std::vector<Tensor> inputs,
                         double epsilon) {
  detail::check_epsilon(epsilon);
  const Tensor out = op.forward(inputs);
  detail::finite_sum(out, op.name);
  const Tensor ones(out.shape(), 1.0);
  const std::vector<Tensor> analytic = op.backward(inputs, ones);
  if (analytic.size() != inputs.size())
    throw DimensionError("grad_check: " + op.name + " returned wrong gradient count");

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!analytic[k].same_shape(inputs[k]))
      throw DimensionError("grad_check: " + op.name + " gradient shape mismatch");
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + epsilon;
      const double plus = detail::finite_sum(op.forward(inputs), op.name);
      inputs[k][i] = saved - epsilon;
      const double minus = detail::finite_sum(op.forward(inputs), op.name);
      inputs[k][i] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double a = analytic[k][i];
      if (!std::isfinite(a)) throw NumericError("grad_check: non-finite gradient from " + op.name);
      worst = std::max(worst, detail::relative_error(a, numeric));
    }
  }
  return worst;
}

/// Same check over model parameters: `loss` evaluates the scalar objective,
/// `accumulate` adds its analytic gradient into the parameter grads (which
/// this function zeroes first).
inline double grad_check_parameters(const std::string& name, std::span<Parameter* const> params,
                                    const std::function<double()>& loss,
                                    const std::function<void()>& accumulate, double epsilon) {
  detail::check_epsilon(epsilon);
  for (Parameter* p : params) p->grad.fill(0.0);
  accumulate();
  double worst = 0.0;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + epsilon;
      const double plus = loss();
      p->value[i] = saved - epsilon;
      const double minus = loss();
      p->value[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus))
        throw NumericError("grad_check: non-finite loss from " + name);
      const double numeric = (plus - minus) / (2.0 * epsilon);
      worst = std::max(worst, detail::relative_error(p->grad[i], numeric));
    }
  }
  return worst;
}

}  // namespace morphtag
