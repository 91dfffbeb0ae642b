// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck.h
 * @brief  Central finite-difference oracle for tape gradients.
 *
 * The numeric side evaluates the function in extended precision so that
 * rounding in the differenced values stays far below the tolerances. The
 * analytic side runs on a tape of the caller's chosen precision, so the
 * same oracle checks both the training and the double-width builds.
 */
#ifndef AGDT_GRADCHECK_H
#define AGDT_GRADCHECK_H

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <agdt/autodiff.h>
#include <agdt/tensor.h>

namespace agdt {

/// Precision of the finite-difference reference evaluations.
using Extended = long double;

/// A scalar-valued function of several tensors, recorded on a tape.
template <typename S>
using TapeFunction =
  std::function<Var<S>(Tape<S> &, std::span<const Var<S>> inputs)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Tape gradients of `f` at `points`, one tensor per input.
template <typename S>
std::vector<Tensor<S>> tape_gradients(const TapeFunction<S> &f,
                                      std::span<const Tensor<S>> points) {
  Tape<S> tape;
  std::vector<Var<S>> leaves;
  leaves.reserve(points.size());
  for (const auto &p : points)
    leaves.push_back(tape.leaf(p));
  Var<S> out = f(tape, leaves);
  GradientMap<S> grads = tape.backward(out, leaves);
  std::vector<Tensor<S>> result;
  result.reserve(leaves.size());
  for (const auto &v : leaves)
    result.push_back(grads.at(v));
  return result;
}

/// Value of `f` at `points` without differentiation.
template <typename S>
S evaluate(const TapeFunction<S> &f, std::span<const Tensor<S>> points) {
  Tape<S> tape;
  std::vector<Var<S>> inputs;
  for (const auto &p : points)
    inputs.push_back(tape.constant(p));
  return f(tape, inputs).value().item();
}

inline Extended evaluate_extended(const TapeFunction<Extended> &f,
                                  const std::vector<Tensor<Extended>> &points) {
  return evaluate<Extended>(f, std::span<const Tensor<Extended>>(points));
}

/**
 * Max over all coordinates of |analytic - numeric| / max(|analytic|,
 * |numeric|, 1e-8), where numeric = (f(x + eps e) - f(x - eps e)) / 2 eps is
 * evaluated by `f_ref` and analytic comes from the tape of `f`.
 */
template <typename S>
GradCheckResult finite_diff_check(const TapeFunction<S> &f,
                                  const TapeFunction<Extended> &f_ref,
                                  std::span<const Tensor<double>> points,
                                  double eps) {
  std::vector<Tensor<S>> cast_points;
  for (const auto &p : points)
    cast_points.push_back(p.template cast<S>());
  const std::vector<Tensor<S>> analytic =
    tape_gradients<S>(f, std::span<const Tensor<S>>(cast_points));

  GradCheckResult result;
  std::vector<Tensor<Extended>> probe;
  for (const auto &p : points)
    probe.push_back(p.template cast<Extended>());
  const Extended h = eps;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const Extended x0 = probe[k][i];
      probe[k][i] = x0 + h;
      const Extended up = evaluate_extended(f_ref, probe);
      probe[k][i] = x0 - h;
      const Extended down = evaluate_extended(f_ref, probe);
      probe[k][i] = x0;
      const double numeric = static_cast<double>((up - down) / (2 * h));
      const double a = static_cast<double>(analytic[k][i]);
      const double denom =
        std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_input = k;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

/// Adapt a precision-generic callable fn(Tape<T> &, std::span<const Var<T>>).
template <typename S, typename Fn> TapeFunction<S> at_precision(Fn fn) {
  return [fn](Tape<S> &tape, std::span<const Var<S>> inputs) {
    return fn(tape, inputs);
  };
}

/// Check a precision-generic callable with the analytic side on a tape of S.
template <typename S = double, typename Fn>
GradCheckResult gradient_check(Fn fn, std::span<const Tensor<double>> points,
                               double eps = 1e-5) {
  return finite_diff_check<S>(at_precision<S>(fn), at_precision<Extended>(fn),
                              points, eps);
}

template <typename S = double, typename Fn>
GradCheckResult gradient_check(Fn fn, const Tensor<double> &point,
                               double eps = 1e-5) {
  return gradient_check<S>(fn, std::span<const Tensor<double>>(&point, 1), eps);
}

} // namespace agdt

#endif // AGDT_GRADCHECK_H
