// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.h
 * @brief  Differentiable tensor operations recorded on a Tape.
 *
 * Binary operations require equal shapes; the only implicit broadcast is a
 * scalar applied to every element. All reductions sum in a fixed
 * sequential order so results do not depend on batch composition.
 */
#ifndef AGDT_OPS_H
#define AGDT_OPS_H

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <agdt/autodiff.h>
#include <agdt/random.h>
#include <agdt/tensor.h>

namespace agdt {

enum class UnaryOp { Sigmoid, Tanh, Relu };
enum class BinaryOp { Add, Sub, Mul };
enum class ReduceOp { Sum, Mean, Max };

/// Axis value selecting a reduction over every element.
inline constexpr int kAllAxes = -1;

namespace kernels {

/// Dot product with eight fixed interleaved partial sums.
template <typename S> S dot(const S *a, const S *b, std::size_t n);

/// c[m x n] += a[m x k] * b[k x n]
template <typename S>
void gemm_nn(const Tensor<S> &a, const Tensor<S> &b, Tensor<S> &c);
/// c[m x n] += a[m x k] * b[n x k]^T
template <typename S>
void gemm_nt(const Tensor<S> &a, const Tensor<S> &b, Tensor<S> &c);
/// c[k x n] += a[m x k]^T * b[m x n]
template <typename S>
void gemm_tn(const Tensor<S> &a, const Tensor<S> &b, Tensor<S> &c);

} // namespace kernels

/// a[m x k] * b[k x n]
template <typename S> Var<S> matmul(Var<S> a, Var<S> b);

/// a[m x k] * b[n x k]^T, the row-batched form of W x for W stored out x in.
template <typename S> Var<S> matmul_nt(Var<S> a, Var<S> b);

template <typename S> Var<S> binary(BinaryOp op, Var<S> a, Var<S> b);
template <typename S> Var<S> unary(UnaryOp op, Var<S> a);

template <typename S> Var<S> add(Var<S> a, Var<S> b) {
  return binary(BinaryOp::Add, a, b);
}
template <typename S> Var<S> sub(Var<S> a, Var<S> b) {
  return binary(BinaryOp::Sub, a, b);
}
template <typename S> Var<S> mul(Var<S> a, Var<S> b) {
  return binary(BinaryOp::Mul, a, b);
}
template <typename S> Var<S> sigmoid(Var<S> a) {
  return unary(UnaryOp::Sigmoid, a);
}
template <typename S> Var<S> tanh(Var<S> a) { return unary(UnaryOp::Tanh, a); }
/// relu with derivative 0 at exactly 0.
template <typename S> Var<S> relu(Var<S> a) { return unary(UnaryOp::Relu, a); }

template <typename S> Var<S> add_scalar(Var<S> a, S s);
template <typename S> Var<S> mul_scalar(Var<S> a, S s);
/// s - a, elementwise.
template <typename S> Var<S> scalar_sub(S s, Var<S> a);

template <typename S> Var<S> concat(Var<S> a, Var<S> b, int axis);

/// Rows of a matrix in the given order; indices may repeat.
template <typename S>
Var<S> select_rows(Var<S> t, std::span<const std::size_t> indices);

/**
 * Sum, mean or max along an axis of a vector or matrix, or over all
 * elements with kAllAxes. The reduced axis is dropped from the shape. Max
 * routes the gradient to the first maximal element.
 */
template <typename S> Var<S> reduce(ReduceOp op, Var<S> t, int axis);

/// Row i of the result is row i of `a` where take_a[i] is set, else of `b`.
template <typename S>
Var<S> row_where(const std::vector<std::uint8_t> &take_a, Var<S> a, Var<S> b);

/**
 * Reduce a sequence of [B x d] step tensors over time, per row, using only
 * steps with mask(row, t) != 0. Steps are visited in order t = 0, 1, ...
 * Throws ValidationError if a row has no real step.
 */
template <typename S>
Var<S> masked_pool_steps(std::span<const Var<S>> steps, const Tensor<S> &mask,
                         ReduceOp op);

/**
 * Softmax cross-entropy summed over rows: -sum y log softmax(logits).
 * Each target row must be one-hot. Uses the log-sum-exp form.
 */
template <typename S>
Var<S> softmax_xent_logits(Var<S> logits, const Tensor<S> &onehot);

/**
 * Sigmoid cross-entropy summed over every element, computed as
 * max(x, 0) - x y + log1p(exp(-|x|)). Targets must be 0 or 1.
 */
template <typename S>
Var<S> sigmoid_xent_logits(Var<S> logits, const Tensor<S> &targets);

/// Inverted dropout. Identity in eval mode or at rate 0.
template <typename S>
Var<S> dropout(Var<S> t, double rate, bool training, Rng &rng);

} // namespace agdt

#endif // AGDT_OPS_H
