// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.cpp
 * @brief  Forward values and backward rules of the tape operations.
 */
#include <agdt/ops.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace agdt {

namespace {

template <typename S> Tape<S> &tape_of(const Var<S> &v) {
  if (v.tape == nullptr)
    throw ValidationError("unbound variable");
  return *v.tape;
}

template <typename S>
void require_same_tape(const Var<S> &a, const Var<S> &b) {
  if (a.tape != b.tape)
    throw ValidationError("operands live on different tapes");
}

template <typename S>
void require_matrix(const Tensor<S> &t, const char *what) {
  if (t.rank() != 2)
    throw DimensionError(std::string(what) + " expects a matrix, got " +
                         shape_string(t.shape()));
}

template <typename S>
void require_same_shape(const Tensor<S> &a, const Tensor<S> &b,
                        const char *what) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(what) + ": shape " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

template <typename S> void axpy(S alpha, const S *x, S *y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j)
    y[j] += alpha * x[j];
}

template <typename S> S sigmoid_scalar(S x) {
  if (x >= S{0})
    return S{1} / (S{1} + std::exp(-x));
  const S e = std::exp(x);
  return e / (S{1} + e);
}

} // namespace

namespace kernels {

template <typename S> S dot(const S *a, const S *b, std::size_t n) {
  S acc[8] = {};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8)
    for (std::size_t l = 0; l < 8; ++l)
      acc[l] += a[k + l] * b[k + l];
  S tail{0};
  for (; k < n; ++k)
    tail += a[k] * b[k];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <typename S>
void gemm_nn(const Tensor<S> &a, const Tensor<S> &b, Tensor<S> &c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    S *ci = c.row(i).data();
    const S *ai = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p)
      axpy(ai[p], b.row(p).data(), ci, n);
  }
}

template <typename S>
void gemm_nt(const Tensor<S> &a, const Tensor<S> &b, Tensor<S> &c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const S *ai = a.row(i).data();
    S *ci = c.row(i).data();
    for (std::size_t j = 0; j < n; ++j)
      ci[j] += dot(ai, b.row(j).data(), k);
  }
}

template <typename S>
void gemm_tn(const Tensor<S> &a, const Tensor<S> &b, Tensor<S> &c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const S *ai = a.row(i).data();
    const S *bi = b.row(i).data();
    for (std::size_t p = 0; p < k; ++p)
      axpy(ai[p], bi, c.row(p).data(), n);
  }
}

} // namespace kernels

template <typename S> Var<S> matmul(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  Tape<S> &tape = tape_of(a);
  const Tensor<S> &av = a.value();
  const Tensor<S> &bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner extents differ, " +
                         shape_string(av.shape()) + " * " +
                         shape_string(bv.shape()));
  Tensor<S> out(Shape{av.rows(), bv.cols()});
  kernels::gemm_nn(av, bv, out);
  return tape.record(std::move(out), {a, b},
                     [&tape, a, b](const Tensor<S> &g, GradBuffers<S> &grads) {
                       if (tape.requires_grad(a.id))
                         kernels::gemm_nt(g, tape.value(b.id), grads.at(a.id));
                       if (tape.requires_grad(b.id))
                         kernels::gemm_tn(tape.value(a.id), g, grads.at(b.id));
                     });
}

template <typename S> Var<S> matmul_nt(Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  Tape<S> &tape = tape_of(a);
  const Tensor<S> &av = a.value();
  const Tensor<S> &bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  if (av.cols() != bv.cols())
    throw DimensionError("matmul_nt: inner extents differ, " +
                         shape_string(av.shape()) + " * " +
                         shape_string(bv.shape()) + "^T");
  Tensor<S> out(Shape{av.rows(), bv.rows()});
  kernels::gemm_nt(av, bv, out);
  return tape.record(std::move(out), {a, b},
                     [&tape, a, b](const Tensor<S> &g, GradBuffers<S> &grads) {
                       if (tape.requires_grad(a.id))
                         kernels::gemm_nn(g, tape.value(b.id), grads.at(a.id));
                       if (tape.requires_grad(b.id))
                         kernels::gemm_tn(g, tape.value(a.id), grads.at(b.id));
                     });
}

template <typename S> Var<S> binary(BinaryOp op, Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  Tape<S> &tape = tape_of(a);
  const Tensor<S> &av = a.value();
  const Tensor<S> &bv = b.value();
  require_same_shape(av, bv, "elementwise");
  Tensor<S> out(av.shape());
  const std::size_t n = av.size();
  switch (op) {
  case BinaryOp::Add:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = av[i] + bv[i];
    break;
  case BinaryOp::Sub:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = av[i] - bv[i];
    break;
  case BinaryOp::Mul:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = av[i] * bv[i];
    break;
  }
  return tape.record(
    std::move(out), {a, b},
    [&tape, a, b, op](const Tensor<S> &g, GradBuffers<S> &grads) {
      const std::size_t n = g.size();
      if (tape.requires_grad(a.id)) {
        Tensor<S> &ga = grads.at(a.id);
        if (op == BinaryOp::Mul) {
          const Tensor<S> &bv = tape.value(b.id);
          for (std::size_t i = 0; i < n; ++i)
            ga[i] += g[i] * bv[i];
        } else {
          for (std::size_t i = 0; i < n; ++i)
            ga[i] += g[i];
        }
      }
      if (tape.requires_grad(b.id)) {
        Tensor<S> &gb = grads.at(b.id);
        if (op == BinaryOp::Mul) {
          const Tensor<S> &av = tape.value(a.id);
          for (std::size_t i = 0; i < n; ++i)
            gb[i] += g[i] * av[i];
        } else if (op == BinaryOp::Sub) {
          for (std::size_t i = 0; i < n; ++i)
            gb[i] -= g[i];
        } else {
          for (std::size_t i = 0; i < n; ++i)
            gb[i] += g[i];
        }
      }
    });
}

template <typename S> Var<S> unary(UnaryOp op, Var<S> a) {
  Tape<S> &tape = tape_of(a);
  const Tensor<S> &av = a.value();
  Tensor<S> out(av.shape());
  const std::size_t n = av.size();
  switch (op) {
  case UnaryOp::Sigmoid:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = sigmoid_scalar(av[i]);
    break;
  case UnaryOp::Tanh:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = std::tanh(av[i]);
    break;
  case UnaryOp::Relu:
    for (std::size_t i = 0; i < n; ++i)
      out[i] = av[i] > S{0} ? av[i] : S{0};
    break;
  }
  const std::size_t self = tape.size();
  return tape.record(
    std::move(out), {a},
    [&tape, a, op, self](const Tensor<S> &g, GradBuffers<S> &grads) {
      Tensor<S> &ga = grads.at(a.id);
      const Tensor<S> &y = tape.value(self);
      const std::size_t n = g.size();
      switch (op) {
      case UnaryOp::Sigmoid:
        for (std::size_t i = 0; i < n; ++i)
          ga[i] += g[i] * y[i] * (S{1} - y[i]);
        break;
      case UnaryOp::Tanh:
        for (std::size_t i = 0; i < n; ++i)
          ga[i] += g[i] * (S{1} - y[i] * y[i]);
        break;
      case UnaryOp::Relu: {
        const Tensor<S> &x = tape.value(a.id);
        for (std::size_t i = 0; i < n; ++i)
          if (x[i] > S{0})
            ga[i] += g[i];
        break;
      }
      }
    });
}

template <typename S> Var<S> add_scalar(Var<S> a, S s) {
  Tape<S> &tape = tape_of(a);
  Tensor<S> out = a.value();
  for (auto &v : out.values())
    v += s;
  return tape.record(std::move(out), {a},
                     [a](const Tensor<S> &g, GradBuffers<S> &grads) {
                       Tensor<S> &ga = grads.at(a.id);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         ga[i] += g[i];
                     });
}

template <typename S> Var<S> mul_scalar(Var<S> a, S s) {
  Tape<S> &tape = tape_of(a);
  Tensor<S> out = a.value();
  for (auto &v : out.values())
    v *= s;
  return tape.record(std::move(out), {a},
                     [a, s](const Tensor<S> &g, GradBuffers<S> &grads) {
                       Tensor<S> &ga = grads.at(a.id);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         ga[i] += g[i] * s;
                     });
}

template <typename S> Var<S> scalar_sub(S s, Var<S> a) {
  Tape<S> &tape = tape_of(a);
  Tensor<S> out = a.value();
  for (auto &v : out.values())
    v = s - v;
  return tape.record(std::move(out), {a},
                     [a](const Tensor<S> &g, GradBuffers<S> &grads) {
                       Tensor<S> &ga = grads.at(a.id);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         ga[i] -= g[i];
                     });
}

template <typename S> Var<S> concat(Var<S> a, Var<S> b, int axis) {
  require_same_tape(a, b);
  Tape<S> &tape = tape_of(a);
  const Tensor<S> &av = a.value();
  const Tensor<S> &bv = b.value();
  if (av.rank() != bv.rank() || av.rank() == 0 || axis < 0 ||
      static_cast<std::size_t>(axis) >= av.rank())
    throw DimensionError("concat: invalid axis " + std::to_string(axis) +
                         " for " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  Shape shape = av.shape();
  for (std::size_t d = 0; d < shape.size(); ++d)
    if (d != static_cast<std::size_t>(axis) && av.shape()[d] != bv.shape()[d])
      throw DimensionError("concat: extents differ, " +
                           shape_string(av.shape()) + " and " +
                           shape_string(bv.shape()));
  shape[axis] += bv.shape()[axis];
  Tensor<S> out(shape);
  // Row-major: concatenating along the last axis interleaves rows,
  // along axis 0 of a matrix it stacks them.
  const bool stack = av.rank() == 2 && axis == 0;
  if (stack || av.rank() == 1) {
    std::copy(av.values().begin(), av.values().end(), out.values().begin());
    std::copy(bv.values().begin(), bv.values().end(),
              out.values().begin() + av.size());
  } else {
    for (std::size_t r = 0; r < av.rows(); ++r) {
      auto dst = out.row(r);
      std::copy(av.row(r).begin(), av.row(r).end(), dst.begin());
      std::copy(bv.row(r).begin(), bv.row(r).end(), dst.begin() + av.cols());
    }
  }
  return tape.record(
    std::move(out), {a, b},
    [&tape, a, b, stack](const Tensor<S> &g, GradBuffers<S> &grads) {
      const Tensor<S> &av = tape.value(a.id);
      if (stack || av.rank() == 1) {
        if (tape.requires_grad(a.id)) {
          Tensor<S> &ga = grads.at(a.id);
          for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] += g[i];
        }
        if (tape.requires_grad(b.id)) {
          Tensor<S> &gb = grads.at(b.id);
          for (std::size_t i = 0; i < gb.size(); ++i)
            gb[i] += g[av.size() + i];
        }
        return;
      }
      const std::size_t ca = av.cols();
      const std::size_t cb = tape.value(b.id).cols();
      for (std::size_t r = 0; r < av.rows(); ++r) {
        auto gr = g.row(r);
        if (tape.requires_grad(a.id)) {
          auto dst = grads.at(a.id).row(r);
          for (std::size_t j = 0; j < ca; ++j)
            dst[j] += gr[j];
        }
        if (tape.requires_grad(b.id)) {
          auto dst = grads.at(b.id).row(r);
          for (std::size_t j = 0; j < cb; ++j)
            dst[j] += gr[ca + j];
        }
      }
    });
}

template <typename S>
Var<S> select_rows(Var<S> t, std::span<const std::size_t> indices) {
  Tape<S> &tape = tape_of(t);
  const Tensor<S> &tv = t.value();
  require_matrix(tv, "select_rows");
  Tensor<S> out(Shape{indices.size(), tv.cols()});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tv.rows())
      throw DimensionError("select_rows: index " + std::to_string(indices[r]) +
                           " out of range for " + shape_string(tv.shape()));
    std::copy(tv.row(indices[r]).begin(), tv.row(indices[r]).end(),
              out.row(r).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return tape.record(std::move(out), {t},
                     [t, idx](const Tensor<S> &g, GradBuffers<S> &grads) {
                       Tensor<S> &gt = grads.at(t.id);
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         auto dst = gt.row(idx[r]);
                         auto src = g.row(r);
                         for (std::size_t j = 0; j < src.size(); ++j)
                           dst[j] += src[j];
                       }
                     });
}

template <typename S> Var<S> reduce(ReduceOp op, Var<S> t, int axis) {
  Tape<S> &tape = tape_of(t);
  const Tensor<S> &tv = t.value();
  if (tv.rank() == 0 || tv.rank() > 2 ||
      (axis != kAllAxes &&
       (axis < 0 || static_cast<std::size_t>(axis) >= tv.rank())))
    throw DimensionError("reduce: invalid axis " + std::to_string(axis) +
                         " for " + shape_string(tv.shape()));

  // Express every case as: output o collects input elements
  // {base(o) + s * stride : s < count}.
  std::size_t outputs, count, stride;
  Shape out_shape;
  auto base = [&](std::size_t o) -> std::size_t {
    if (axis == kAllAxes || tv.rank() == 1)
      return 0;
    return axis == 0 ? o : o * tv.cols();
  };
  if (axis == kAllAxes || tv.rank() == 1) {
    outputs = 1, count = tv.size(), stride = 1;
  } else if (axis == 0) {
    outputs = tv.cols(), count = tv.rows(), stride = tv.cols();
    out_shape = {outputs};
  } else {
    outputs = tv.rows(), count = tv.cols(), stride = 1;
    out_shape = {outputs};
  }
  if (count == 0 && op != ReduceOp::Sum)
    throw DimensionError("reduce: empty axis");

  Tensor<S> out(out_shape);
  std::vector<std::size_t> argmax(op == ReduceOp::Max ? outputs : 0);
  for (std::size_t o = 0; o < outputs; ++o) {
    const std::size_t b = base(o);
    if (op == ReduceOp::Max) {
      std::size_t best = b;
      for (std::size_t s = 1; s < count; ++s)
        if (tv[b + s * stride] > tv[best])
          best = b + s * stride;
      argmax[o] = best;
      out[o] = tv[best];
    } else {
      S acc{0};
      for (std::size_t s = 0; s < count; ++s)
        acc += tv[b + s * stride];
      out[o] = op == ReduceOp::Mean ? acc / static_cast<S>(count) : acc;
    }
  }
  std::vector<std::size_t> bases(outputs);
  for (std::size_t o = 0; o < outputs; ++o)
    bases[o] = base(o);
  return tape.record(
    std::move(out), {t},
    [t, op, count, stride, bases, argmax](const Tensor<S> &g,
                                          GradBuffers<S> &grads) {
      Tensor<S> &gt = grads.at(t.id);
      for (std::size_t o = 0; o < bases.size(); ++o) {
        if (op == ReduceOp::Max) {
          gt[argmax[o]] += g[o];
          continue;
        }
        const S v = op == ReduceOp::Mean ? g[o] / static_cast<S>(count) : g[o];
        for (std::size_t s = 0; s < count; ++s)
          gt[bases[o] + s * stride] += v;
      }
    });
}

template <typename S>
Var<S> row_where(const std::vector<std::uint8_t> &take_a, Var<S> a, Var<S> b) {
  require_same_tape(a, b);
  Tape<S> &tape = tape_of(a);
  const Tensor<S> &av = a.value();
  const Tensor<S> &bv = b.value();
  require_same_shape(av, bv, "row_where");
  if (take_a.size() != av.rows())
    throw DimensionError("row_where: mask of length " +
                         std::to_string(take_a.size()) + " for " +
                         shape_string(av.shape()));
  Tensor<S> out(av.shape());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto src = take_a[r] ? av.row(r) : bv.row(r);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return tape.record(
    std::move(out), {a, b},
    [&tape, a, b, take_a](const Tensor<S> &g, GradBuffers<S> &grads) {
      for (std::size_t r = 0; r < take_a.size(); ++r) {
        const Var<S> &dst = take_a[r] ? a : b;
        if (!tape.requires_grad(dst.id))
          continue;
        auto gd = grads.at(dst.id).row(r);
        auto gr = g.row(r);
        for (std::size_t j = 0; j < gr.size(); ++j)
          gd[j] += gr[j];
      }
    });
}

template <typename S>
Var<S> masked_pool_steps(std::span<const Var<S>> steps, const Tensor<S> &mask,
                         ReduceOp op) {
  if (steps.empty())
    throw ValidationError("masked_pool_steps: no steps");
  Tape<S> &tape = tape_of(steps.front());
  const std::size_t rows = steps.front().value().rows();
  const std::size_t cols = steps.front().value().cols();
  if (mask.rows() != rows || mask.cols() != steps.size())
    throw DimensionError("masked_pool_steps: mask " +
                         shape_string(mask.shape()) + " for " +
                         std::to_string(steps.size()) + " steps of " +
                         shape_string(steps.front().shape()));
  for (const auto &s : steps) {
    require_same_tape(s, steps.front());
    require_same_shape(s.value(), steps.front().value(), "masked_pool_steps");
  }

  Tensor<S> out(Shape{rows, cols});
  std::vector<std::size_t> counts(rows, 0);
  // For max: the step index holding each output element.
  std::vector<std::size_t> source(op == ReduceOp::Max ? rows * cols : 0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto o = out.row(r);
    for (std::size_t t = 0; t < steps.size(); ++t) {
      if (mask.at(r, t) == S{0})
        continue;
      auto v = steps[t].value().row(r);
      for (std::size_t j = 0; j < cols; ++j) {
        if (op == ReduceOp::Max) {
          if (counts[r] == 0 || v[j] > o[j]) {
            o[j] = v[j];
            source[r * cols + j] = t;
          }
        } else {
          o[j] += v[j];
        }
      }
      ++counts[r];
    }
    if (counts[r] == 0)
      throw ValidationError("masked_pool_steps: row " + std::to_string(r) +
                            " has no real step");
    if (op == ReduceOp::Mean)
      for (auto &x : o)
        x /= static_cast<S>(counts[r]);
  }
  std::vector<Var<S>> inputs(steps.begin(), steps.end());
  return tape.record(
    std::move(out), steps,
    [&tape, inputs, mask, op, counts, source](const Tensor<S> &g,
                                              GradBuffers<S> &grads) {
      const std::size_t rows = g.rows(), cols = g.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        auto gr = g.row(r);
        if (op == ReduceOp::Max) {
          for (std::size_t j = 0; j < cols; ++j) {
            const Var<S> &src = inputs[source[r * cols + j]];
            if (tape.requires_grad(src.id))
              grads.at(src.id).at(r, j) += gr[j];
          }
          continue;
        }
        const S scale =
          op == ReduceOp::Mean ? S{1} / static_cast<S>(counts[r]) : S{1};
        for (std::size_t t = 0; t < inputs.size(); ++t) {
          if (mask.at(r, t) == S{0} || !tape.requires_grad(inputs[t].id))
            continue;
          auto dst = grads.at(inputs[t].id).row(r);
          for (std::size_t j = 0; j < cols; ++j)
            dst[j] += op == ReduceOp::Mean ? gr[j] * scale : gr[j];
        }
      }
    });
}

template <typename S>
Var<S> softmax_xent_logits(Var<S> logits, const Tensor<S> &onehot) {
  Tape<S> &tape = tape_of(logits);
  const Tensor<S> &x = logits.value();
  require_same_shape(x, onehot, "softmax_xent_logits");
  if (x.rank() == 0 || x.rank() > 2)
    throw DimensionError("softmax_xent_logits expects a vector or matrix");
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t ones = 0;
    for (S y : onehot.row(r)) {
      if (y == S{1})
        ++ones;
      else if (y != S{0})
        throw ValidationError("softmax_xent_logits: target row " +
                              std::to_string(r) + " is not one-hot");
    }
    if (ones != 1)
      throw ValidationError("softmax_xent_logits: target row " +
                            std::to_string(r) + " is not one-hot");
  }
  Tensor<S> probs(x.shape());
  S total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x.row(r);
    const S m = *std::max_element(xr.begin(), xr.end());
    S z{0};
    for (S v : xr)
      z += std::exp(v - m);
    const S lse = m + std::log(z);
    auto pr = probs.row(r);
    auto yr = onehot.row(r);
    for (std::size_t j = 0; j < cols; ++j) {
      pr[j] = std::exp(xr[j] - lse);
      if (yr[j] != S{0})
        total += lse - xr[j];
    }
  }
  return tape.record(Tensor<S>::scalar(total), {logits},
                     [logits, probs = std::move(probs),
                      onehot](const Tensor<S> &g, GradBuffers<S> &grads) {
                       Tensor<S> &gx = grads.at(logits.id);
                       const S s = g.item();
                       for (std::size_t i = 0; i < gx.size(); ++i)
                         gx[i] += s * (probs[i] - onehot[i]);
                     });
}

template <typename S>
Var<S> sigmoid_xent_logits(Var<S> logits, const Tensor<S> &targets) {
  Tape<S> &tape = tape_of(logits);
  const Tensor<S> &x = logits.value();
  require_same_shape(x, targets, "sigmoid_xent_logits");
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i] != S{0} && targets[i] != S{1})
      throw ValidationError("sigmoid_xent_logits: target " +
                            std::to_string(i) + " is not binary");
  S total{0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S v = x[i];
    total += std::max(v, S{0}) - v * targets[i] + std::log1p(std::exp(-std::abs(v)));
  }
  return tape.record(Tensor<S>::scalar(total), {logits},
                     [&tape, logits, targets](const Tensor<S> &g,
                                              GradBuffers<S> &grads) {
                       Tensor<S> &gx = grads.at(logits.id);
                       const Tensor<S> &x = tape.value(logits.id);
                       const S s = g.item();
                       for (std::size_t i = 0; i < gx.size(); ++i)
                         gx[i] += s * (sigmoid_scalar(x[i]) - targets[i]);
                     });
}

template <typename S>
Var<S> dropout(Var<S> t, double rate, bool training, Rng &rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ValidationError("dropout rate " + std::to_string(rate) +
                          " outside [0, 1)");
  if (!training || rate == 0.0)
    return t;
  Tape<S> &tape = tape_of(t);
  const Tensor<S> &tv = t.value();
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  Tensor<S> scale(tv.shape());
  Tensor<S> out(tv.shape());
  for (std::size_t i = 0; i < tv.size(); ++i) {
    scale[i] = rng.bernoulli(rate) ? S{0} : keep_scale;
    out[i] = tv[i] * scale[i];
  }
  return tape.record(std::move(out), {t},
                     [t, scale = std::move(scale)](const Tensor<S> &g,
                                                   GradBuffers<S> &grads) {
                       Tensor<S> &gt = grads.at(t.id);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         gt[i] += g[i] * scale[i];
                     });
}

#define AGDT_INSTANTIATE_OPS(S)                                                \
  template S kernels::dot<S>(const S *, const S *, std::size_t);               \
  template void kernels::gemm_nn<S>(const Tensor<S> &, const Tensor<S> &,      \
                                    Tensor<S> &);                              \
  template void kernels::gemm_nt<S>(const Tensor<S> &, const Tensor<S> &,      \
                                    Tensor<S> &);                              \
  template void kernels::gemm_tn<S>(const Tensor<S> &, const Tensor<S> &,      \
                                    Tensor<S> &);                              \
  template Var<S> matmul<S>(Var<S>, Var<S>);                                   \
  template Var<S> matmul_nt<S>(Var<S>, Var<S>);                                \
  template Var<S> binary<S>(BinaryOp, Var<S>, Var<S>);                         \
  template Var<S> unary<S>(UnaryOp, Var<S>);                                   \
  template Var<S> add_scalar<S>(Var<S>, S);                                    \
  template Var<S> mul_scalar<S>(Var<S>, S);                                    \
  template Var<S> scalar_sub<S>(S, Var<S>);                                    \
  template Var<S> concat<S>(Var<S>, Var<S>, int);                              \
  template Var<S> select_rows<S>(Var<S>, std::span<const std::size_t>);        \
  template Var<S> reduce<S>(ReduceOp, Var<S>, int);                            \
  template Var<S> row_where<S>(const std::vector<std::uint8_t> &, Var<S>,      \
                               Var<S>);                                        \
  template Var<S> masked_pool_steps<S>(std::span<const Var<S>>,                \
                                       const Tensor<S> &, ReduceOp);           \
  template Var<S> softmax_xent_logits<S>(Var<S>, const Tensor<S> &);           \
  template Var<S> sigmoid_xent_logits<S>(Var<S>, const Tensor<S> &);           \
  template Var<S> dropout<S>(Var<S>, double, bool, Rng &);

AGDT_INSTANTIATE_OPS(float)
AGDT_INSTANTIATE_OPS(double)
AGDT_INSTANTIATE_OPS(long double)

} // namespace agdt
