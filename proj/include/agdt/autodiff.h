// SPDX-License-Identifier: Apache-2.0
/**
 * @file   autodiff.h
 * @brief  Reverse-mode differentiation tape.
 *
 * Every operation appends one node holding its output value and a closure
 * that, given the node's output gradient, accumulates into the gradients of
 * its inputs. Node creation order is a topological order, so backward is a
 * single reverse sweep. A tape and its nodes belong to one thread.
 */
#ifndef AGDT_AUTODIFF_H
#define AGDT_AUTODIFF_H

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include <agdt/tensor.h>

namespace agdt {

template <typename S> class Tape;

/// Handle to a node on a tape.
template <typename S> struct Var {
  Tape<S> *tape = nullptr;
  std::size_t id = 0;

  const Tensor<S> &value() const { return tape->value(id); }
  const Shape &shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Gradient per requested leaf. Leaves the loss does not reach hold zeros.
template <typename S> class GradientMap {
public:
  void set(std::size_t id, Tensor<S> grad) { grads_[id] = std::move(grad); }

  const Tensor<S> &at(const Var<S> &v) const { return grads_.at(v.id); }
  bool contains(const Var<S> &v) const { return grads_.count(v.id) != 0; }
  std::size_t size() const { return grads_.size(); }

  bool operator==(const GradientMap &other) const = default;

private:
  std::map<std::size_t, Tensor<S>> grads_;
};

/// Lazily allocated gradient buffers for one backward sweep.
template <typename S> class GradBuffers {
public:
  explicit GradBuffers(const Tape<S> &tape)
    : tape_(tape), grads_(tape.size()), live_(tape.size(), false) {}

  /// Gradient slot of node `id`, zero-initialised on first use.
  Tensor<S> &at(std::size_t id) {
    if (!live_[id]) {
      grads_[id] = Tensor<S>(tape_.value(id).shape());
      live_[id] = true;
    }
    return grads_[id];
  }

  bool live(std::size_t id) const { return live_[id]; }

private:
  const Tape<S> &tape_;
  std::vector<Tensor<S>> grads_;
  std::vector<bool> live_;
};

template <typename S> class Tape {
public:
  using scalar_type = S;
  using BackwardFn =
    std::function<void(const Tensor<S> &grad_out, GradBuffers<S> &grads)>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  /// Differentiable input (a parameter or a point under test).
  Var<S> leaf(Tensor<S> value) { return push(std::move(value), true, {}); }

  /// Input that never receives a gradient.
  Var<S> constant(Tensor<S> value) { return push(std::move(value), false, {}); }

  /**
   * Record an operation result. `fn` is dropped when no input requires a
   * gradient, which makes the node a constant.
   */
  Var<S> record(Tensor<S> value, std::initializer_list<Var<S>> inputs,
                BackwardFn fn) {
    bool any = false;
    for (const auto &in : inputs) {
      check_owner(in);
      any = any || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), any, any ? std::move(fn) : BackwardFn{});
  }

  /// Variant for operations with a runtime-sized input list.
  Var<S> record(Tensor<S> value, std::span<const Var<S>> inputs,
                BackwardFn fn) {
    bool any = false;
    for (const auto &in : inputs) {
      check_owner(in);
      any = any || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), any, any ? std::move(fn) : BackwardFn{});
  }

  const Tensor<S> &value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /**
   * Reverse accumulation from a scalar root. Gradients live in buffers
   * local to this call, so repeated sweeps over the same tape agree bit
   * for bit.
   */
  GradientMap<S> backward(const Var<S> &loss, std::span<const Var<S>> wrt) {
    check_owner(loss);
    if (loss.value().size() != 1)
      throw ValidationError("backward needs a scalar root, got shape " +
                            shape_string(loss.shape()));
    GradBuffers<S> grads(*this);
    grads.at(loss.id).fill(S{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node &node = nodes_[i];
      if (!node.backward || !grads.live(i))
        continue;
      node.backward(grads.at(i), grads);
    }
    GradientMap<S> out;
    for (const auto &v : wrt) {
      check_owner(v);
      out.set(v.id, grads.live(v.id) ? grads.at(v.id)
                                     : Tensor<S>(value(v.id).shape()));
    }
    return out;
  }

  GradientMap<S> backward(const Var<S> &loss,
                          std::initializer_list<Var<S>> wrt) {
    return backward(loss, std::span<const Var<S>>(wrt.begin(), wrt.size()));
  }

private:
  struct Node {
    Tensor<S> value;
    bool requires_grad;
    BackwardFn backward;
  };

  Var<S> push(Tensor<S> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(fn)});
    return Var<S>{this, nodes_.size() - 1};
  }

  void check_owner(const Var<S> &v) const {
    if (v.tape != this || v.id >= nodes_.size())
      throw ValidationError("variable does not belong to this tape");
  }

  std::vector<Node> nodes_;
};

} // namespace agdt

#endif // AGDT_AUTODIFF_H
