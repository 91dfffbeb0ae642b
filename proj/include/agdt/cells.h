// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cells.h
 * @brief  Aspect-guided GRU, transition GRU, baseline GRU and the
 *         deep-transition encoder built from them.
 *
 * Shapes follow the row-batched convention: a batch of B vectors of size d
 * is a [B x d] matrix and a weight W of shape [d_out x d_in] is applied as
 * x * W^T. No gate or candidate carries a bias term.
 */
#ifndef AGDT_CELLS_H
#define AGDT_CELLS_H

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <agdt/autodiff.h>
#include <agdt/ops.h>
#include <agdt/random.h>
#include <agdt/tensor.h>

namespace agdt {

/**
 * Maps parameter tensors to tape variables. A parameter becomes a leaf the
 * first time a cell reads it, unless a variable was bound to it explicitly.
 * Parameters must stay at a fixed address while the binding is alive.
 */
template <typename S> class Binding {
public:
  explicit Binding(Tape<S> &tape) : tape_(tape) {}

  Var<S> operator()(const Tensor<S> &param) {
    auto it = vars_.find(&param);
    if (it != vars_.end())
      return it->second;
    Var<S> v = tape_.leaf(param);
    vars_.emplace(&param, v);
    return v;
  }

  void bind(const Tensor<S> &param, Var<S> v) { vars_[&param] = v; }

  std::optional<Var<S>> find(const Tensor<S> &param) const {
    auto it = vars_.find(&param);
    if (it == vars_.end())
      return std::nullopt;
    return it->second;
  }

  Tape<S> &tape() { return tape_; }

private:
  Tape<S> &tape_;
  std::unordered_map<const Tensor<S> *, Var<S>> vars_;
};

/// Weights of one aspect-guided GRU. Without the aspect gate the cell
/// reduces to a linear-transformation GRU and w_a, w_hg, w_2 are unused.
template <typename S> struct AGruParams {
  Tensor<S> w_xh, w_xr, w_xz, w_xl; // d_h x d_x
  Tensor<S> w_hh, w_hr, w_hz, w_hl; // d_h x d_h
  Tensor<S> w_hg;                   // d_h x d_h
  Tensor<S> w_a;                    // d_h x d_a
  Tensor<S> w_1, w_2;               // d_h x d_x
  bool aspect_gated = true;

  static AGruParams zeros(std::size_t d_x, std::size_t d_a, std::size_t d_h,
                          bool aspect_gated = true);

  std::size_t hidden() const { return w_hh.rows(); }
  std::size_t input() const { return w_xh.cols(); }

  /// Throws DimensionError unless every matrix has its documented shape.
  void validate() const;

  template <typename Self, typename Fn>
  static void visit(Self &self, const std::string &prefix, Fn &&fn) {
    fn(prefix + "w_xh", self.w_xh);
    fn(prefix + "w_xr", self.w_xr);
    fn(prefix + "w_xz", self.w_xz);
    fn(prefix + "w_xl", self.w_xl);
    fn(prefix + "w_hh", self.w_hh);
    fn(prefix + "w_hr", self.w_hr);
    fn(prefix + "w_hz", self.w_hz);
    fn(prefix + "w_hl", self.w_hl);
    if (self.aspect_gated) {
      fn(prefix + "w_hg", self.w_hg);
      fn(prefix + "w_a", self.w_a);
    }
    fn(prefix + "w_1", self.w_1);
    if (self.aspect_gated)
      fn(prefix + "w_2", self.w_2);
  }
};

/// Weights of one transition GRU level.
template <typename S> struct TGruParams {
  Tensor<S> w_z, w_r, w_h; // d_h x d_h

  static TGruParams zeros(std::size_t d_h);
  void validate() const;

  template <typename Self, typename Fn>
  static void visit(Self &self, const std::string &prefix, Fn &&fn) {
    fn(prefix + "w_z", self.w_z);
    fn(prefix + "w_r", self.w_r);
    fn(prefix + "w_h", self.w_h);
  }
};

/// One A-GRU followed by `depth` T-GRUs, applied at every time step.
template <typename S> struct DeepTransitionBlock {
  AGruParams<S> head;
  std::vector<TGruParams<S>> transitions;

  static DeepTransitionBlock zeros(std::size_t d_x, std::size_t d_a,
                                   std::size_t d_h, std::size_t depth,
                                   bool aspect_gated = true);

  std::size_t depth() const { return transitions.size(); }
  void validate() const;

  template <typename Self, typename Fn>
  static void visit(Self &self, const std::string &prefix, Fn &&fn) {
    AGruParams<S>::visit(self.head, prefix + "agru.", fn);
    for (std::size_t i = 0; i < self.transitions.size(); ++i)
      TGruParams<S>::visit(self.transitions[i],
                           prefix + "tgru" + std::to_string(i + 1) + ".", fn);
  }
};

/// Conventional GRU layer (update, reset, candidate).
template <typename S> struct GruParams {
  Tensor<S> w_xz, w_xr, w_xh; // d_h x d_in
  Tensor<S> w_hz, w_hr, w_hh; // d_h x d_h

  static GruParams zeros(std::size_t d_in, std::size_t d_h);
  void validate() const;

  template <typename Self, typename Fn>
  static void visit(Self &self, const std::string &prefix, Fn &&fn) {
    fn(prefix + "w_xz", self.w_xz);
    fn(prefix + "w_xr", self.w_xr);
    fn(prefix + "w_xh", self.w_xh);
    fn(prefix + "w_hz", self.w_hz);
    fn(prefix + "w_hr", self.w_hr);
    fn(prefix + "w_hh", self.w_hh);
  }
};

/// Stacked GRU baseline; layer l consumes the state sequence of layer l-1.
template <typename S> struct GruStack {
  std::vector<GruParams<S>> layers;

  static GruStack zeros(std::size_t d_x, std::size_t d_h, std::size_t count);

  template <typename Self, typename Fn>
  static void visit(Self &self, const std::string &prefix, Fn &&fn) {
    for (std::size_t i = 0; i < self.layers.size(); ++i)
      GruParams<S>::visit(self.layers[i],
                          prefix + "gru" + std::to_string(i + 1) + ".", fn);
  }
};

/// Uniform Glorot initialisation of a [fan_out x fan_in] matrix in place.
template <typename S> void glorot_uniform(Tensor<S> &w, Rng &rng);

/// Per-step aspect-gate activations; absent where the step is padding.
template <typename S> struct GateTrace {
  std::vector<Tensor<S>> gates; // one [B x d_h] tensor per time step
  Tensor<S> mask;               // [B x T]

  bool present(std::size_t row, std::size_t t) const {
    return mask.at(row, t) != S{0};
  }
  std::span<const S> gate(std::size_t row, std::size_t t) const {
    return gates[t].row(row);
  }
  /// Mean over the d_h gate entries.
  double mean(std::size_t row, std::size_t t) const;
};

template <typename S> struct CellStep {
  Var<S> h;
  std::optional<Var<S>> gate;
};

/**
 * One A-GRU step. x: [B x d_x], a: [B x d_a], h_prev: [B x d_h].
 * Returns the new state and, when aspect gated, g_t.
 */
template <typename S>
CellStep<S> agru_step(Binding<S> &w, const AGruParams<S> &p, Var<S> x, Var<S> a,
                      Var<S> h_prev);

/// One T-GRU level, h_in: [B x d_h].
template <typename S>
Var<S> tgru_step(Binding<S> &w, const TGruParams<S> &p, Var<S> h_in);

/// A-GRU output threaded through the block's T-GRUs in order.
template <typename S>
CellStep<S> block_step(Binding<S> &w, const DeepTransitionBlock<S> &b, Var<S> x,
                       Var<S> a, Var<S> h_prev);

template <typename S> struct EncodeResult {
  std::vector<Var<S>> states; // one [B x d_h] per position
  std::optional<GateTrace<S>> trace;
};

/**
 * Run a block over a padded batch. `inputs` holds one [B x d_x] tensor per
 * position, `mask` is [B x T] with 1 for real tokens and padding only as a
 * suffix. At padded positions the previous state is carried unchanged.
 * With `reverse` the recurrence runs from the last position to the first;
 * states stay indexed by position.
 */
template <typename S>
EncodeResult<S> encode_sequence(Binding<S> &w, const DeepTransitionBlock<S> &b,
                                std::span<const Var<S>> inputs, Var<S> a,
                                const Tensor<S> &mask, Var<S> h0,
                                bool reverse = false, bool record_trace = true);

template <typename S>
Var<S> gru_step(Binding<S> &w, const GruParams<S> &p, Var<S> x, Var<S> h_prev);

/// Stacked GRU over a padded batch, same masking contract as above.
template <typename S>
std::vector<Var<S>> gru_encode(Binding<S> &w, const GruStack<S> &p,
                               std::span<const Var<S>> inputs,
                               const Tensor<S> &mask, Var<S> h0,
                               bool reverse = false);

} // namespace agdt

#endif // AGDT_CELLS_H
