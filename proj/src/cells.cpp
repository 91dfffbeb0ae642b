// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cells.cpp
 * @brief  Recurrences of the aspect-guided deep-transition encoder.
 */
#include <agdt/cells.h>

#include <cmath>

namespace agdt {

namespace {

template <typename S>
void expect_shape(const Tensor<S> &t, std::size_t rows, std::size_t cols,
                  const std::string &name) {
  if (t.rank() != 2 || t.rows() != rows || t.cols() != cols)
    throw DimensionError(name + " has shape " + shape_string(t.shape()) +
                         ", expected " + shape_string({rows, cols}));
}

template <typename S>
void expect_width(const Var<S> &v, std::size_t cols, const char *name) {
  const auto &t = v.value();
  if (t.rank() != 2 || t.cols() != cols)
    throw DimensionError(std::string(name) + " has shape " +
                         shape_string(t.shape()) + ", expected [B x " +
                         std::to_string(cols) + "]");
}

/// (1 - z) * h_prev + z * candidate
template <typename S> Var<S> interpolate(Var<S> z, Var<S> h_prev, Var<S> cand) {
  return add(mul(scalar_sub(S{1}, z), h_prev), mul(z, cand));
}

template <typename S>
std::vector<std::uint8_t> mask_column(const Tensor<S> &mask, std::size_t t) {
  std::vector<std::uint8_t> col(mask.rows());
  for (std::size_t r = 0; r < mask.rows(); ++r)
    col[r] = mask.at(r, t) != S{0};
  return col;
}

template <typename S>
void check_mask(const Tensor<S> &mask, std::size_t steps, std::size_t rows) {
  if (mask.rank() != 2 || mask.cols() != steps)
    throw ValidationError("mask of shape " + shape_string(mask.shape()) +
                          " does not cover " + std::to_string(steps) +
                          " positions");
  if (steps > 0 && mask.rows() != rows)
    throw ValidationError("mask has " + std::to_string(mask.rows()) +
                          " rows for a batch of " + std::to_string(rows));
  for (std::size_t r = 0; r < mask.rows(); ++r) {
    bool padding = false;
    for (std::size_t t = 0; t < steps; ++t) {
      const S m = mask.at(r, t);
      if (m != S{0} && m != S{1})
        throw ValidationError("mask entries must be 0 or 1");
      if (m == S{0})
        padding = true;
      else if (padding)
        throw ValidationError("padding must be a suffix (row " +
                              std::to_string(r) + ")");
    }
  }
}

/// A-GRU given the precomputed aspect projection a * W_a^T.
template <typename S>
CellStep<S> agru_projected(Binding<S> &w, const AGruParams<S> &p, Var<S> x,
                           std::optional<Var<S>> aspect_proj, Var<S> h_prev) {
  auto gate_of = [&](const Tensor<S> &wx, const Tensor<S> &wh) {
    return add(matmul_nt(x, w(wx)), matmul_nt(h_prev, w(wh)));
  };
  Var<S> r = sigmoid(gate_of(p.w_xr, p.w_hr));
  Var<S> z = sigmoid(gate_of(p.w_xz, p.w_hz));
  Var<S> l = sigmoid(gate_of(p.w_xl, p.w_hl));
  Var<S> h1 = matmul_nt(x, w(p.w_1));
  Var<S> x_h = matmul_nt(x, w(p.w_xh));
  Var<S> h_h = mul(r, matmul_nt(h_prev, w(p.w_hh)));

  if (!p.aspect_gated) {
    Var<S> cand = add(agdt::tanh(add(x_h, h_h)), mul(l, h1));
    return {interpolate(z, h_prev, cand), std::nullopt};
  }
  Var<S> g = relu(add(*aspect_proj, matmul_nt(h_prev, w(p.w_hg))));
  Var<S> h2 = matmul_nt(x, w(p.w_2));
  Var<S> cand =
    add(add(agdt::tanh(add(mul(g, x_h), h_h)), mul(l, h1)), mul(g, h2));
  return {interpolate(z, h_prev, cand), g};
}

template <typename S>
CellStep<S> block_projected(Binding<S> &w, const DeepTransitionBlock<S> &b,
                            Var<S> x, std::optional<Var<S>> aspect_proj,
                            Var<S> h_prev) {
  CellStep<S> step = agru_projected(w, b.head, x, aspect_proj, h_prev);
  for (const auto &level : b.transitions)
    step.h = tgru_step(w, level, step.h);
  return step;
}

} // namespace

template <typename S>
AGruParams<S> AGruParams<S>::zeros(std::size_t d_x, std::size_t d_a,
                                   std::size_t d_h, bool aspect_gated) {
  AGruParams p;
  p.aspect_gated = aspect_gated;
  for (Tensor<S> *t : {&p.w_xh, &p.w_xr, &p.w_xz, &p.w_xl, &p.w_1})
    *t = Tensor<S>(Shape{d_h, d_x});
  for (Tensor<S> *t : {&p.w_hh, &p.w_hr, &p.w_hz, &p.w_hl})
    *t = Tensor<S>(Shape{d_h, d_h});
  if (aspect_gated) {
    p.w_hg = Tensor<S>(Shape{d_h, d_h});
    p.w_a = Tensor<S>(Shape{d_h, d_a});
    p.w_2 = Tensor<S>(Shape{d_h, d_x});
  }
  return p;
}

template <typename S> void AGruParams<S>::validate() const {
  const std::size_t d_h = w_hh.rows();
  const std::size_t d_x = w_xh.cols();
  if (d_h == 0 || d_x == 0)
    throw DimensionError("A-GRU dimensions must be positive");
  for (auto [t, name] : {std::pair{&w_xh, "w_xh"}, {&w_xr, "w_xr"},
                         {&w_xz, "w_xz"}, {&w_xl, "w_xl"}, {&w_1, "w_1"}})
    expect_shape(*t, d_h, d_x, name);
  for (auto [t, name] : {std::pair{&w_hh, "w_hh"}, {&w_hr, "w_hr"},
                         {&w_hz, "w_hz"}, {&w_hl, "w_hl"}})
    expect_shape(*t, d_h, d_h, name);
  if (aspect_gated) {
    expect_shape(w_hg, d_h, d_h, "w_hg");
    expect_shape(w_2, d_h, d_x, "w_2");
    if (w_a.rank() != 2 || w_a.rows() != d_h || w_a.cols() == 0)
      throw DimensionError("w_a has shape " + shape_string(w_a.shape()) +
                           ", expected [" + std::to_string(d_h) + "x d_a]");
  }
}

template <typename S> TGruParams<S> TGruParams<S>::zeros(std::size_t d_h) {
  return {Tensor<S>(Shape{d_h, d_h}), Tensor<S>(Shape{d_h, d_h}),
          Tensor<S>(Shape{d_h, d_h})};
}

template <typename S> void TGruParams<S>::validate() const {
  const std::size_t d_h = w_h.rows();
  expect_shape(w_z, d_h, d_h, "w_z");
  expect_shape(w_r, d_h, d_h, "w_r");
  expect_shape(w_h, d_h, d_h, "w_h");
}

template <typename S>
DeepTransitionBlock<S>
DeepTransitionBlock<S>::zeros(std::size_t d_x, std::size_t d_a, std::size_t d_h,
                              std::size_t depth, bool aspect_gated) {
  DeepTransitionBlock b;
  b.head = AGruParams<S>::zeros(d_x, d_a, d_h, aspect_gated);
  b.transitions.assign(depth, TGruParams<S>::zeros(d_h));
  return b;
}

template <typename S> void DeepTransitionBlock<S>::validate() const {
  if (transitions.empty())
    throw DimensionError("deep transition block needs depth >= 1");
  head.validate();
  for (const auto &t : transitions) {
    t.validate();
    if (t.w_h.rows() != head.hidden())
      throw DimensionError("T-GRU width differs from the A-GRU width");
  }
}

template <typename S>
GruParams<S> GruParams<S>::zeros(std::size_t d_in, std::size_t d_h) {
  return {Tensor<S>(Shape{d_h, d_in}), Tensor<S>(Shape{d_h, d_in}),
          Tensor<S>(Shape{d_h, d_in}), Tensor<S>(Shape{d_h, d_h}),
          Tensor<S>(Shape{d_h, d_h}),  Tensor<S>(Shape{d_h, d_h})};
}

template <typename S> void GruParams<S>::validate() const {
  const std::size_t d_h = w_hh.rows();
  const std::size_t d_in = w_xh.cols();
  expect_shape(w_xz, d_h, d_in, "w_xz");
  expect_shape(w_xr, d_h, d_in, "w_xr");
  expect_shape(w_xh, d_h, d_in, "w_xh");
  expect_shape(w_hz, d_h, d_h, "w_hz");
  expect_shape(w_hr, d_h, d_h, "w_hr");
  expect_shape(w_hh, d_h, d_h, "w_hh");
}

template <typename S>
GruStack<S> GruStack<S>::zeros(std::size_t d_x, std::size_t d_h,
                               std::size_t count) {
  GruStack s;
  for (std::size_t i = 0; i < count; ++i)
    s.layers.push_back(GruParams<S>::zeros(i == 0 ? d_x : d_h, d_h));
  return s;
}

template <typename S> void glorot_uniform(Tensor<S> &w, Rng &rng) {
  const double limit =
    std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (auto &v : w.values())
    v = static_cast<S>(rng.uniform(-limit, limit));
}

template <typename S>
double GateTrace<S>::mean(std::size_t row, std::size_t t) const {
  double sum = 0.0;
  const auto g = gate(row, t);
  for (S v : g)
    sum += static_cast<double>(v);
  return g.empty() ? 0.0 : sum / static_cast<double>(g.size());
}

template <typename S>
CellStep<S> agru_step(Binding<S> &w, const AGruParams<S> &p, Var<S> x, Var<S> a,
                      Var<S> h_prev) {
  expect_width(x, p.input(), "x");
  expect_width(h_prev, p.hidden(), "h_prev");
  std::optional<Var<S>> proj;
  if (p.aspect_gated) {
    expect_width(a, p.w_a.cols(), "aspect");
    proj = matmul_nt(a, w(p.w_a));
  }
  return agru_projected(w, p, x, proj, h_prev);
}

template <typename S>
Var<S> tgru_step(Binding<S> &w, const TGruParams<S> &p, Var<S> h_in) {
  expect_width(h_in, p.w_h.cols(), "h_in");
  Var<S> z = sigmoid(matmul_nt(h_in, w(p.w_z)));
  Var<S> r = sigmoid(matmul_nt(h_in, w(p.w_r)));
  Var<S> cand = agdt::tanh(mul(r, matmul_nt(h_in, w(p.w_h))));
  return interpolate(z, h_in, cand);
}

template <typename S>
CellStep<S> block_step(Binding<S> &w, const DeepTransitionBlock<S> &b, Var<S> x,
                       Var<S> a, Var<S> h_prev) {
  CellStep<S> step = agru_step(w, b.head, x, a, h_prev);
  for (const auto &level : b.transitions)
    step.h = tgru_step(w, level, step.h);
  return step;
}

template <typename S>
EncodeResult<S> encode_sequence(Binding<S> &w, const DeepTransitionBlock<S> &b,
                                std::span<const Var<S>> inputs, Var<S> a,
                                const Tensor<S> &mask, Var<S> h0, bool reverse,
                                bool record_trace) {
  const std::size_t steps = inputs.size();
  const std::size_t rows = h0.value().rows();
  check_mask(mask, steps, rows);
  expect_width(h0, b.head.hidden(), "h0");

  EncodeResult<S> result;
  result.states.resize(steps);
  const bool trace = record_trace && b.head.aspect_gated;
  if (trace) {
    result.trace.emplace();
    result.trace->mask = mask;
    result.trace->gates.resize(steps);
  }
  if (steps == 0)
    return result;

  std::optional<Var<S>> proj;
  if (b.head.aspect_gated) {
    expect_width(a, b.head.w_a.cols(), "aspect");
    proj = matmul_nt(a, w(b.head.w_a));
  }
  Var<S> h = h0;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    expect_width(inputs[t], b.head.input(), "x");
    CellStep<S> step = block_projected(w, b, inputs[t], proj, h);
    h = row_where(mask_column(mask, t), step.h, h);
    result.states[t] = h;
    if (trace)
      result.trace->gates[t] = step.gate->value();
  }
  return result;
}

template <typename S>
Var<S> gru_step(Binding<S> &w, const GruParams<S> &p, Var<S> x, Var<S> h_prev) {
  expect_width(x, p.w_xh.cols(), "x");
  expect_width(h_prev, p.w_hh.cols(), "h_prev");
  Var<S> z =
    sigmoid(add(matmul_nt(x, w(p.w_xz)), matmul_nt(h_prev, w(p.w_hz))));
  Var<S> r =
    sigmoid(add(matmul_nt(x, w(p.w_xr)), matmul_nt(h_prev, w(p.w_hr))));
  Var<S> cand = agdt::tanh(
    add(matmul_nt(x, w(p.w_xh)), matmul_nt(mul(r, h_prev), w(p.w_hh))));
  return interpolate(z, h_prev, cand);
}

template <typename S>
std::vector<Var<S>> gru_encode(Binding<S> &w, const GruStack<S> &p,
                               std::span<const Var<S>> inputs,
                               const Tensor<S> &mask, Var<S> h0, bool reverse) {
  const std::size_t steps = inputs.size();
  check_mask(mask, steps, h0.value().rows());
  if (p.layers.empty())
    throw DimensionError("GRU stack needs at least one layer");
  std::vector<Var<S>> current(inputs.begin(), inputs.end());
  for (const auto &layer : p.layers) {
    std::vector<Var<S>> next(steps);
    Var<S> h = h0;
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = reverse ? steps - 1 - k : k;
      h = row_where(mask_column(mask, t), gru_step(w, layer, current[t], h), h);
      next[t] = h;
    }
    current = std::move(next);
  }
  return current;
}

#define AGDT_INSTANTIATE_CELLS(S)                                              \
  template struct AGruParams<S>;                                               \
  template struct TGruParams<S>;                                               \
  template struct DeepTransitionBlock<S>;                                      \
  template struct GruParams<S>;                                                \
  template struct GruStack<S>;                                                 \
  template struct GateTrace<S>;                                                \
  template void glorot_uniform<S>(Tensor<S> &, Rng &);                         \
  template CellStep<S> agru_step<S>(Binding<S> &, const AGruParams<S> &,       \
                                    Var<S>, Var<S>, Var<S>);                   \
  template Var<S> tgru_step<S>(Binding<S> &, const TGruParams<S> &, Var<S>);   \
  template CellStep<S> block_step<S>(Binding<S> &,                             \
                                     const DeepTransitionBlock<S> &, Var<S>,   \
                                     Var<S>, Var<S>);                          \
  template EncodeResult<S> encode_sequence<S>(                                 \
    Binding<S> &, const DeepTransitionBlock<S> &, std::span<const Var<S>>,     \
    Var<S>, const Tensor<S> &, Var<S>, bool, bool);                            \
  template Var<S> gru_step<S>(Binding<S> &, const GruParams<S> &, Var<S>,      \
                              Var<S>);                                         \
  template std::vector<Var<S>> gru_encode<S>(Binding<S> &,                     \
                                             const GruStack<S> &,              \
                                             std::span<const Var<S>>,          \
                                             const Tensor<S> &, Var<S>, bool);

AGDT_INSTANTIATE_CELLS(float)
AGDT_INSTANTIATE_CELLS(double)
AGDT_INSTANTIATE_CELLS(long double)

} // namespace agdt
