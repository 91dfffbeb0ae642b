// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include <agdt/cells.h>

#include "cell_util.h"
#include "test_util.h"

using namespace agdt;
using namespace agdt::testing;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// y = W x for W [out x in] and x a plain vector.
std::vector<double> matvec(const Tensor<double> &w, const std::vector<double> &x) {
  std::vector<double> y(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      y[i] += w.at(i, j) * x[j];
  return y;
}

std::vector<double> as_vec(const Tensor<double> &t) {
  return {t.values().begin(), t.values().end()};
}

Tensor<double> row(const std::vector<double> &v) {
  return Tensor<double>(Shape{1, v.size()}, v);
}

} // namespace

TEST_CASE("A-GRU zero fixed point") {
  auto p = AGruParams<double>::zeros(3, 2, 4);
  p.validate();
  Tape<double> tape;
  Binding<double> w(tape);
  auto x = tape.constant(Tensor<double>(Shape{1, 3}, 0.7));
  auto a = tape.constant(Tensor<double>(Shape{1, 2}, -0.3));
  auto h0 = tape.constant(Tensor<double>(Shape{1, 4}));
  auto step = agru_step(w, p, x, a, h0);
  CHECK(step.h.value() == Tensor<double>(Shape{1, 4}));
  REQUIRE(step.gate.has_value());
  CHECK(step.gate->value() == Tensor<double>(Shape{1, 4}));
}

TEST_CASE("A-GRU with a silent aspect gate keeps only the reset and linear paths") {
  Rng rng(101);
  auto p = AGruParams<double>::zeros(3, 3, 4);
  randomize(p, rng);
  p.w_a.fill(0);
  p.w_hg.fill(0);
  const auto xv = as_vec(random_tensor({3}, rng));
  const auto av = as_vec(random_tensor({3}, rng));
  const auto hv = as_vec(random_tensor({4}, rng));

  Tape<double> tape;
  Binding<double> w(tape);
  auto step = agru_step(w, p, tape.constant(row(xv)), tape.constant(row(av)),
                        tape.constant(row(hv)));

  const auto xr = matvec(p.w_xr, xv);
  const auto hr = matvec(p.w_hr, hv);
  const auto xz = matvec(p.w_xz, xv);
  const auto hz = matvec(p.w_hz, hv);
  const auto xl = matvec(p.w_xl, xv);
  const auto hl = matvec(p.w_hl, hv);
  const auto hh = matvec(p.w_hh, hv);
  const auto h1 = matvec(p.w_1, xv);
  for (std::size_t i = 0; i < 4; ++i) {
    const double r = sigm(xr[i] + hr[i]);
    const double z = sigm(xz[i] + hz[i]);
    const double l = sigm(xl[i] + hl[i]);
    const double cand = std::tanh(r * hh[i]) + l * h1[i];
    const double expected = (1 - z) * hv[i] + z * cand;
    CHECK(step.h.value()[i] == doctest::Approx(expected).epsilon(1e-14));
    CHECK(step.gate->value()[i] == 0.0);
  }
}

TEST_CASE("A-GRU gradients match finite differences") {
  Rng rng(103);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = AGruParams<double>::zeros(3, 3, 4);
    randomize(p, rng);
    auto points = flatten(p);
    REQUIRE(points.size() == 12);
    points.push_back(random_tensor({1, 3}, rng));
    points.push_back(random_tensor({1, 3}, rng));
    points.push_back(random_tensor({1, 4}, rng));
    auto f = [p](auto &tape, auto in) {
      using T = SCALAR_OF(tape);
      auto local = like<T>(p);
      Binding<T> w(tape);
      std::size_t k = 0;
      bind_inputs(w, local, in, k);
      auto step = agru_step(w, local, in[k], in[k + 1], in[k + 2]);
      return reduce(ReduceOp::Sum, step.h, kAllAxes);
    };
    const std::span<const Tensor<double>> pts(points);
    CHECK(gradient_check(f, pts).max_rel_error <= 1e-6);
    CHECK(gradient_check<float>(f, pts).max_rel_error <= 1e-4);
  }
}

TEST_CASE("T-GRU direct evaluation") {
  auto p = TGruParams<double>::zeros(4);
  Tape<double> tape;
  Binding<double> w(tape);
  auto hin = Tensor<double>::matrix({{0.2, -0.4, 1.0, 0.0}});
  auto out = tgru_step(w, p, tape.constant(hin));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(out.value()[i] == 0.5 * hin[i]);

  Rng rng(107);
  auto q = TGruParams<double>::zeros(4);
  randomize(q, rng);
  auto zero = tgru_step(w, q, tape.constant(Tensor<double>(Shape{1, 4})));
  CHECK(zero.value() == Tensor<double>(Shape{1, 4}));

  CHECK_THROWS_AS(tgru_step(w, q, tape.constant(Tensor<double>(Shape{1, 3}))),
                  DimensionError);
}

TEST_CASE("T-GRU gradients match finite differences") {
  Rng rng(109);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = TGruParams<double>::zeros(4);
    randomize(p, rng);
    auto points = flatten(p);
    points.push_back(random_tensor({2, 4}, rng));
    auto f = [p](auto &tape, auto in) {
      using T = SCALAR_OF(tape);
      auto local = like<T>(p);
      Binding<T> w(tape);
      std::size_t k = 0;
      bind_inputs(w, local, in, k);
      return reduce(ReduceOp::Sum, tgru_step(w, local, in[k]), kAllAxes);
    };
    const std::span<const Tensor<double>> pts(points);
    CHECK(gradient_check(f, pts).max_rel_error <= 1e-6);
    CHECK(gradient_check<float>(f, pts).max_rel_error <= 1e-4);
  }
}

TEST_CASE("property: T-GRU output stays in the unit box") {
  Rng rng(113);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = TGruParams<double>::zeros(5);
    randomize(p, rng, 3.0);
    Tape<double> tape;
    Binding<double> w(tape);
    auto out = tgru_step(w, p, tape.constant(random_tensor({3, 5}, rng)));
    for (double v : out.value().values())
      CHECK(std::abs(v) <= 1.0);
  }
}

TEST_CASE("deep transition block composition") {
  Rng rng(127);
  auto b = DeepTransitionBlock<double>::zeros(3, 3, 4, 1);
  randomize(b.head, rng);
  b.validate();
  Tape<double> tape;
  Binding<double> w(tape);
  auto x = tape.constant(random_tensor({1, 3}, rng));
  auto a = tape.constant(random_tensor({1, 3}, rng));
  auto h = tape.constant(random_tensor({1, 4}, rng));
  auto agru = agru_step(w, b.head, x, a, h);
  auto block = block_step(w, b, x, a, h);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(block.h.value()[i] == 0.5 * agru.h.value()[i]);

  auto deep = DeepTransitionBlock<double>::zeros(3, 3, 4, 4);
  std::vector<Var<double>> inputs;
  for (int t = 0; t < 5; ++t)
    inputs.push_back(tape.constant(random_tensor({1, 3}, rng)));
  auto enc = encode_sequence<double>(w, deep, inputs, a,
                                     Tensor<double>(Shape{1, 5}, 1.0),
                                     tape.constant(Tensor<double>(Shape{1, 4})));
  for (const auto &s : enc.states)
    CHECK(s.value() == Tensor<double>(Shape{1, 4}));

  auto empty = DeepTransitionBlock<double>::zeros(3, 3, 4, 0);
  CHECK_THROWS_AS(empty.validate(), DimensionError);
}

TEST_CASE("block gradients over a sequence match finite differences") {
  Rng rng(131);
  for (int trial = 0; trial < 10; ++trial) {
    auto b = DeepTransitionBlock<double>::zeros(3, 3, 4, 2);
    randomize(b, rng);
    auto points = flatten(b);
    for (int t = 0; t < 3; ++t)
      points.push_back(random_tensor({1, 3}, rng));
    points.push_back(random_tensor({1, 3}, rng)); // aspect
    points.push_back(random_tensor({1, 4}, rng)); // h0
    auto f = [b](auto &tape, auto in) {
      using T = SCALAR_OF(tape);
      auto local = like<T>(b);
      Binding<T> w(tape);
      std::size_t k = 0;
      bind_inputs(w, local, in, k);
      std::vector<Var<T>> xs(in.begin() + k, in.begin() + k + 3);
      auto enc = encode_sequence<T>(w, local, xs, in[k + 3],
                                    Tensor<T>(Shape{1, 3}, 1.0), in[k + 4]);
      return reduce(ReduceOp::Sum, enc.states.back(), kAllAxes);
    };
    const std::span<const Tensor<double>> pts(points);
    CHECK(gradient_check(f, pts).max_rel_error <= 1e-6);
  }
}

TEST_CASE("encode_sequence masking and composition") {
  Rng rng(137);
  auto b = DeepTransitionBlock<double>::zeros(3, 2, 4, 2);
  b.head.visit(b.head, "", [&](const std::string &, Tensor<double> &t) {
    glorot_uniform(t, rng);
  });
  for (auto &lvl : b.transitions)
    TGruParams<double>::visit(lvl, "", [&](const std::string &, Tensor<double> &t) {
      glorot_uniform(t, rng);
    });

  Tape<double> tape;
  Binding<double> w(tape);
  auto a = tape.constant(random_tensor({2, 2}, rng));
  auto h0 = tape.constant(Tensor<double>(Shape{2, 4}));

  SUBCASE("empty sequence") {
    auto enc = encode_sequence<double>(w, b, {}, a, Tensor<double>(Shape{2, 0}), h0);
    CHECK(enc.states.empty());
  }

  std::vector<Tensor<double>> xs;
  for (int t = 0; t < 3; ++t)
    xs.push_back(random_tensor({2, 3}, rng));
  std::vector<Var<double>> in;
  for (const auto &x : xs)
    in.push_back(tape.constant(x));
  auto enc = encode_sequence<double>(w, b, in, a, Tensor<double>(Shape{2, 3}, 1.0), h0);

  SUBCASE("three manual block steps") {
    Var<double> h = h0;
    for (int t = 0; t < 3; ++t) {
      h = block_step(w, b, in[t], a, h).h;
      CHECK(enc.states[t].value() == h.value());
    }
  }

  SUBCASE("padding suffix leaves real positions bit-identical") {
    for (std::size_t k = 1; k <= 4; ++k) {
      std::vector<Var<double>> padded = in;
      Tensor<double> mask(Shape{2, 3 + k});
      for (std::size_t t = 0; t < 3; ++t)
        mask.at(0, t) = mask.at(1, t) = 1;
      for (std::size_t j = 0; j < k; ++j)
        padded.push_back(tape.constant(Tensor<double>(Shape{2, 3})));
      auto more = encode_sequence<double>(w, b, padded, a, mask, h0);
      for (std::size_t t = 0; t < 3; ++t)
        CHECK(more.states[t].value() == enc.states[t].value());
      // carried through to the end
      CHECK(more.states.back().value() == enc.states.back().value());
      for (std::size_t t = 0; t < 3 + k; ++t)
        CHECK(more.trace->present(0, t) == (t < 3));
    }
  }

  SUBCASE("gate trace is nonnegative") {
    REQUIRE(enc.trace.has_value());
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t r = 0; r < 2; ++r) {
        CHECK(enc.trace->mean(r, t) >= 0.0);
        for (double g : enc.trace->gate(r, t))
          CHECK(g >= 0.0);
      }
  }

  SUBCASE("mask validation") {
    CHECK_THROWS_AS(encode_sequence<double>(w, b, in, a,
                                            Tensor<double>(Shape{2, 2}, 1.0), h0),
                    ValidationError);
    auto holes = Tensor<double>::matrix({{1, 0, 1}, {1, 1, 1}});
    CHECK_THROWS_AS(encode_sequence<double>(w, b, in, a, holes, h0),
                    ValidationError);
  }
}

TEST_CASE("property: zero aspect weights make encoding aspect independent") {
  Rng rng(139);
  for (int trial = 0; trial < 20; ++trial) {
    auto b = DeepTransitionBlock<double>::zeros(3, 3, 4, 1 + rng.below(3));
    randomize(b, rng);
    b.head.w_a.fill(0);
    b.head.w_hg.fill(0);
    const std::size_t T = 1 + rng.below(5);
    Tape<double> tape;
    Binding<double> w(tape);
    std::vector<Var<double>> in;
    for (std::size_t t = 0; t < T; ++t)
      in.push_back(tape.constant(random_tensor({1, 3}, rng)));
    auto h0 = tape.constant(Tensor<double>(Shape{1, 4}));
    const Tensor<double> mask(Shape{1, T}, 1.0);
    auto e1 = encode_sequence<double>(
      w, b, in, tape.constant(random_tensor({1, 3}, rng)), mask, h0);
    auto e2 = encode_sequence<double>(
      w, b, in, tape.constant(random_tensor({1, 3}, rng, -5, 5)), mask, h0);
    for (std::size_t t = 0; t < T; ++t)
      CHECK(e1.states[t].value() == e2.states[t].value());
  }
}

TEST_CASE("baseline GRU") {
  Tape<double> tape;
  Binding<double> w(tape);
  auto zero = GruStack<double>::zeros(3, 2, 2);
  std::vector<Var<double>> in = {
    tape.constant(Tensor<double>::matrix({{1, 2, 3}})),
    tape.constant(Tensor<double>::matrix({{-1, 0, 4}}))};
  auto h0 = tape.constant(Tensor<double>(Shape{1, 2}));
  for (auto &s : gru_encode<double>(w, zero, in, Tensor<double>(Shape{1, 2}, 1.0), h0))
    CHECK(s.value() == Tensor<double>(Shape{1, 2}));

  SUBCASE("single step by hand on a 2-dim instance") {
    GruParams<double> p{
      Tensor<double>::matrix({{0.5, -0.2}, {0.1, 0.3}}),  // w_xz
      Tensor<double>::matrix({{-0.4, 0.2}, {0.6, 0.1}}),  // w_xr
      Tensor<double>::matrix({{0.3, 0.3}, {-0.5, 0.8}}),  // w_xh
      Tensor<double>::matrix({{0.2, 0.0}, {-0.1, 0.4}}),  // w_hz
      Tensor<double>::matrix({{0.1, -0.3}, {0.2, 0.2}}),  // w_hr
      Tensor<double>::matrix({{0.7, -0.6}, {0.05, 0.9}})}; // w_hh
    const double x[2] = {1.0, -2.0};
    const double h[2] = {0.5, -0.25};
    // z = sigm(Wxz x + Whz h), r = sigm(Wxr x + Whr h)
    const double z0 = sigm(0.5 * 1 + -0.2 * -2 + 0.2 * 0.5 + 0.0 * -0.25);
    const double z1 = sigm(0.1 * 1 + 0.3 * -2 + -0.1 * 0.5 + 0.4 * -0.25);
    const double r0 = sigm(-0.4 * 1 + 0.2 * -2 + 0.1 * 0.5 + -0.3 * -0.25);
    const double r1 = sigm(0.6 * 1 + 0.1 * -2 + 0.2 * 0.5 + 0.2 * -0.25);
    // candidate = tanh(Wxh x + Whh (r * h))
    const double c0 =
      std::tanh(0.3 * 1 + 0.3 * -2 + 0.7 * (r0 * h[0]) + -0.6 * (r1 * h[1]));
    const double c1 =
      std::tanh(-0.5 * 1 + 0.8 * -2 + 0.05 * (r0 * h[0]) + 0.9 * (r1 * h[1]));
    const double e0 = (1 - z0) * h[0] + z0 * c0;
    const double e1 = (1 - z1) * h[1] + z1 * c1;

    auto out = gru_step(w, p, tape.constant(Tensor<double>::matrix({{x[0], x[1]}})),
                        tape.constant(Tensor<double>::matrix({{h[0], h[1]}})));
    CHECK(out.value()[0] == doctest::Approx(e0).epsilon(1e-14));
    CHECK(out.value()[1] == doctest::Approx(e1).epsilon(1e-14));
  }
}

TEST_CASE("baseline GRU gradients match finite differences") {
  Rng rng(149);
  for (int trial = 0; trial < 10; ++trial) {
    auto stack = GruStack<double>::zeros(3, 4, 2);
    randomize(stack, rng);
    auto points = flatten(stack);
    for (int t = 0; t < 3; ++t)
      points.push_back(random_tensor({2, 3}, rng));
    auto mask = Tensor<double>::matrix({{1, 1, 1}, {1, 1, 0}});
    auto f = [stack, mask](auto &tape, auto in) {
      using T = SCALAR_OF(tape);
      auto local = like<T>(stack);
      Binding<T> w(tape);
      std::size_t k = 0;
      bind_inputs(w, local, in, k);
      std::vector<Var<T>> xs(in.begin() + k, in.end());
      auto states = gru_encode<T>(w, local, xs, mask.template cast<T>(),
                                  tape.constant(Tensor<T>(Shape{2, 4})));
      return reduce(ReduceOp::Sum, states.back(), kAllAxes);
    };
    const std::span<const Tensor<double>> pts(points);
    CHECK(gradient_check(f, pts).max_rel_error <= 1e-6);
  }
}

TEST_CASE("single block and GRU step gradients") {
  Rng rng(151);
  for (int trial = 0; trial < 10; ++trial) {
    auto b = DeepTransitionBlock<double>::zeros(3, 3, 4, 2);
    randomize(b, rng);
    auto points = flatten(b);
    points.push_back(random_tensor({2, 3}, rng));
    points.push_back(random_tensor({2, 3}, rng));
    points.push_back(random_tensor({2, 4}, rng));
    auto f = [b](auto &tape, auto in) {
      using T = SCALAR_OF(tape);
      auto local = like<T>(b);
      Binding<T> w(tape);
      std::size_t k = 0;
      bind_inputs(w, local, in, k);
      return reduce(ReduceOp::Sum,
                    block_step(w, local, in[k], in[k + 1], in[k + 2]).h, kAllAxes);
    };
    CHECK(gradient_check(f, std::span<const Tensor<double>>(points))
            .max_rel_error <= 1e-6);

    auto stack = GruStack<double>::zeros(3, 4, 1);
    randomize(stack, rng);
    auto gpoints = flatten(stack);
    gpoints.push_back(random_tensor({2, 3}, rng));
    gpoints.push_back(random_tensor({2, 4}, rng));
    auto g = [stack](auto &tape, auto in) {
      using T = SCALAR_OF(tape);
      auto local = like<T>(stack);
      Binding<T> w(tape);
      std::size_t k = 0;
      bind_inputs(w, local, in, k);
      return reduce(ReduceOp::Sum, gru_step(w, local.layers[0], in[k], in[k + 1]),
                    kAllAxes);
    };
    const std::span<const Tensor<double>> gpts(gpoints);
    CHECK(gradient_check(g, gpts).max_rel_error <= 1e-6);
    CHECK(gradient_check<float>(g, gpts).max_rel_error <= 1e-4);
  }
}

TEST_CASE("cell shape errors") {
  auto p = AGruParams<double>::zeros(3, 2, 4);
  Tape<double> tape;
  Binding<double> w(tape);
  auto h = tape.constant(Tensor<double>(Shape{1, 4}));
  auto a = tape.constant(Tensor<double>(Shape{1, 2}));
  CHECK_THROWS_AS(agru_step(w, p, tape.constant(Tensor<double>(Shape{1, 5})), a, h),
                  DimensionError);
  p.w_hz = Tensor<double>(Shape{4, 3});
  CHECK_THROWS_AS(p.validate(), DimensionError);
}
