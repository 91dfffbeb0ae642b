// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <string>

#include "test_util.h"

using namespace agdt;
using agdt::testing::check_both;
using agdt::testing::random_tensor;
using agdt::testing::weighted_sum;

namespace {

Tensor<double> eval1(const Tensor<double> &x,
                     Var<double> (*op)(Var<double>)) {
  Tape<double> tape;
  return op(tape.constant(x)).value();
}

} // namespace

TEST_CASE("matmul hand example and identity") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>::matrix({{1, 2}, {3, 4}}));
  auto b = tape.constant(Tensor<double>::matrix({{1}, {1}}));
  CHECK(matmul(a, b).value() == Tensor<double>::matrix({{3}, {7}}));

  Rng rng(7);
  auto m = random_tensor({3, 5}, rng);
  auto prod = matmul(tape.constant(m), tape.constant(Tensor<double>::identity(5)));
  CHECK(prod.value() == m);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>(Shape{2, 3}));
  auto b = tape.constant(Tensor<double>(Shape{4, 2}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError &e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul_nt(a, b), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  auto sum_of_product = [](auto &tape, auto in) {
    (void)tape;
    return reduce(ReduceOp::Sum, matmul(in[0], in[1]), kAllAxes);
  };
  auto err = check_both(sum_of_product,
                        {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
  CHECK(err.double_error <= 1e-6);

  auto nt = [](auto &tape, auto in) {
    (void)tape;
    return reduce(ReduceOp::Sum, matmul_nt(in[0], in[1]), kAllAxes);
  };
  CHECK(check_both(nt, {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng)})
          .double_error <= 1e-6);
}

TEST_CASE("elementwise definitions") {
  CHECK(eval1(Tensor<double>::vector({0.0}), &agdt::sigmoid<double>)[0] == 0.5);
  auto r = eval1(Tensor<double>::vector({-1.0, 2.5, 0.0}), &agdt::relu<double>);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.5);
  CHECK(r[2] == 0.0);

  Tape<double> tape;
  auto a = tape.constant(Tensor<double>::vector({1, 2}));
  auto b = tape.constant(Tensor<double>::vector({1, 2, 3}));
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(binary(BinaryOp::Mul, a, b), DimensionError);
}

TEST_CASE("relu subgradient at zero is zero") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({0.0, 1.0, -1.0}));
  auto loss = reduce(ReduceOp::Sum, relu(x), kAllAxes);
  auto g = tape.backward(loss, {x});
  CHECK(g.at(x) == Tensor<double>::vector({0.0, 1.0, 0.0}));
}

TEST_CASE("tanh gradient matches finite differences") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto w = random_tensor({4, 3}, rng);
    auto f = [w](auto &tape, auto in) {
      return weighted_sum(tape, agdt::tanh(in[0]), w);
    };
    CHECK(check_both(f, {random_tensor({4, 3}, rng, -2, 2)}).double_error <=
          1e-6);
  }
}

TEST_CASE("concat, select_rows, reduce") {
  Tape<double> tape;
  auto c = concat(tape.constant(Tensor<double>::vector({1, 2})),
                  tape.constant(Tensor<double>::vector({3})), 0);
  CHECK(c.value() == Tensor<double>::vector({1, 2, 3}));

  Tensor<double> table(Shape{3, 5});
  for (std::size_t i = 0; i < table.size(); ++i)
    table[i] = static_cast<double>(i);
  const std::size_t idx[] = {2, 0};
  auto sel = select_rows(tape.constant(table), std::span<const std::size_t>(idx));
  CHECK(sel.value() ==
        Tensor<double>::matrix({{10, 11, 12, 13, 14}, {0, 1, 2, 3, 4}}));

  auto m = tape.constant(Tensor<double>::matrix({{1, 5}, {3, 2}}));
  CHECK(reduce(ReduceOp::Sum, m, 0).value() == Tensor<double>::vector({4, 7}));
  CHECK(reduce(ReduceOp::Mean, m, 1).value() ==
        Tensor<double>::vector({3, 2.5}));
  CHECK(reduce(ReduceOp::Max, m, kAllAxes).value().item() == 5);

  auto cols = concat(m, tape.constant(Tensor<double>::matrix({{9}, {8}})), 1);
  CHECK(cols.value() == Tensor<double>::matrix({{1, 5, 9}, {3, 2, 8}}));

  CHECK_THROWS_AS(reduce(ReduceOp::Sum, m, 2), DimensionError);
  CHECK_THROWS_AS(concat(m, tape.constant(Tensor<double>(Shape{3, 1})), 1),
                  DimensionError);
  CHECK_THROWS_AS(concat(m, m, 5), DimensionError);
  const std::size_t bad[] = {7};
  CHECK_THROWS_AS(select_rows(m, std::span<const std::size_t>(bad)),
                  DimensionError);
}

TEST_CASE("reduce max routes gradient to the first maximum") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({1, 3, 3, 2}));
  auto g = tape.backward(reduce(ReduceOp::Max, x, 0), {x});
  CHECK(g.at(x) == Tensor<double>::vector({0, 1, 0, 0}));

  Rng rng(5);
  auto f = [](auto &tape, auto in) {
    (void)tape;
    return reduce(ReduceOp::Max, in[0], kAllAxes);
  };
  // distinct entries, well separated relative to eps
  auto v = Tensor<double>::vector({0.3, -0.7, 0.9, 0.1, 0.5});
  CHECK(check_both(f, {v}).double_error <= 1e-6);
}

TEST_CASE("softmax cross-entropy") {
  Tape<double> tape;
  auto uniform = tape.constant(Tensor<double>::vector({0.2, 0.2, 0.2, 0.2, 0.2}));
  auto y = Tensor<double>::vector({0, 0, 1, 0, 0});
  CHECK(softmax_xent_logits(uniform, y).value().item() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(std::log(5.0) == doctest::Approx(1.60944).epsilon(1e-5));

  auto big = tape.constant(Tensor<double>::vector({1000, 0}));
  const double stable =
    softmax_xent_logits(big, Tensor<double>::vector({1, 0})).value().item();
  CHECK(std::isfinite(stable));
  CHECK(stable == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_xent_logits(uniform,
                                      Tensor<double>::vector({1, 1, 0, 0, 0})),
                  ValidationError);
  CHECK_THROWS_AS(softmax_xent_logits(uniform,
                                      Tensor<double>::vector({0.5, 0.5, 0, 0, 0})),
                  ValidationError);
}

TEST_CASE("softmax cross-entropy gradient is softmax minus target") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto logits = random_tensor({6}, rng, -3, 3);
    Tensor<double> y(Shape{6});
    y[rng.below(6)] = 1;
    Tape<double> tape;
    auto x = tape.leaf(logits);
    auto g = tape.backward(softmax_xent_logits(x, y), {x});
    double z = 0;
    for (double v : logits.values())
      z += std::exp(v);
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(std::abs(g.at(x)[i] - (std::exp(logits[i]) / z - y[i])) <= 1e-8);
  }
}

TEST_CASE("softmax cross-entropy is shift invariant") {
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    auto logits = random_tensor({2, 5}, rng, -4, 4);
    Tensor<double> y(Shape{2, 5});
    y.at(0, rng.below(5)) = 1;
    y.at(1, rng.below(5)) = 1;
    Tape<double> tape;
    const double base = softmax_xent_logits(tape.constant(logits), y).value().item();
    const double shift = rng.uniform(-50, 50);
    const double moved =
      softmax_xent_logits(add_scalar(tape.constant(logits), shift), y)
        .value()
        .item();
    CHECK(std::abs(base - moved) <= 1e-9);
  }
}

TEST_CASE("sigmoid cross-entropy") {
  Tape<double> tape;
  auto zero = tape.constant(Tensor<double>::vector({0, 0, 0}));
  CHECK(sigmoid_xent_logits(zero, Tensor<double>::vector({1, 0, 0}))
          .value()
          .item() == doctest::Approx(3 * std::log(2.0)).epsilon(1e-12));

  auto sat = tape.constant(Tensor<double>::vector({40, -40, 60}));
  const double l =
    sigmoid_xent_logits(sat, Tensor<double>::vector({1, 0, 1})).value().item();
  CHECK(l >= 0.0);
  CHECK(l < 1e-15);

  CHECK_THROWS_AS(sigmoid_xent_logits(zero, Tensor<double>::vector({1, 2, 0})),
                  ValidationError);

  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> y(Shape{5});
    for (auto &v : y.values())
      v = rng.bernoulli(0.4) ? 1 : 0;
    auto f = [y](auto &tape, auto in) {
      (void)tape;
      using S = typename std::decay_t<decltype(in[0].value())>::value_type;
      return sigmoid_xent_logits(in[0], y.template cast<S>());
    };
    CHECK(check_both(f, {random_tensor({5}, rng, -4, 4)}).double_error <= 1e-6);
  }
}

TEST_CASE("dropout") {
  Rng rng(29);
  Tape<double> tape;
  auto x = tape.constant(random_tensor({4, 4}, rng));
  CHECK(dropout(x, 0.0, true, rng).value() == x.value());
  CHECK(dropout(x, 0.5, false, rng).value() == x.value());
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ValidationError);
  CHECK_THROWS_AS(dropout(x, -0.1, false, rng), ValidationError);

  Rng fixed(1234);
  auto ones = tape.constant(Tensor<double>(Shape{100000}, 1.0));
  auto out = dropout(ones, 0.5, true, fixed).value();
  std::size_t survivors = 0;
  bool scaled = true;
  for (double v : out.values()) {
    if (v != 0.0) {
      ++survivors;
      scaled = scaled && v == 2.0;
    }
  }
  const double frac = static_cast<double>(survivors) / 100000.0;
  CHECK(frac >= 0.49);
  CHECK(frac <= 0.51);
  CHECK(scaled);
}

TEST_CASE("backward basics") {
  Rng rng(31);
  Tape<double> tape;
  auto xv = random_tensor({3, 2}, rng);
  auto x = tape.leaf(xv);
  auto g1 = tape.backward(reduce(ReduceOp::Sum, x, kAllAxes), {x});
  CHECK(g1.at(x) == Tensor<double>(Shape{3, 2}, 1.0));

  auto sq = reduce(ReduceOp::Sum, mul(x, x), kAllAxes);
  auto g2 = tape.backward(sq, {x});
  for (std::size_t i = 0; i < xv.size(); ++i)
    CHECK(g2.at(x)[i] == 2 * xv[i]);

  CHECK_THROWS_AS(tape.backward(mul(x, x), {x}), ValidationError);

  // a leaf the loss never reaches gets zeros
  auto unused = tape.leaf(Tensor<double>(Shape{2}, 3.0));
  auto g3 = tape.backward(sq, {x, unused});
  CHECK(g3.at(unused) == Tensor<double>(Shape{2}));
}

TEST_CASE("repeated backward passes are bit-identical") {
  Rng rng(37);
  Tape<float> tape;
  auto w = tape.leaf(random_tensor({4, 3}, rng).cast<float>());
  auto x = tape.constant(random_tensor({2, 3}, rng).cast<float>());
  auto h = agdt::tanh(matmul_nt(x, w));
  auto loss = reduce(ReduceOp::Sum, mul(h, sigmoid(h)), kAllAxes);
  auto first = tape.backward(loss, {w});
  auto second = tape.backward(loss, {w});
  CHECK(first == second);
}

TEST_CASE("finite difference oracle self-tests") {
  Rng rng(41);
  auto squares = [](auto &tape, auto in) {
    (void)tape;
    return reduce(ReduceOp::Sum, mul(in[0], in[0]), kAllAxes);
  };
  CHECK(gradient_check(squares,
                          random_tensor({4, 3}, rng), 1e-5)
          .max_rel_error <= 1e-7);

  // relu away from its kink
  Tensor<double> p = random_tensor({8}, rng);
  for (auto &v : p.values())
    if (std::abs(v) < 1e-3)
      v = 0.5;
  auto relu_fn = [](auto &tape, auto in) {
    (void)tape;
    return reduce(ReduceOp::Sum, mul(relu(in[0]), in[0]), kAllAxes);
  };
  CHECK(gradient_check(relu_fn, p, 1e-5)
          .max_rel_error <= 1e-6);

  auto constant = [](auto &tape, auto in) {
    using S = typename std::decay_t<decltype(in[0].value())>::value_type;
    return tape.constant(Tensor<S>::scalar(S{4}));
  };
  CHECK(gradient_check(constant,
                          random_tensor({3}, rng), 1e-5)
          .max_rel_error <= 1e-8);
}

namespace {

/// Random extents in [1, 8].
Shape random_shape(Rng &rng) { return {1 + rng.below(8), 1 + rng.below(8)}; }

/// Resample entries that sit within 1e-3 of a relu kink.
Tensor<double> away_from_kinks(Shape shape, Rng &rng) {
  Tensor<double> t(std::move(shape));
  for (auto &v : t.values())
    do
      v = rng.uniform(-1, 1);
    while (std::abs(v) < 1e-3);
  return t;
}

} // namespace

TEST_CASE("property: every differentiable op passes the gradient oracle") {
  Rng rng(43);
  double worst_double = 0, worst_float = 0;
  auto record = [&](agdt::testing::BothPrecisions e) {
    worst_double = std::max(worst_double, e.double_error);
    worst_float = std::max(worst_float, e.float_error);
  };
  for (int point = 0; point < 10; ++point) {
    const Shape s = random_shape(rng);
    const auto w = random_tensor(s, rng);
    const auto a = random_tensor(s, rng);
    const auto b = random_tensor(s, rng);

    for (auto op : {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul})
      record(check_both(
        [w, op](auto &tape, auto in) {
          return weighted_sum(tape, binary(op, in[0], in[1]), w);
        },
        {a, b}));
    for (auto op : {UnaryOp::Sigmoid, UnaryOp::Tanh})
      record(check_both(
        [w, op](auto &tape, auto in) {
          return weighted_sum(tape, unary(op, in[0]), w);
        },
        {a}));
    record(check_both(
      [w](auto &tape, auto in) { return weighted_sum(tape, relu(in[0]), w); },
      {away_from_kinks(s, rng)}));
    record(check_both(
      [w](auto &tape, auto in) {
        using S = typename std::decay_t<decltype(in[0].value())>::value_type;
        return weighted_sum(
          tape, scalar_sub(S{1}, mul_scalar(add_scalar(in[0], S(0.5)), S(-1.5))),
          w);
      },
      {a}));

    const std::size_t k = 1 + rng.below(8);
    const auto left = random_tensor({s[0], k}, rng);
    const auto right = random_tensor({k, s[1]}, rng);
    record(check_both(
      [w](auto &tape, auto in) {
        return weighted_sum(tape, matmul(in[0], in[1]), w);
      },
      {left, right}));
    record(check_both(
      [w](auto &tape, auto in) {
        return weighted_sum(tape, matmul_nt(in[0], in[1]), w);
      },
      {left, random_tensor({s[1], k}, rng)}));

    const auto wide = random_tensor({s[0], s[1] + k}, rng);
    record(check_both(
      [wide](auto &tape, auto in) {
        return weighted_sum(tape, concat(in[0], in[1], 1), wide);
      },
      {a, random_tensor({s[0], k}, rng)}));
    const auto tall = random_tensor({s[0] + k, s[1]}, rng);
    record(check_both(
      [tall](auto &tape, auto in) {
        return weighted_sum(tape, concat(in[0], in[1], 0), tall);
      },
      {a, random_tensor({k, s[1]}, rng)}));

    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 4; ++i)
      idx.push_back(rng.below(s[0]));
    const auto wsel = random_tensor({idx.size(), s[1]}, rng);
    record(check_both(
      [wsel, idx](auto &tape, auto in) {
        return weighted_sum(
          tape, select_rows(in[0], std::span<const std::size_t>(idx)), wsel);
      },
      {a}));

    for (int axis : {0, 1}) {
      const auto wr = random_tensor({axis == 0 ? s[1] : s[0]}, rng);
      for (auto op : {ReduceOp::Sum, ReduceOp::Mean})
        record(check_both(
          [wr, op, axis](auto &tape, auto in) {
            return weighted_sum(tape, reduce(op, in[0], axis), wr);
          },
          {a}));
    }

    std::vector<std::uint8_t> take(s[0]);
    for (auto &t : take)
      t = rng.bernoulli(0.5);
    record(check_both(
      [w, take](auto &tape, auto in) {
        return weighted_sum(tape, row_where(take, in[0], in[1]), w);
      },
      {a, b}));

    Tensor<double> onehot(s);
    for (std::size_t r = 0; r < s[0]; ++r)
      onehot.at(r, rng.below(s[1])) = 1;
    record(check_both(
      [onehot](auto &tape, auto in) {
        (void)tape;
        using S = typename std::decay_t<decltype(in[0].value())>::value_type;
        return softmax_xent_logits(in[0], onehot.template cast<S>());
      },
      {a}));
    record(check_both(
      [onehot](auto &tape, auto in) {
        (void)tape;
        using S = typename std::decay_t<decltype(in[0].value())>::value_type;
        return sigmoid_xent_logits(in[0], onehot.template cast<S>());
      },
      {a}));
  }
  CHECK(worst_double <= 1e-6);
  CHECK(worst_float <= 1e-4);
  MESSAGE("worst relative error: double " << worst_double << ", float "
                                          << worst_float);
}

TEST_CASE("masked step pooling") {
  Tape<double> tape;
  std::vector<Var<double>> steps = {
    tape.constant(Tensor<double>::matrix({{1, 5}, {0, 0}})),
    tape.constant(Tensor<double>::matrix({{4, 2}, {7, 7}})),
    tape.constant(Tensor<double>::matrix({{3, 3}, {9, 9}}))};
  // row 0: three real steps; row 1: only the first
  auto mask = Tensor<double>::matrix({{1, 1, 1}, {1, 0, 0}});
  auto max = masked_pool_steps<double>(steps, mask, ReduceOp::Max).value();
  CHECK(max == Tensor<double>::matrix({{4, 5}, {0, 0}}));
  auto mean = masked_pool_steps<double>(steps, mask, ReduceOp::Mean).value();
  CHECK(mean == Tensor<double>::matrix({{8.0 / 3, 10.0 / 3}, {0, 0}}));

  auto none = Tensor<double>::matrix({{1, 0, 0}, {0, 0, 0}});
  CHECK_THROWS_AS(masked_pool_steps<double>(steps, none, ReduceOp::Mean),
                  ValidationError);

  Rng rng(47);
  for (auto op : {ReduceOp::Sum, ReduceOp::Mean, ReduceOp::Max}) {
    auto w = random_tensor({2, 3}, rng);
    auto f = [w, mask, op](auto &tape, auto in) {
      using S = typename std::decay_t<decltype(in[0].value())>::value_type;
      std::vector<Var<S>> st(in.begin(), in.end());
      return weighted_sum(
        tape, masked_pool_steps<S>(st, mask.template cast<S>(), op), w);
    };
    CHECK(check_both(f, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng),
                         random_tensor({2, 3}, rng)})
            .double_error <= 1e-6);
  }
}
