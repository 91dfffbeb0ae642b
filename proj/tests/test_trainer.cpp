// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include <agdt/trainer.h>

#include "synthetic.h"
#include "test_util.h"

using namespace agdt;
using namespace agdt::testing;

namespace {

struct Prepared {
  AgdtModel<float> model;
  Vocab vocab;
  std::vector<Encoded> train, test;
};

Prepared prepare(const SyntheticData &d, ModelConfig mc, std::uint64_t seed) {
  Prepared p;
  const auto targets = recon_targets(d.bundle);
  mc = resolve_model_config(mc, d.bundle, d.embeddings.dim);
  p.vocab = build_vocab(d.bundle.ds_train, d.bundle.ds_test, d.embeddings, seed);
  p.train = encode(d.bundle.ds_train, p.vocab, mc.labels, targets);
  p.test = encode(d.bundle.ds_test, p.vocab, mc.labels, targets);
  Rng rng(seed);
  p.model = AgdtModel<float>::create(mc, p.vocab.embeddings, rng);
  return p;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.seeds = {1};
  t.token_budget = 64;
  return t;
}

/// Embeddings where aspect word k is the k-th unit vector.
AgdtModel<float> label_from_aspect_model(std::size_t dim) {
  ModelConfig c;
  c.hidden = 3;
  c.embedding = dim;
  c.depth = 1;
  c.recon_size = 4;
  c.input_dropout = c.hidden_dropout = 0.0;
  Tensor<float> emb(Shape{2 + dim, dim});
  for (std::size_t k = 0; k < dim; ++k)
    emb.at(2 + k, k) = 1.0f;
  auto m = AgdtModel<float>::zeros(c, emb);
  for (std::size_t k = 0; k < 4; ++k)
    m.w_cls.at(3 + k, k) = 1.0f;
  return m;
}

Encoded row(std::size_t aspect_word, std::size_t label) {
  Encoded e;
  e.tokens = {2, 3, 4};
  e.aspect = {2 + aspect_word};
  e.label = label;
  e.category = aspect_word;
  return e;
}

} // namespace

TEST_CASE("global norm clipping") {
  std::vector<Tensor<double>> g{Tensor<double>::vector({6.0, 0.0}),
                                Tensor<double>::vector({0.0, 8.0})};
  CHECK(clip_global_norm<double>(g, 5.0) == doctest::Approx(10.0));
  CHECK(g[0].values()[0] == doctest::Approx(3.0));
  CHECK(g[1].values()[1] == doctest::Approx(4.0));
  CHECK(global_norm<double>(g) == doctest::Approx(5.0));

  std::vector<Tensor<double>> small{Tensor<double>::vector({3.0})};
  CHECK(clip_global_norm<double>(small, 5.0) == 3.0);
  CHECK(small[0].values()[0] == 3.0);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor<double>> r;
    for (int k = 0; k < 3; ++k)
      r.push_back(random_tensor(Shape{4, 5}, rng, -4.0, 4.0));
    const double max = rng.uniform(0.1, 20.0);
    clip_global_norm<double>(r, max);
    CHECK(global_norm<double>(r) <= max + 1e-9);
  }
  CHECK_THROWS_AS(clip_global_norm<double>(small, 0.0), ValidationError);
}

TEST_CASE("Adam") {
  Tensor<double> theta = Tensor<double>::vector({0.5, -2.0});
  std::vector<Tensor<double> *> params{&theta};
  auto st = adam_init<double>(params);
  std::vector<Tensor<double>> zero{Tensor<double>(Shape{2})};
  adam_step<double>(params, zero, st);
  CHECK(theta.values()[0] == 0.5);
  CHECK(theta.values()[1] == -2.0);
  CHECK(st.t == 1);

  Tensor<double> x = Tensor<double>::scalar(0.0);
  std::vector<Tensor<double> *> px{&x};
  auto sx = adam_init<double>(px);
  std::vector<Tensor<double>> one{Tensor<double>::scalar(1.0)};
  adam_step<double>(px, one, sx);
  CHECK(x.values()[0] == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-12));

  Tensor<double> y = Tensor<double>::scalar(1.0);
  std::vector<Tensor<double> *> py{&y};
  auto sy = adam_init<double>(py);
  double f = 1.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<Tensor<double>> g{Tensor<double>::scalar(2.0 * y.values()[0])};
    adam_step<double>(py, g, sy);
    const double next = y.values()[0] * y.values()[0];
    CHECK(next < f);
    f = next;
  }
  CHECK(sy.t == 50);

  std::vector<Tensor<double>> wrong{Tensor<double>(Shape{3})};
  CHECK_THROWS_AS(adam_step<double>(params, wrong, st), DimensionError);
}

TEST_CASE("training config validation lists every problem") {
  TrainConfig t;
  t.epochs = 0;
  t.clip_norm = 0.0;
  t.seeds = {};
  CHECK(t.problems().size() == 3);
  CHECK_THROWS_AS(t.validate(), ValidationError);
  CHECK(TrainConfig{}.problems().empty());
}

TEST_CASE("accuracy metrics") {
  auto m = label_from_aspect_model(4);
  std::vector<Encoded> perfect;
  for (std::size_t k = 0; k < 4; ++k)
    perfect.push_back(row(k, k));
  CHECK(evaluate_accuracy(m, perfect) == 1.0);
  CHECK(evaluate_reconstruction(m, perfect, TaskKind::Category) == 0.25);

  // Hand-scored: rows 0..9 with gold equal to the aspect except rows 2, 5, 9.
  std::vector<Encoded> ten;
  for (std::size_t i = 0; i < 10; ++i)
    ten.push_back(row(i % 4, (i == 2 || i == 5 || i == 9) ? (i + 1) % 4 : i % 4));
  CHECK(evaluate_accuracy(m, ten) == doctest::Approx(0.7));

  auto zero = AgdtModel<float>::zeros(m.config(), m.embeddings());
  std::vector<Encoded> balanced;
  for (std::size_t i = 0; i < 12; ++i)
    balanced.push_back(row(i % 4, i % 4));
  CHECK(evaluate_accuracy(zero, balanced) == 0.25);
  CHECK(evaluate_accuracy(zero, {}) == 0.0);

  // Agrees with per-instance scoring.
  Rng rng(2);
  auto random = AgdtModel<float>::create(m.config(), m.embeddings(), rng);
  std::size_t hits = 0;
  for (const auto &r : ten)
    hits += predict_all(random, {r})[0].label == r.label;
  CHECK(evaluate_accuracy(random, ten) == doctest::Approx(hits / 10.0));
}

TEST_CASE("reconstruction counting") {
  Encoded cat;
  cat.category = 2;
  Reconstruction r;
  r.index = 2;
  CHECK(reconstruction_correct(cat, r, TaskKind::Category));
  r.index = 1;
  CHECK_FALSE(reconstruction_correct(cat, r, TaskKind::Category));

  Encoded term;
  term.term_words = {3, 7};
  Reconstruction half;
  half.words = {3};
  CHECK_FALSE(reconstruction_correct(term, half, TaskKind::Term));
  Reconstruction all;
  all.words = {1, 3, 7};
  CHECK(reconstruction_correct(term, all, TaskKind::Term));
  term.recon_known = false;
  CHECK_FALSE(reconstruction_correct(term, all, TaskKind::Term));
}

TEST_CASE("training is deterministic and leaves embeddings alone") {
  const auto d = synthetic(30, 10, TaskKind::Category, 8, 5);
  auto a = prepare(d, small_model(), 7);
  auto b = prepare(d, small_model(), 7);
  const auto before = a.model.embeddings();
  const auto ta = train(a.model, a.train, quick(3), 11);
  const auto tb = train(b.model, b.train, quick(3), 11);
  CHECK(same_parameters(a.model, b.model));
  REQUIRE(ta.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(ta[i].loss == tb[i].loss);
  CHECK(a.model.embeddings() == before);

  auto c = prepare(d, small_model(), 7);
  train(c.model, c.train, quick(3), 12);
  CHECK_FALSE(same_parameters(a.model, c.model));
}

TEST_CASE("training reduces the loss") {
  const auto d = synthetic(40, 10, TaskKind::Term, 8, 6);
  auto p = prepare(d, small_model(), 3);
  const auto trace = train(p.model, p.train, quick(15), 3);
  CHECK(trace.back().loss < trace.front().loss);
}

TEST_CASE("zero lambda matches the objective without reconstruction") {
  const auto d = synthetic(30, 10, TaskKind::Category, 8, 8);
  auto on = small_model();
  on.lambda = 0.0;
  auto off = small_model();
  off.ar = false;
  auto a = prepare(d, on, 4);
  auto b = prepare(d, off, 4);
  const auto ta = train(a.model, a.train, quick(4), 9);
  const auto tb = train(b.model, b.train, quick(4), 9);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].loss == tb[i].loss);
    CHECK(ta[i].grad_norm == tb[i].grad_norm);
  }
  CHECK(a.model.w_cls == b.model.w_cls);
  CHECK(a.model.w_recon == b.model.w_recon);
}

TEST_CASE("non-finite loss aborts naming the batch") {
  const auto d = synthetic(10, 2, TaskKind::Category, 8, 1);
  auto p = prepare(d, small_model(), 1);
  p.model.w_cls.values()[0] = NAN;
  try {
    train(p.model, p.train, quick(1), 1);
    FAIL("expected a training error");
  } catch (const TrainingError &e) {
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("summaries use the sample deviation") {
  const double v[] = {1.0, 2.0, 3.0, 4.0};
  const auto s = summarize(v);
  CHECK(s.mean == 2.5);
  REQUIRE(s.std);
  CHECK(*s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  const double one[] = {0.7};
  CHECK_FALSE(summarize(one).std);
}

TEST_CASE("experiments") {
  const auto d = synthetic(24, 8, TaskKind::Category, 8, 9);
  Experiment e;
  e.data = d.bundle;
  e.embeddings = d.embeddings;
  e.model = small_model();
  e.train = quick(2);
  e.dataset = "synthetic";
  e.config_digest = "abc";

  const auto single = run_experiment(e).to_json();
  CHECK(single["std"].is_null());
  CHECK(single["seeds"].size() == 1);
  CHECK(single["seeds"][0]["test_accuracy"].size() == 2);

  e.train.seeds = {1, 2, 3};
  const auto serial = run_experiment(e).to_json();
  e.train.jobs = 3;
  const auto parallel = run_experiment(e).to_json();
  CHECK(serial.dump() == parallel.dump());
  CHECK(serial["std"].contains("ds_accuracy"));
  for (const auto &s : serial["seeds"]) {
    CHECK(s["ds_accuracy"].get<double>() >= 0.0);
    CHECK(s["ds_accuracy"].get<double>() <= 1.0);
  }

  e.train.seeds = {1};
  e.train.dev_fraction = 0.5;
  e.data.hds_train = {e.data.ds_train[0], e.data.ds_train[1]};
  const auto dev = run_experiment(e);
  CHECK(dev.dev.has_value());

  e.model.hidden = 0;
  CHECK_THROWS_AS(run_experiment(e), ValidationError);
}

TEST_CASE("sweep axes") {
  CHECK(sweep_values(SweepAxis::Depth).size() == 6);
  const auto l = sweep_values(SweepAxis::Lambda);
  REQUIRE(l.size() == 10);
  CHECK(l.front() == doctest::Approx(0.1));
  CHECK(l.back() == doctest::Approx(1.0));
  CHECK(parse_sweep_axis("lambda") == SweepAxis::Lambda);
  CHECK_THROWS_AS(parse_sweep_axis("width"), ValidationError);
}

TEST_CASE("gate inspection") {
  const auto d = synthetic(10, 2, TaskKind::Category, 8, 2);
  auto p = prepare(d, small_model(), 2);
  const std::vector<std::string> words{"great", "w1", "w2", "slow", "w3"};
  const auto recs =
      inspect_gates(p.model, words, p.vocab.lookup(words), p.vocab.lookup(
                                                               std::vector<std::string>{"food"}));
  REQUIRE(recs.size() == 5);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].token == words[i]);
    CHECK(recs[i].gate_mean >= 0.0);
    CHECK(recs[i].gate.size() == 16);
  }
  CHECK(recs[0].to_json(false).size() == 2);
  CHECK(recs[0].to_json(true).contains("gate_vector"));

  auto off = small_model();
  off.ag = false;
  auto q = prepare(d, off, 2);
  CHECK_THROWS_AS(inspect_gates(q.model, words, q.vocab.lookup(words), {2}),
                  CapabilityError);
}
