// SPDX-License-Identifier: Apache-2.0
#include <agdt/trainer.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

namespace agdt {

// -------------------------------------------------------------- optimizer

template <typename S>
AdamState<S> adam_init(std::span<Tensor<S> *const> params,
                       const AdamConfig &config) {
  AdamState<S> st;
  st.config = config;
  for (const Tensor<S> *p : params) {
    st.m.emplace_back(p->shape());
    st.v.emplace_back(p->shape());
  }
  return st;
}

template <typename S>
void adam_step(std::span<Tensor<S> *const> params,
               std::span<const Tensor<S>> grads, AdamState<S> &st) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " parameters, " + std::to_string(grads.size()) +
                         " gradients, " + std::to_string(st.m.size()) +
                         " moment slots");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(st.m[i]))
      throw DimensionError("adam_step: parameter " + std::to_string(i) +
                           " has shape " + shape_string(params[i]->shape()) +
                           ", gradient " + shape_string(grads[i].shape()));
  ++st.t;
  const auto &c = st.config;
  const double t = static_cast<double>(st.t);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->values();
    auto g = grads[i].values();
    auto m = st.m[i].values();
    auto v = st.v[i].values();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k];
      const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      m[k] = static_cast<S>(mk);
      v[k] = static_cast<S>(vk);
      const double update = c.lr * (mk / c1) / (std::sqrt(vk / c2) + c.eps);
      theta[k] = static_cast<S>(theta[k] - update);
    }
  }
}

template <typename S> double global_norm(std::span<const Tensor<S>> grads) {
  double sum = 0.0;
  for (const auto &g : grads)
    for (S x : g.values())
      sum += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(sum);
}

template <typename S>
double clip_global_norm(std::span<Tensor<S>> grads, double max_norm) {
  if (!(max_norm > 0.0))
    throw ValidationError("clip norm must be positive");
  const double norm = global_norm<S>(grads);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto &g : grads)
      for (S &x : g.values())
        x = static_cast<S>(x * scale);
  }
  return norm;
}

#define AGDT_INSTANTIATE_OPTIM(S)                                              \
  template AdamState<S> adam_init<S>(std::span<Tensor<S> *const>,              \
                                     const AdamConfig &);                      \
  template void adam_step<S>(std::span<Tensor<S> *const>,                      \
                             std::span<const Tensor<S>>, AdamState<S> &);      \
  template double global_norm<S>(std::span<const Tensor<S>>);                  \
  template double clip_global_norm<S>(std::span<Tensor<S>>, double);

AGDT_INSTANTIATE_OPTIM(float)
AGDT_INSTANTIATE_OPTIM(double)

// ----------------------------------------------------------------- config

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  if (epochs < 1)
    out.push_back("epochs must be at least 1");
  if (seeds.empty())
    out.push_back("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    out.push_back("seeds must be distinct");
  if (!(clip_norm > 0.0))
    out.push_back("clip norm must be positive");
  if (!(adam.lr > 0.0))
    out.push_back("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    out.push_back("Adam decay rates must lie in [0, 1)");
  if (!(adam.eps > 0.0))
    out.push_back("Adam epsilon must be positive");
  if (token_budget < 1)
    out.push_back("token budget must be positive");
  if (!(dev_fraction >= 0.0 && dev_fraction < 1.0))
    out.push_back("dev fraction must lie in [0, 1)");
  if (jobs < 1)
    out.push_back("jobs must be at least 1");
  return out;
}

void TrainConfig::validate() const {
  const auto p = problems();
  if (p.empty())
    return;
  std::string msg = "invalid training config:";
  for (const auto &s : p)
    msg += "\n  " + s;
  throw ValidationError(msg);
}

// ----------------------------------------------------------------- inputs

template <typename S>
ModelInput<S> batch_input(const AgdtModel<S> &model, const Batch &batch,
                          const std::vector<Encoded> &rows) {
  ModelInput<S> in;
  in.batch = batch.size();
  in.steps = batch.steps;
  in.tokens = batch.tokens;
  in.mask = Tensor<S>(Shape{in.batch, in.steps});
  for (std::size_t i = 0; i < batch.mask.size(); ++i)
    in.mask.values()[i] = batch.mask[i] ? S{1} : S{0};
  in.aspects = Tensor<S>(Shape{in.batch, model.config().embedding});
  for (std::size_t r = 0; r < in.batch; ++r) {
    const auto a = model.embed_aspect(rows[batch.rows[r]].aspect);
    std::copy(a.values().begin(), a.values().end(), in.aspects.row(r).begin());
  }
  return in;
}

template ModelInput<float> batch_input<float>(const AgdtModel<float> &,
                                              const Batch &,
                                              const std::vector<Encoded> &);
template ModelInput<double> batch_input<double>(const AgdtModel<double> &,
                                                const Batch &,
                                                const std::vector<Encoded> &);

// --------------------------------------------------------------- training

std::vector<EpochStats> train(AgdtModel<float> &model,
                              const std::vector<Encoded> &data,
                              const TrainConfig &config, std::uint64_t seed,
                              const EpochHook &hook) {
  config.validate();
  const ModelConfig &mc = model.config();
  mc.validate();
  if (data.empty())
    throw ValidationError("no training instances");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label >= mc.labels)
      throw ValidationError("training row " + std::to_string(i) + " has label " +
                            std::to_string(data[i].label) + " outside " +
                            std::to_string(mc.labels) + " classes");
    if (mc.ar && !data[i].recon_known)
      throw ValidationError("training row " + std::to_string(i) +
                            " has a reconstruction target outside the head");
  }

  std::vector<Tensor<float> *> params;
  model.visit([&](const std::string &, Tensor<float> &t) { params.push_back(&t); });
  AdamState<float> adam = adam_init<float>(params, config.adam);
  Rng dropout_rng(mix_seed(seed, 2));

  std::vector<EpochStats> trace;
  double best = INFINITY;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches =
        make_batches(data, config.token_budget, mix_seed(seed, 1000 + epoch));
    EpochStats stats;
    stats.epoch = epoch;
    double total = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch &batch = batches[bi];
      Tape<float> tape;
      Binding<float> w(tape);
      std::vector<Var<float>> vars;
      for (auto *p : params)
        vars.push_back(w(*p));

      const auto input = batch_input(model, batch, data);
      auto r = model.forward(w, input, true, dropout_rng);
      std::vector<std::size_t> gold;
      for (std::size_t row : batch.rows)
        gold.push_back(data[row].label);
      auto ce = sentiment_loss(r.logits, std::span<const std::size_t>(gold));
      std::optional<Var<float>> recon;
      if (mc.ar) {
        if (mc.task == TaskKind::Category) {
          std::vector<std::size_t> cats;
          for (std::size_t row : batch.rows)
            cats.push_back(data[row].category);
          recon = loss_category_reconstruction(r.recon,
                                               std::span<const std::size_t>(cats));
        } else {
          std::vector<std::vector<std::size_t>> words;
          for (std::size_t row : batch.rows)
            words.push_back(data[row].term_words);
          recon = loss_term_reconstruction(r.recon, words);
        }
      }
      const auto joint = joint_loss(ce, recon, mc.lambda, mc.ar);
      const auto loss =
          mul_scalar(joint, 1.0f / static_cast<float>(batch.size()));
      const double value = loss.value().values()[0];
      if (!std::isfinite(value))
        throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(bi) + " (" +
                            std::to_string(batch.size()) + " rows, length " +
                            std::to_string(batch.steps) + ", first row " +
                            std::to_string(batch.rows[0]) + ")");
      total += joint.value().values()[0];

      auto gm = tape.backward(loss, std::span<const Var<float>>(vars));
      std::vector<Tensor<float>> grads;
      for (const auto &v : vars)
        grads.push_back(gm.at(v));
      const double norm =
          clip_global_norm<float>(std::span<Tensor<float>>(grads), config.clip_norm);
      stats.grad_norm = std::max(stats.grad_norm, norm);
      adam_step<float>(params, grads, adam);
    }
    stats.loss = total / static_cast<double>(data.size());
    trace.push_back(stats);
    if (hook)
      hook(stats);
    if (config.patience > 0) {
      if (stats.loss < best - 1e-4 * std::abs(best)) {
        best = stats.loss;
        stale = 0;
      } else if (++stale >= config.patience) {
        break;
      }
    }
  }
  return trace;
}

// ------------------------------------------------------------- evaluation

std::vector<Prediction> predict_all(const AgdtModel<float> &model,
                                    const std::vector<Encoded> &data,
                                    std::size_t token_budget) {
  std::vector<Prediction> out(data.size());
  for (const auto &batch : make_batches(data, token_budget, std::nullopt)) {
    const auto inf = model.infer(batch_input(model, batch, data));
    const auto labels = predict(inf.logits);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      auto &p = out[batch.rows[r]];
      p.label = labels[r];
      p.recon = reconstruct_aspect<float>(inf.recon.row(r), model.config().task);
    }
  }
  return out;
}

double evaluate_accuracy(const AgdtModel<float> &model,
                         const std::vector<Encoded> &data,
                         std::size_t token_budget) {
  if (data.empty())
    return 0.0;
  const auto preds = predict_all(model, data, token_budget);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    correct += preds[i].label == data[i].label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

bool reconstruction_correct(const Encoded &row, const Reconstruction &r,
                            TaskKind kind) {
  if (!row.recon_known)
    return false;
  if (kind == TaskKind::Category)
    return r.index == row.category;
  return std::includes(r.words.begin(), r.words.end(), row.term_words.begin(),
                       row.term_words.end());
}

double evaluate_reconstruction(const AgdtModel<float> &model,
                               const std::vector<Encoded> &data, TaskKind kind,
                               std::size_t token_budget) {
  if (data.empty())
    return 0.0;
  const auto preds = predict_all(model, data, token_budget);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    correct += reconstruction_correct(data[i], preds[i].recon, kind);
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------- reports

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty())
    return s;
  double sum = 0.0;
  for (double v : values)
    sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double sq = 0.0;
    for (double v : values)
      sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

nlohmann::json MetricsReport::to_json() const {
  using nlohmann::json;
  json per_seed = json::array();
  for (const auto &m : seeds) {
    json epochs = json::array();
    for (const auto &e : m.epochs)
      epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss},
                        {"grad_norm", e.grad_norm}});
    json test = json::array();
    for (const auto &[epoch, acc] : m.test_accuracy)
      test.push_back({{"epoch", epoch}, {"ds_accuracy", acc}});
    json j{{"seed", m.seed},
           {"ds_accuracy", m.ds_accuracy},
           {"hds_accuracy", m.hds_accuracy},
           {"recon_accuracy", m.recon_accuracy},
           {"epochs", epochs},
           {"test_accuracy", test}};
    if (m.dev_accuracy)
      j["dev_accuracy"] = *m.dev_accuracy;
    per_seed.push_back(std::move(j));
  }
  json mean{{"ds_accuracy", ds.mean},
            {"hds_accuracy", hds.mean},
            {"recon_accuracy", recon.mean}};
  json sd = nullptr;
  if (ds.std) {
    sd = json{{"ds_accuracy", *ds.std},
              {"hds_accuracy", *hds.std},
              {"recon_accuracy", *recon.std}};
  }
  if (dev) {
    mean["dev_accuracy"] = dev->mean;
    if (dev->std)
      sd["dev_accuracy"] = *dev->std;
  }
  return {{"dataset", dataset},
          {"config_digest", config_digest},
          {"seeds", per_seed},
          {"mean", mean},
          {"std", sd}};
}

// ------------------------------------------------------------ experiments

std::vector<std::string> recon_targets(const DatasetBundle &data) {
  return data.task == TaskKind::Category ? category_vocab(data.ds_train)
                                         : term_word_vocab(data.ds_train);
}

ModelConfig resolve_model_config(ModelConfig model, const DatasetBundle &data,
                                 std::size_t embedding_dim) {
  model.task = data.task;
  model.labels = data.nc ? 3 : kLabelCount;
  model.recon_size = std::max<std::size_t>(recon_targets(data).size(), 1);
  model.embedding = embedding_dim;
  return model;
}

namespace {

/// Remove one occurrence of each held-out instance from `pool`.
std::vector<Instance> without(const std::vector<Instance> &pool,
                              const std::vector<Instance> &held) {
  std::vector<bool> used(held.size(), false);
  std::vector<Instance> out;
  for (const auto &i : pool) {
    bool drop = false;
    for (std::size_t k = 0; k < held.size() && !drop; ++k)
      if (!used[k] && held[k] == i)
        used[k] = drop = true;
    if (!drop)
      out.push_back(i);
  }
  return out;
}

} // namespace

TrainedRun run_seed(const Experiment &e, std::uint64_t seed) {
  const auto targets = recon_targets(e.data);
  const ModelConfig mc = resolve_model_config(e.model, e.data, e.embeddings.dim);
  mc.validate();
  e.train.validate();

  std::vector<Instance> train_set = e.data.ds_train;
  std::vector<Instance> dev;
  if (e.train.dev_fraction > 0.0 && !e.data.hds_train.empty()) {
    std::vector<std::size_t> order(e.data.hds_train.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = i;
    Rng rng(mix_seed(seed, 3));
    rng.shuffle(std::span<std::size_t>(order));
    const auto n = static_cast<std::size_t>(
        std::llround(e.train.dev_fraction * static_cast<double>(order.size())));
    order.resize(std::min(n, order.size()));
    std::sort(order.begin(), order.end());
    for (std::size_t i : order)
      dev.push_back(e.data.hds_train[i]);
    train_set = without(train_set, dev);
  }

  std::vector<Instance> test_all = e.data.ds_test;
  test_all.insert(test_all.end(), e.data.hds_test.begin(), e.data.hds_test.end());
  TrainedRun run;
  run.vocab = build_vocab(train_set, test_all, e.embeddings, mix_seed(seed, 1));
  run.recon_targets = targets;

  const auto train_rows = encode(train_set, run.vocab, mc.labels, targets);
  const auto ds_rows = encode(e.data.ds_test, run.vocab, mc.labels, targets);
  const auto hds_rows = encode(e.data.hds_test, run.vocab, mc.labels, targets);

  Rng init(mix_seed(seed, 0));
  run.model = AgdtModel<float>::create(mc, run.vocab.embeddings, init);
  run.metrics.seed = seed;
  const std::size_t budget = e.train.token_budget;
  std::size_t last_eval = 0;
  run.metrics.epochs = train(run.model, train_rows, e.train, seed,
                             [&](const EpochStats &s) {
                               std::optional<double> acc;
                               if (e.train.eval_every > 0 &&
                                   s.epoch % e.train.eval_every == 0) {
                                 acc = evaluate_accuracy(run.model, ds_rows, budget);
                                 run.metrics.test_accuracy.emplace_back(s.epoch, *acc);
                                 last_eval = s.epoch;
                               }
                               if (e.on_epoch)
                                 e.on_epoch(seed, s, acc);
                             });
  run.metrics.ds_accuracy = evaluate_accuracy(run.model, ds_rows, budget);
  const std::size_t final_epoch = run.metrics.epochs.back().epoch;
  if (last_eval != final_epoch)
    run.metrics.test_accuracy.emplace_back(final_epoch, run.metrics.ds_accuracy);
  run.metrics.hds_accuracy = evaluate_accuracy(run.model, hds_rows, budget);
  run.metrics.recon_accuracy =
      evaluate_reconstruction(run.model, ds_rows, mc.task, budget);
  if (!dev.empty())
    run.metrics.dev_accuracy = evaluate_accuracy(
        run.model, encode(dev, run.vocab, mc.labels, targets), budget);
  return run;
}

MetricsReport run_experiment(const Experiment &e) {
  resolve_model_config(e.model, e.data, e.embeddings.dim).validate();
  e.train.validate();

  const auto &seeds = e.train.seeds;
  std::vector<SeedMetrics> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < seeds.size();) {
      try {
        auto run = run_seed(e, seeds[i]);
        if (e.on_run)
          e.on_run(run);
        results[i] = std::move(run.metrics);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::min(e.train.jobs, seeds.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j)
      pool.emplace_back(worker);
    for (auto &t : pool)
      t.join();
  }
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!errors[i])
      continue;
    const std::string prefix = "seed " + std::to_string(seeds[i]) + ": ";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const ValidationError &ex) {
      throw ValidationError(prefix + ex.what());
    } catch (const std::exception &ex) {
      throw TrainingError(prefix + ex.what());
    }
  }

  MetricsReport rep;
  rep.dataset = e.dataset;
  rep.config_digest = e.config_digest;
  rep.seeds = std::move(results);
  std::vector<double> ds, hds, recon, dev;
  for (const auto &m : rep.seeds) {
    ds.push_back(m.ds_accuracy);
    hds.push_back(m.hds_accuracy);
    recon.push_back(m.recon_accuracy);
    if (m.dev_accuracy)
      dev.push_back(*m.dev_accuracy);
  }
  rep.ds = summarize(ds);
  rep.hds = summarize(hds);
  rep.recon = summarize(recon);
  if (!dev.empty())
    rep.dev = summarize(dev);
  return rep;
}

std::string to_string(SweepAxis a) {
  return a == SweepAxis::Depth ? "depth" : "lambda";
}

SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "depth")
    return SweepAxis::Depth;
  if (s == "lambda")
    return SweepAxis::Lambda;
  throw ValidationError("unknown sweep axis \"" + std::string(s) +
                        "\" (expected depth or lambda)");
}

std::vector<double> sweep_values(SweepAxis a) {
  std::vector<double> out;
  if (a == SweepAxis::Depth)
    for (int d = 1; d <= 6; ++d)
      out.push_back(d);
  else
    for (int k = 1; k <= 10; ++k)
      out.push_back(k / 10.0);
  return out;
}

std::vector<SweepRow> sweep(SweepAxis axis, const Experiment &e) {
  std::vector<SweepRow> rows;
  for (double v : sweep_values(axis)) {
    Experiment x = e;
    if (axis == SweepAxis::Depth)
      x.model.depth = static_cast<std::size_t>(v);
    else
      x.model.lambda = v;
    rows.push_back({v, run_experiment(x)});
  }
  return rows;
}

nlohmann::json sweep_to_json(SweepAxis axis, const std::vector<SweepRow> &rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto &r : rows) {
    nlohmann::json value;
    if (axis == SweepAxis::Depth)
      value = static_cast<std::size_t>(r.value);
    else
      value = r.value;
    out.push_back({{"axis", to_string(axis)},
                   {"value", value},
                   {"report", r.report.to_json()}});
  }
  return out;
}

// ------------------------------------------------------------------ gates

nlohmann::json GateRecord::to_json(bool with_vector) const {
  nlohmann::json j{{"token", token}, {"gate_mean", gate_mean}};
  if (with_vector)
    j["gate_vector"] = gate;
  return j;
}

std::vector<GateRecord> inspect_gates(const AgdtModel<float> &model,
                                      const std::vector<std::string> &words,
                                      const std::vector<std::size_t> &tokens,
                                      const std::vector<std::size_t> &aspect) {
  if (!model.config().ag)
    throw CapabilityError("gate inspection needs a model with the aspect gate");
  if (tokens.empty() || words.size() != tokens.size())
    throw ValidationError("gate inspection needs a non-empty sentence");
  if (aspect.empty())
    throw ValidationError("gate inspection needs a non-empty aspect");

  Encoded row;
  row.tokens = tokens;
  row.aspect = aspect;
  const std::vector<Encoded> rows{row};
  const auto batch = make_batches(rows, tokens.size(), std::nullopt).at(0);
  const auto inf = model.infer(batch_input(model, batch, rows));
  if (!inf.trace)
    throw CapabilityError("model produced no gate trace");

  std::vector<GateRecord> out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    GateRecord rec;
    rec.token = words[t];
    rec.gate_mean = inf.trace->mean(0, t);
    for (float g : inf.trace->gate(0, t))
      rec.gate.push_back(g);
    out.push_back(std::move(rec));
  }
  return out;
}

} // namespace agdt
