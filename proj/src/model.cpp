// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.cpp
 * @brief  Forward graph, objectives and decoding of the AGDT model.
 */
#include <agdt/model.h>

#include <cmath>

#include <agdt/ops.h>

namespace agdt {

std::string to_string(Pooling p) {
  switch (p) {
  case Pooling::Last:
    return "last";
  case Pooling::Max:
    return "max";
  case Pooling::Mean:
    return "mean";
  }
  return "last";
}

std::string to_string(Baseline b) {
  return b == Baseline::Gru ? "gru" : "dt";
}

Pooling parse_pooling(const std::string &s) {
  if (s == "last")
    return Pooling::Last;
  if (s == "max")
    return Pooling::Max;
  if (s == "mean")
    return Pooling::Mean;
  throw ValidationError("unknown pooling mode '" + s + "'");
}

Baseline parse_baseline(const std::string &s) {
  if (s == "gru")
    return Baseline::Gru;
  if (s == "dt")
    return Baseline::DeepTransition;
  throw ValidationError("unknown baseline encoder '" + s + "'");
}

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> out;
  if (hidden == 0)
    out.push_back("hidden size must be positive");
  if (embedding == 0)
    out.push_back("embedding size must be positive");
  if (depth == 0)
    out.push_back("depth must be at least 1");
  if (labels != 3 && labels != 4)
    out.push_back("label count must be 3 or 4, got " + std::to_string(labels));
  if (recon_size == 0)
    out.push_back("reconstruction target count must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    out.push_back("lambda must be a finite non-negative number");
  if (!(input_dropout >= 0.0 && input_dropout < 1.0))
    out.push_back("input dropout must lie in [0, 1)");
  if (!(hidden_dropout >= 0.0 && hidden_dropout < 1.0))
    out.push_back("hidden dropout must lie in [0, 1)");
  return out;
}

void ModelConfig::validate() const {
  const auto p = problems();
  if (p.empty())
    return;
  std::string msg = "invalid model config:";
  for (const auto &s : p)
    msg += "\n  " + s;
  throw ValidationError(msg);
}

namespace {

template <typename S>
void check_embeddings(const ModelConfig &c, const Tensor<S> &embeddings) {
  if (embeddings.rank() != 2 || embeddings.cols() != c.embedding ||
      embeddings.rows() == 0)
    throw DimensionError("embedding table has shape " +
                         shape_string(embeddings.shape()) + ", expected [V x " +
                         std::to_string(c.embedding) + "]");
}

} // namespace

template <typename S>
AgdtModel<S> AgdtModel<S>::zeros(const ModelConfig &c, Tensor<S> embeddings) {
  c.validate();
  check_embeddings(c, embeddings);
  AgdtModel m;
  m.config_ = c;
  m.embeddings_ = std::move(embeddings);
  const std::size_t d = c.embedding;
  if (c.uses_block()) {
    m.block = DeepTransitionBlock<S>::zeros(d, d, c.hidden, c.depth, c.ag);
    if (c.bidirectional)
      m.reverse_block = m.block;
  } else {
    m.gru = GruStack<S>::zeros(d, c.hidden, c.depth);
    if (c.bidirectional)
      m.reverse_gru = m.gru;
  }
  m.w_recon = Tensor<S>(Shape{c.rep_size(), c.recon_size});
  m.w_cls = Tensor<S>(Shape{c.classifier_input(), c.labels});
  return m;
}

template <typename S>
AgdtModel<S> AgdtModel<S>::create(const ModelConfig &c, Tensor<S> embeddings,
                                  Rng &rng) {
  AgdtModel m = zeros(c, std::move(embeddings));
  m.visit([&](const std::string &, Tensor<S> &t) { glorot_uniform(t, rng); });
  return m;
}

template <typename S> std::size_t AgdtModel<S>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string &, const Tensor<S> &t) { n += t.size(); });
  return n;
}

template <typename S>
Tensor<S> AgdtModel<S>::embed_aspect(std::span<const std::size_t> ids) const {
  if (ids.empty())
    throw ValidationError("aspect has no tokens");
  const std::size_t d = embeddings_.cols();
  std::vector<S> sum(d, S{0});
  for (std::size_t id : ids) {
    if (id >= embeddings_.rows())
      throw ValidationError("aspect token id " + std::to_string(id) +
                            " outside a vocabulary of " +
                            std::to_string(embeddings_.rows()));
    const auto row = embeddings_.row(id);
    for (std::size_t j = 0; j < d; ++j)
      sum[j] += row[j];
  }
  const S n = static_cast<S>(ids.size());
  for (auto &v : sum)
    v /= n;
  return Tensor<S>(Shape{d}, std::move(sum));
}

template <typename S>
ForwardResult<S> AgdtModel<S>::forward(Binding<S> &w, const ModelInput<S> &in,
                                       bool training, Rng &rng) const {
  Tape<S> &tape = w.tape();
  const std::size_t B = in.batch, T = in.steps, d = config_.embedding;
  if (B == 0 || T == 0)
    throw ValidationError("empty batch");
  if (in.tokens.size() != B * T)
    throw DimensionError("token matrix holds " +
                         std::to_string(in.tokens.size()) + " ids, expected " +
                         shape_string({B, T}));
  if (in.mask.rank() != 2 || in.mask.rows() != B || in.mask.cols() != T)
    throw DimensionError("mask has shape " + shape_string(in.mask.shape()) +
                         ", expected " + shape_string({B, T}));
  if (in.aspects.rank() != 2 || in.aspects.rows() != B ||
      in.aspects.cols() != d)
    throw DimensionError("aspect matrix has shape " +
                         shape_string(in.aspects.shape()) + ", expected " +
                         shape_string({B, d}));
  for (std::size_t r = 0; r < B; ++r)
    if (in.mask.at(r, 0) == S{0})
      throw ValidationError("batch row " + std::to_string(r) +
                            " has no real token");

  std::vector<Var<S>> xs;
  xs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor<S> x(Shape{B, d});
    for (std::size_t r = 0; r < B; ++r) {
      const std::size_t id = in.tokens[r * T + t];
      if (id >= embeddings_.rows())
        throw ValidationError("token id " + std::to_string(id) +
                              " outside a vocabulary of " +
                              std::to_string(embeddings_.rows()));
      const auto src = embeddings_.row(id);
      std::copy(src.begin(), src.end(), x.row(r).begin());
    }
    xs.push_back(dropout(tape.constant(std::move(x)), config_.input_dropout,
                         training, rng));
  }

  const Var<S> a = tape.constant(in.aspects);
  const Var<S> h0 = tape.constant(Tensor<S>(Shape{B, config_.hidden}));
  ForwardResult<S> out;
  std::vector<Var<S>> fwd, bwd;
  if (config_.uses_block()) {
    auto enc = encode_sequence<S>(w, block, xs, a, in.mask, h0);
    fwd = std::move(enc.states);
    out.trace = std::move(enc.trace);
    if (config_.bidirectional)
      bwd = encode_sequence<S>(w, reverse_block, xs, a, in.mask, h0, true, false)
              .states;
  } else {
    fwd = gru_encode<S>(w, gru, xs, in.mask, h0);
    if (config_.bidirectional)
      bwd = gru_encode<S>(w, reverse_gru, xs, in.mask, h0, true);
  }

  const double rate = config_.hidden_dropout;
  if (config_.pooling == Pooling::Last) {
    // With carry-through the state at T-1 is the last real one; only the
    // consumed states need dropout masks.
    Var<S> last = dropout(fwd[T - 1], rate, training, rng);
    if (config_.bidirectional)
      last = concat(last, dropout(bwd[0], rate, training, rng), 1);
    out.pooled = last;
  } else {
    std::vector<Var<S>> steps(T);
    for (std::size_t t = 0; t < T; ++t) {
      Var<S> s = config_.bidirectional ? concat(fwd[t], bwd[t], 1) : fwd[t];
      steps[t] = dropout(s, rate, training, rng);
    }
    out.pooled = masked_pool_steps<S>(steps, in.mask,
                                      config_.pooling == Pooling::Max
                                        ? ReduceOp::Max
                                        : ReduceOp::Mean);
  }

  out.recon = matmul(out.pooled, w(w_recon));
  const Var<S> features = config_.ac ? concat(out.pooled, a, 1) : out.pooled;
  out.logits = matmul(features, w(w_cls));
  return out;
}

template <typename S>
Inference<S> AgdtModel<S>::infer(const ModelInput<S> &input) const {
  Tape<S> tape;
  Binding<S> w(tape);
  Rng unused(0);
  auto r = forward(w, input, false, unused);
  return {r.logits.value(), r.recon.value(), r.pooled.value(),
          std::move(r.trace)};
}

template <typename S>
bool same_parameters(const AgdtModel<S> &a, const AgdtModel<S> &b) {
  if (!(a.config() == b.config()) || !(a.embeddings() == b.embeddings()))
    return false;
  std::vector<const Tensor<S> *> pa, pb;
  a.visit([&](const std::string &, const Tensor<S> &t) { pa.push_back(&t); });
  b.visit([&](const std::string &, const Tensor<S> &t) { pb.push_back(&t); });
  if (pa.size() != pb.size())
    return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(*pa[i] == *pb[i]))
      return false;
  return true;
}

namespace {

template <typename S>
Tensor<S> one_hot(std::size_t rows, std::size_t classes,
                  std::span<const std::size_t> gold, const char *what) {
  if (gold.size() != rows)
    throw ValidationError(std::string(what) + ": " +
                          std::to_string(gold.size()) + " targets for " +
                          std::to_string(rows) + " rows");
  Tensor<S> y(Shape{rows, classes});
  for (std::size_t r = 0; r < rows; ++r) {
    if (gold[r] >= classes)
      throw ValidationError(std::string(what) + ": index " +
                            std::to_string(gold[r]) + " out of range for " +
                            std::to_string(classes) + " classes");
    y.at(r, gold[r]) = S{1};
  }
  return y;
}

} // namespace

template <typename S>
Var<S> sentiment_loss(Var<S> logits, std::span<const std::size_t> gold) {
  const auto &v = logits.value();
  return softmax_xent_logits(logits,
                             one_hot<S>(v.rows(), v.cols(), gold, "sentiment"));
}

template <typename S>
Var<S> loss_category_reconstruction(Var<S> recon,
                                    std::span<const std::size_t> gold) {
  const auto &v = recon.value();
  return softmax_xent_logits(
    recon, one_hot<S>(v.rows(), v.cols(), gold, "category reconstruction"));
}

template <typename S>
Var<S> loss_term_reconstruction(
  Var<S> recon, const std::vector<std::vector<std::size_t>> &gold) {
  const auto &v = recon.value();
  if (gold.size() != v.rows())
    throw ValidationError("term reconstruction: " +
                          std::to_string(gold.size()) + " targets for " +
                          std::to_string(v.rows()) + " rows");
  Tensor<S> y(Shape{v.rows(), v.cols()});
  for (std::size_t r = 0; r < gold.size(); ++r)
    for (std::size_t id : gold[r]) {
      if (id >= v.cols())
        throw ValidationError("term reconstruction: word id " +
                              std::to_string(id) + " out of range for " +
                              std::to_string(v.cols()) + " words");
      y.at(r, id) = S{1};
    }
  return sigmoid_xent_logits(recon, y);
}

template <typename S>
Var<S> joint_loss(Var<S> ce, std::optional<Var<S>> recon_loss, double lambda,
                  bool ar) {
  if (!(lambda >= 0.0))
    throw ValidationError("lambda must be non-negative");
  if (!ar || !recon_loss)
    return ce;
  return add(ce, mul_scalar(*recon_loss, static_cast<S>(lambda)));
}

template <typename S> std::size_t predict(std::span<const S> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best])
      best = i;
  return best;
}

template <typename S> std::vector<std::size_t> predict(const Tensor<S> &logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r)
    out[r] = predict<S>(logits.row(r));
  return out;
}

template <typename S>
Reconstruction reconstruct_aspect(std::span<const S> recon, TaskKind kind,
                                  double threshold) {
  Reconstruction out;
  if (kind == TaskKind::Category) {
    out.index = predict<S>(recon);
    return out;
  }
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double x = static_cast<double>(recon[i]);
    const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
    if (p > threshold)
      out.words.push_back(i);
  }
  return out;
}

#define AGDT_INSTANTIATE_MODEL(S)                                              \
  template class AgdtModel<S>;                                                 \
  template bool same_parameters<S>(const AgdtModel<S> &, const AgdtModel<S> &); \
  template Var<S> sentiment_loss<S>(Var<S>, std::span<const std::size_t>);     \
  template Var<S> loss_category_reconstruction<S>(                             \
    Var<S>, std::span<const std::size_t>);                                     \
  template Var<S> loss_term_reconstruction<S>(                                 \
    Var<S>, const std::vector<std::vector<std::size_t>> &);                    \
  template Var<S> joint_loss<S>(Var<S>, std::optional<Var<S>>, double, bool);  \
  template std::size_t predict<S>(std::span<const S>);                         \
  template std::vector<std::size_t> predict<S>(const Tensor<S> &);             \
  template Reconstruction reconstruct_aspect<S>(std::span<const S>, TaskKind,  \
                                                double);

AGDT_INSTANTIATE_MODEL(float)
AGDT_INSTANTIATE_MODEL(double)
AGDT_INSTANTIATE_MODEL(long double)

} // namespace agdt
