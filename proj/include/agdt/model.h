// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.h
 * @brief  AGDT sentiment model: frozen embeddings, aspect-guided encoder,
 *         pooling, aspect reconstruction head and sentiment classifier.
 */
#ifndef AGDT_MODEL_H
#define AGDT_MODEL_H

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <agdt/autodiff.h>
#include <agdt/cells.h>
#include <agdt/random.h>
#include <agdt/tensor.h>
#include <agdt/types.h>

namespace agdt {

enum class Pooling { Last, Max, Mean };

/// Encoder used when the aspect gate is ablated.
enum class Baseline {
  Gru,           ///< stacked conventional GRU
  DeepTransition ///< linear-transformation GRU head with T-GRU transitions
};

std::string to_string(Pooling p);
std::string to_string(Baseline b);
Pooling parse_pooling(const std::string &s);
Baseline parse_baseline(const std::string &s);

struct ModelConfig {
  std::size_t hidden = 300;
  std::size_t embedding = 300; ///< d_x = d_a
  std::size_t depth = 4;       ///< T-GRUs after the A-GRU
  TaskKind task = TaskKind::Category;
  std::size_t labels = 4;
  std::size_t recon_size = 1; ///< C1 or C2
  double lambda = 0.4;
  bool ac = true; ///< aspect concatenation before the classifier
  bool ag = true; ///< aspect gate in the encoder
  bool ar = true; ///< aspect reconstruction objective
  Baseline baseline = Baseline::Gru;
  double input_dropout = 0.5;
  double hidden_dropout = 0.3;
  Pooling pooling = Pooling::Last;
  bool bidirectional = false;

  /// All violated constraints, empty when valid.
  std::vector<std::string> problems() const;
  /// Throws ValidationError listing every problem.
  void validate() const;

  std::size_t rep_size() const { return bidirectional ? 2 * hidden : hidden; }
  std::size_t classifier_input() const {
    return ac ? rep_size() + embedding : rep_size();
  }
  bool uses_block() const { return ag || baseline == Baseline::DeepTransition; }

  bool operator==(const ModelConfig &) const = default;
};

/// One batch as the model sees it. Rows are padded to T with `mask` zero.
template <typename S> struct ModelInput {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> tokens; ///< [batch x steps], row-major
  Tensor<S> mask;                  ///< [batch x steps]
  Tensor<S> aspects;               ///< [batch x d_a]
};

template <typename S> struct ForwardResult {
  Var<S> logits;                     ///< [B x C]
  Var<S> recon;                      ///< [B x C_r]
  Var<S> pooled;                     ///< [B x d_rep]
  std::optional<GateTrace<S>> trace; ///< forward direction only
};

/// Plain-tensor view of a forward pass.
template <typename S> struct Inference {
  Tensor<S> logits;
  Tensor<S> recon;
  Tensor<S> pooled;
  std::optional<GateTrace<S>> trace;
};

template <typename S> class AgdtModel {
public:
  AgdtModel() = default;

  /// Glorot-initialised parameters around a frozen embedding table.
  static AgdtModel create(const ModelConfig &config, Tensor<S> embeddings,
                          Rng &rng);
  /// Same shapes with every trainable parameter zero.
  static AgdtModel zeros(const ModelConfig &config, Tensor<S> embeddings);

  const ModelConfig &config() const { return config_; }
  const Tensor<S> &embeddings() const { return embeddings_; }

  /// Visit trainable parameters in a fixed order with stable names.
  template <typename Fn> void visit(Fn &&fn) {
    visit_impl(*this, std::forward<Fn>(fn));
  }
  template <typename Fn> void visit(Fn &&fn) const {
    visit_impl(*this, std::forward<Fn>(fn));
  }
  std::size_t parameter_count() const;

  /// Mean of the embedding rows of `ids`.
  Tensor<S> embed_aspect(std::span<const std::size_t> ids) const;

  /// Build the graph for one batch. Parameters become leaves via `w`.
  ForwardResult<S> forward(Binding<S> &w, const ModelInput<S> &input,
                           bool training, Rng &rng) const;

  /// Eval-mode forward on a private tape.
  Inference<S> infer(const ModelInput<S> &input) const;

  DeepTransitionBlock<S> block, reverse_block;
  GruStack<S> gru, reverse_gru;
  Tensor<S> w_recon; ///< [d_rep x C_r]
  Tensor<S> w_cls;   ///< [(d_rep + d_a) x C] or [d_rep x C]

private:
  template <typename Self, typename Fn> static void visit_impl(Self &m, Fn &&fn) {
    if (m.config_.uses_block()) {
      DeepTransitionBlock<S>::visit(m.block, "enc.", fn);
      if (m.config_.bidirectional)
        DeepTransitionBlock<S>::visit(m.reverse_block, "enc_rev.", fn);
    } else {
      GruStack<S>::visit(m.gru, "enc.", fn);
      if (m.config_.bidirectional)
        GruStack<S>::visit(m.reverse_gru, "enc_rev.", fn);
    }
    fn(std::string("w_recon"), m.w_recon);
    fn(std::string("w_cls"), m.w_cls);
  }

  ModelConfig config_;
  Tensor<S> embeddings_;
};

/// Summed softmax cross-entropy of [B x C] logits against gold indices.
template <typename S>
Var<S> sentiment_loss(Var<S> logits, std::span<const std::size_t> gold);

/// Summed softmax cross-entropy over the C1 predefined aspects.
template <typename S>
Var<S> loss_category_reconstruction(Var<S> recon,
                                    std::span<const std::size_t> gold);

/// Summed sigmoid cross-entropy over the C2 term words.
template <typename S>
Var<S> loss_term_reconstruction(Var<S> recon,
                                const std::vector<std::vector<std::size_t>> &gold);

/// J = CE + lambda * L summed over the batch; CE alone when AR is off or
/// no reconstruction loss is given.
template <typename S>
Var<S> joint_loss(Var<S> ce, std::optional<Var<S>> recon_loss, double lambda,
                  bool ar);

/// Argmax of one row, ties to the lowest index.
template <typename S> std::size_t predict(std::span<const S> logits);
/// Row-wise argmax of a [B x C] matrix.
template <typename S> std::vector<std::size_t> predict(const Tensor<S> &logits);

struct Reconstruction {
  std::size_t index = 0;          ///< category kind
  std::vector<std::size_t> words; ///< term kind, ascending
};

template <typename S>
Reconstruction reconstruct_aspect(std::span<const S> recon, TaskKind kind,
                                  double threshold = 0.5);

/// Same config, embeddings and bit-identical trainable parameters.
template <typename S>
bool same_parameters(const AgdtModel<S> &a, const AgdtModel<S> &b);

} // namespace agdt

#endif // AGDT_MODEL_H
