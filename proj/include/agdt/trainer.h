// SPDX-License-Identifier: Apache-2.0
/**
 * @file   trainer.h
 * @brief  Adam with global-norm clipping, the training loop, evaluation
 *         metrics and the multi-seed experiment harness.
 */
#ifndef AGDT_TRAINER_H
#define AGDT_TRAINER_H

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include <agdt/corpus.h>
#include <agdt/model.h>

namespace agdt {

/// Training hit a non-finite loss or a seed failed.
class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// The model lacks what an operation needs, e.g. gates without AG.
class CapabilityError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S> struct AdamState {
  AdamConfig config;
  std::vector<Tensor<S>> m, v;
  std::uint64_t t = 0;
};

/// Zero moments shaped like `params`.
template <typename S>
AdamState<S> adam_init(std::span<Tensor<S> *const> params,
                       const AdamConfig &config = {});

/// One bias-corrected update of every tensor in `params`.
template <typename S>
void adam_step(std::span<Tensor<S> *const> params,
               std::span<const Tensor<S>> grads, AdamState<S> &state);

/// Global L2 norm over all entries of all tensors.
template <typename S> double global_norm(std::span<const Tensor<S>> grads);

/// Rescale so the global norm is at most `max_norm`. Returns the norm
/// before clipping.
template <typename S>
double clip_global_norm(std::span<Tensor<S>> grads, double max_norm);

struct TrainConfig {
  std::size_t epochs = 20;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double clip_norm = 5.0;
  AdamConfig adam;
  std::size_t token_budget = 4096;
  /// Evaluate test accuracy every this many epochs; 0 only at the end.
  std::size_t eval_every = 1;
  /// Stop when the epoch loss has not improved for this many epochs; 0 off.
  std::size_t patience = 0;
  /// Fraction of hard training instances held out as a development set.
  double dev_fraction = 0.0;
  std::size_t jobs = 1;

  std::vector<std::string> problems() const;
  void validate() const;
};

/// Build the model input of one batch; aspects are mean embeddings.
template <typename S>
ModelInput<S> batch_input(const AgdtModel<S> &model, const Batch &batch,
                          const std::vector<Encoded> &rows);

struct EpochStats {
  std::size_t epoch = 0; ///< 1-based
  double loss = 0.0;     ///< mean joint loss per instance
  double grad_norm = 0.0; ///< largest pre-clip norm in the epoch
};

using EpochHook = std::function<void(const EpochStats &)>;

/**
 * Train in place. Each epoch reshuffles the batches from `seed`, runs a
 * training-mode forward pass per batch, averages the joint loss over the
 * batch instances, clips the gradient and applies Adam. Embeddings are
 * never updated.
 */
std::vector<EpochStats> train(AgdtModel<float> &model,
                              const std::vector<Encoded> &data,
                              const TrainConfig &config, std::uint64_t seed,
                              const EpochHook &hook = {});

struct Prediction {
  std::size_t label = 0;
  Reconstruction recon;
};

/// Eval-mode predictions in input order.
std::vector<Prediction> predict_all(const AgdtModel<float> &model,
                                    const std::vector<Encoded> &data,
                                    std::size_t token_budget = 4096);

/// Fraction of rows whose predicted label equals the gold label; 0 when
/// `data` is empty.
double evaluate_accuracy(const AgdtModel<float> &model,
                         const std::vector<Encoded> &data,
                         std::size_t token_budget = 4096);

/// Whether one reconstruction is correct: the gold category, or every gold
/// term word recovered.
bool reconstruction_correct(const Encoded &row, const Reconstruction &r,
                            TaskKind kind);

double evaluate_reconstruction(const AgdtModel<float> &model,
                               const std::vector<Encoded> &data, TaskKind kind,
                               std::size_t token_budget = 4096);

struct SeedMetrics {
  std::uint64_t seed = 0;
  double ds_accuracy = 0.0;
  double hds_accuracy = 0.0;
  double recon_accuracy = 0.0;
  std::optional<double> dev_accuracy;
  std::vector<EpochStats> epochs;
  std::vector<std::pair<std::size_t, double>> test_accuracy; ///< per epoch
};

struct Summary {
  double mean = 0.0;
  std::optional<double> std; ///< sample std, absent with one seed
};

/// Mean and n-1 standard deviation.
Summary summarize(std::span<const double> values);

struct MetricsReport {
  std::string dataset;
  std::string config_digest;
  std::vector<SeedMetrics> seeds;
  Summary ds, hds, recon;
  std::optional<Summary> dev;

  nlohmann::json to_json() const;
};

/// A trained model with its vocabulary.
struct TrainedRun {
  SeedMetrics metrics;
  AgdtModel<float> model;
  Vocab vocab;
  std::vector<std::string> recon_targets;
};

struct Experiment {
  DatasetBundle data;
  EmbeddingFile embeddings;
  ModelConfig model;
  TrainConfig train;
  std::string dataset = "custom";
  std::string config_digest;
  /// Called once per finished seed, possibly from worker threads.
  std::function<void(const TrainedRun &)> on_run;
  /// Called after every epoch with the test accuracy when evaluated.
  std::function<void(std::uint64_t seed, const EpochStats &,
                     std::optional<double> test_accuracy)>
      on_epoch;
};

/// Reconstruction targets of the training split: sorted categories or
/// sorted term words.
std::vector<std::string> recon_targets(const DatasetBundle &data);

/// Fill task-dependent model fields (labels, recon size, embedding width).
ModelConfig resolve_model_config(ModelConfig model, const DatasetBundle &data,
                                 std::size_t embedding_dim);

/// Train and evaluate one seed.
TrainedRun run_seed(const Experiment &e, std::uint64_t seed);

/// One run per seed, `jobs` at a time; failures name their seed.
MetricsReport run_experiment(const Experiment &e);

enum class SweepAxis { Depth, Lambda };
std::string to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view s);
/// depth 1..6, or lambda 0.1..1.0 in steps of 0.1.
std::vector<double> sweep_values(SweepAxis a);

struct SweepRow {
  double value = 0.0;
  MetricsReport report;
};

std::vector<SweepRow> sweep(SweepAxis axis, const Experiment &e);
nlohmann::json sweep_to_json(SweepAxis axis, const std::vector<SweepRow> &rows);

struct GateRecord {
  std::string token;
  double gate_mean = 0.0;
  std::vector<double> gate;

  nlohmann::json to_json(bool with_vector) const;
};

/// Per-token aspect-gate activations of the forward direction.
std::vector<GateRecord> inspect_gates(const AgdtModel<float> &model,
                                      const std::vector<std::string> &words,
                                      const std::vector<std::size_t> &tokens,
                                      const std::vector<std::size_t> &aspect);

} // namespace agdt

#endif // AGDT_TRAINER_H
