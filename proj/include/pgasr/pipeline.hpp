#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pgasr/datasets.hpp"
#include "pgasr/metrics.hpp"
#include "pgasr/model.hpp"
#include "pgasr/reweighting.hpp"

namespace pgasr::pipeline {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  double lambda_balance = 0.5;
  int folds = 2;
  double alpha = 0.8;
  double beta = 0.9;
  int mc_passes = 10;
  int patience_pretrain = 15;
  int patience_retrain = 30;
  int max_epochs = 200;
  std::uint64_t seed = 0;
  // Global gradient-norm clip; <= 0 disables it.
  double clip_norm = 5.0;
  std::size_t inference_batch = 64;
  reweight::ConsistencyTarget consistency_target = reweight::ConsistencyTarget::prediction;
  reweight::Aggregation aggregation = reweight::Aggregation::row_normalized;

  void validate() const;
  nlohmann::json to_json() const;
  reweight::WeightConfig weight_config() const;
};

struct PhaseRecord {
  std::string phase;  // pretrain_fold_<d>, infer_weights, retrain or train
  int best_epoch = 0;
  double best_val_mae = 0.0;
  int epochs_run = 0;
  double wall_time_s = 0.0;
  std::string checkpoint;
  bool resumed = false;

  nlohmann::json to_json() const;
  static PhaseRecord from_json(const nlohmann::json& j);
};

using Partition = std::vector<const data::FlowSample*>;

// Contiguous chronological parts whose sizes differ by at most one; the
// leading parts take the remainder.
std::vector<Partition> split_folds(std::span<const data::FlowSample> train, int folds);

// Everything in train except partition d.
Partition warmup_set(const std::vector<Partition>& parts, std::size_t d);

// sum_i eps_i * (lambda * mean_m |dy_in| + (1 - lambda) * mean_m |dy_out|)
// in flow units. pred and target are standardized [B, M, 2].
ag::Tensor weighted_loss(const ag::Tensor& target, const ag::Tensor& pred, std::span<const float> epsilon_tilde,
                         double lambda, const data::Standardizer& standardizer);
// Same with every weight equal to one.
ag::Tensor unweighted_loss(const ag::Tensor& target, const ag::Tensor& pred, double lambda,
                           const data::Standardizer& standardizer);

// Adaptive-moment optimizer with default moment coefficients.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(model::ParameterStore& params);
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Scales every gradient so the global L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_gradients(model::ParameterStore& params, double max_norm);

// One optimizer step on one batch. Weights, when given, align with the batch.
class Trainer {
 public:
  Trainer(model::PhysicsGuidedNetwork& net, const model::GraphContext& graph, const data::Standardizer& standardizer,
          const TrainConfig& config);
  // Returns the loss value before the update.
  double step(const model::Batch& batch, std::span<const float> weights, std::mt19937_64& dropout_rng);

 private:
  model::PhysicsGuidedNetwork& net_;
  const model::GraphContext& graph_;
  const data::Standardizer& standardizer_;
  TrainConfig config_;
  Adam adam_;
};

// Deterministic (dropout-off) predictions destandardized to flow units,
// concatenated in sample order, paired with the matching targets.
struct Predictions {
  std::vector<float> y_true;
  std::vector<float> y_pred;
};
Predictions predict(const model::PhysicsGuidedNetwork& net, std::span<const data::FlowSample* const> samples,
                    const data::DatasetBundle& bundle, const model::GraphContext& graph, std::size_t batch_size = 64);
eval::MetricSet evaluate(const model::PhysicsGuidedNetwork& net, const std::vector<data::FlowSample>& samples,
                         const data::DatasetBundle& bundle, const model::GraphContext& graph,
                         double mask_threshold = eval::kDefaultMapeMask);

struct TrainOutcome {
  model::ModelState best;
  int best_epoch = 0;
  double best_val_mae = 0.0;
  int epochs_run = 0;
  std::vector<double> val_history;
  std::vector<double> train_loss_history;
};

// Trains a freshly initialized network with early stopping on the mean
// in/out validation MAE. weights == nullptr trains with L_p.
TrainOutcome train_network(const model::ModelConfig& model_config, const data::DatasetBundle& bundle,
                           const Partition& train_set, const model::GraphContext& graph, const TrainConfig& config,
                           int patience, std::uint64_t init_seed, std::uint64_t shuffle_seed,
                           const reweight::WeightTable* weights, const std::string& label);

TrainOutcome pretrain_fold(std::size_t d, const std::vector<Partition>& parts, const model::ModelConfig& model_config,
                           const data::DatasetBundle& bundle, const model::GraphContext& graph,
                           const TrainConfig& config);

// Stable seed for a named phase of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0);
enum SeedTag : std::uint64_t { kFoldInit = 1, kFoldShuffle = 2, kRetrainInit = 3, kRetrainShuffle = 4, kWeights = 5 };

struct RunResult {
  model::ModelState model;
  std::optional<reweight::WeightTable> weights;
  std::vector<PhaseRecord> records;
  eval::MetricSet test_metrics;
  eval::MetricSet val_metrics;
  // Sample ids per fold partition; empty for single-phase runs.
  std::vector<std::vector<std::int64_t>> fold_ids;
};

// Algorithm: split the training data into D chronological parts, pretrain
// one network per held-out part, score each part with its held-out network,
// then retrain a fresh network on all training data with the weighted loss.
// With a run directory, completed phases are checkpointed there and reused
// on rerun.
RunResult run_pgasr(const data::DatasetBundle& bundle, const model::ModelConfig& model_config,
                    const TrainConfig& config, const std::optional<std::filesystem::path>& run_dir = std::nullopt);

// Single-phase L_p training on all training data (PN-dis or PN-con baseline).
RunResult train_pn_only(const data::DatasetBundle& bundle, const model::ModelConfig& model_config,
                        const TrainConfig& config, const std::optional<std::filesystem::path>& run_dir = std::nullopt);

// Chebyshev operator for a bundle's graph at the model's order.
model::GraphContext graph_context(const data::DatasetBundle& bundle, const model::ModelConfig& model_config);

// Hex digest of the ordered sample ids of every fold.
std::string fold_id_hash(const std::vector<std::vector<std::int64_t>>& fold_ids);

}  // namespace pgasr::pipeline
