#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pgasr/datasets.hpp"
#include "pgasr/model.hpp"

namespace pgasr::reweight {

struct WeightRow {
  std::int64_t sample_id = 0;
  int fold = 0;
  int chunk = 0;
  double u_raw = 0.0;
  double c_raw = 0.0;
  double u_norm = 0.0;
  double c_norm = 0.0;
  double epsilon = 0.0;
  double epsilon_tilde = 0.0;
};

// Per-sample scores keyed by sample id, persisted as CSV with columns
// sample_id,fold,chunk,u_raw,c_raw,u_norm,c_norm,epsilon,epsilon_tilde.
class WeightTable {
 public:
  WeightTable() = default;
  explicit WeightTable(std::vector<WeightRow> rows);

  const std::vector<WeightRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  const WeightRow* find(std::int64_t sample_id) const;
  // Throws when the id has no row.
  double weight_of(std::int64_t sample_id) const;

  std::string to_csv() const;
  static WeightTable from_csv(const std::string& text);
  void write(const std::filesystem::path& path) const;
  static WeightTable read(const std::filesystem::path& path);

 private:
  std::vector<WeightRow> rows_;
  std::vector<std::size_t> order_;  // row indices sorted by sample id
};

// Unbiased variance across the K passes, averaged over nodes and channels.
// Each pass holds batch * per_sample values.
std::vector<double> model_uncertainty(std::span<const std::vector<float>> passes, std::size_t batch);

inline constexpr double kConsistencyGuard = 1e-8;

// c = 1 / (mean over nodes/channels of (y_pred - A_agg x_last)^2 + guard),
// all in flow units; y_pred and x_last are [batch, M, 2].
std::vector<double> physical_consistency(std::span<const float> y_pred, std::span<const float> x_last,
                                         const Eigen::MatrixXd& aggregation, std::size_t batch,
                                         double guard = kConsistencyGuard);

double combine_scores(double u_norm, double c_norm, double alpha, double beta);

// (v - min) / (max - min); 0.5 everywhere for a degenerate range.
std::vector<double> minmax_normalize(std::span<const double> raw);

// softmax(eps) + 1/N over one chunk.
std::vector<double> normalize_weights(std::span<const double> epsilons);

enum class ConsistencyTarget { prediction, label };
enum class Aggregation { row_normalized, binary };

struct WeightConfig {
  double alpha = 0.8;
  double beta = 0.9;
  int mc_passes = 10;
  std::uint64_t seed = 0;
  std::size_t chunk_size = 32;
  std::size_t inference_batch = 64;
  ConsistencyTarget target = ConsistencyTarget::prediction;
  Aggregation aggregation = Aggregation::row_normalized;
};

const Eigen::MatrixXd& aggregation_matrix(const graph::UrbanGraph& graph, Aggregation aggregation);

// Fold d's model scores partition d only. Partitions must be disjoint; they
// are processed in order and rows are emitted in partition order.
WeightTable build_weight_table(std::span<const model::PhysicsGuidedNetwork* const> fold_models,
                               const std::vector<std::vector<const data::FlowSample*>>& partitions,
                               const data::DatasetBundle& bundle, const model::GraphContext& graph,
                               const WeightConfig& config);

struct WeightSummary {
  double mean_tilde_clean = 0.0;
  double mean_tilde_corrupted = 0.0;
  std::size_t n_clean = 0;
  std::size_t n_corrupted = 0;
  std::optional<double> corrupted_to_clean_ratio() const;
};
WeightSummary summarize(const WeightTable& table, const data::DatasetBundle& bundle);

}  // namespace pgasr::reweight
