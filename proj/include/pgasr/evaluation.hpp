#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pgasr/datasets.hpp"
#include "pgasr/metrics.hpp"
#include "pgasr/model.hpp"
#include "pgasr/pipeline.hpp"
#include "pgasr/reweighting.hpp"

namespace pgasr::eval {

inline constexpr int kReportSchemaVersion = 1;

// What one experiment cell trains.
struct MethodSpec {
  std::string name;  // label used in tables
  bool reweighted = true;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<int> folds;
};
MethodSpec method_pgasr();
MethodSpec method_pn();

struct CellResult {
  std::string method;
  std::uint64_t seed = 0;
  double noise_level = 0.0;
  std::string axis;  // sweep axis, empty otherwise
  double axis_value = 0.0;
  std::optional<MetricSet> test;
  std::optional<MetricSet> val;
  std::optional<reweight::WeightSummary> weights;
  std::string fold_hash;  // empty for single-phase methods
  std::string error;      // non-empty when the cell failed
  double wall_time_s = 0.0;

  bool ok() const { return error.empty() && test.has_value(); }
  nlohmann::json to_json() const;
};

struct ExperimentReport {
  std::string kind;  // train, noise, ablation or sweep
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::vector<CellResult> cells;

  std::size_t failed_cells() const;
  // Mean and sample std (absent below two seeds) per method/level/axis value.
  nlohmann::json aggregates() const;
  // Lowest mean MAE cell per sweep axis.
  nlohmann::json best_by_axis() const;
  nlohmann::json to_json(bool include_timings = true) const;
  // Deterministic portion: everything except wall-clock timings.
  std::string payload() const;
  void write(const std::filesystem::path& file) const;
};

struct ExperimentOptions {
  model::ModelConfig model;
  pipeline::TrainConfig train;  // seed is overridden per cell
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  int jobs = 1;
  data::NoiseOptions noise;
  // Keeps per-cell run directories (checkpoints, weight tables) when set.
  std::optional<std::filesystem::path> cell_root;
};

// Trains one method on the bundle with the given seed and evaluates on the
// clean test split.
CellResult run_cell(const data::DatasetBundle& bundle, const MethodSpec& method, const ExperimentOptions& options,
                    std::uint64_t seed, const std::optional<std::filesystem::path>& run_dir = std::nullopt);

// Noise is injected into the training split only; level 0 leaves the bundle
// clean. Methods default to {PN, P-GASR}.
ExperimentReport noise_robustness_experiment(const data::DatasetBundle& bundle, const std::vector<double>& levels,
                                             const ExperimentOptions& options,
                                             std::vector<MethodSpec> methods = {});

// P-GASR, w/o MU (alpha = 0), w/o PC (beta = 0) and PN under identical seeds.
ExperimentReport ablation_experiment(const data::DatasetBundle& bundle, const ExperimentOptions& options);

struct SweepGrid {
  std::vector<double> alphas{0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> betas{0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> folds{2, 3, 4, 5};
  // Subset of {alpha, beta, D}; one axis varies at a time.
  std::vector<std::string> axes{"alpha", "beta", "D"};
};
ExperimentReport hyperparameter_sweep(const data::DatasetBundle& bundle, const SweepGrid& grid,
                                      const ExperimentOptions& options);

// Plot-ready flat tables.
void write_noise_table(const ExperimentReport& report, const std::filesystem::path& file);
void write_ablation_table(const ExperimentReport& report, const std::filesystem::path& file);
void write_sweep_table(const ExperimentReport& report, const std::filesystem::path& file);

// Seeded noise stream for a (seed, level) cell, shared by every method.
std::uint64_t noise_seed(std::uint64_t seed, double level);

}  // namespace pgasr::eval
